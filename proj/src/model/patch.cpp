#include "urbanclip/model/patch.hpp"

#include "urbanclip/errors.hpp"

namespace urbanclip::model {

template <class T>
nn::Tensor<T> patchify(const corpus::ImageTensor& image, int patch) {
  const int H = int(image.height), W = int(image.width), C = int(image.channels);
  if (patch <= 0 || H % patch || W % patch) {
    throw ConfigError("patchify: image " + std::to_string(H) + "x" + std::to_string(W) +
                      " not divisible by patch " + std::to_string(patch));
  }
  if (image.data.size() != std::size_t(H) * W * C) {
    throw ShapeError("patchify: image data does not match its header");
  }
  const int gh = H / patch, gw = W / patch, pd = patch * patch * C;
  nn::Tensor<T> out(nn::Shape{std::size_t(gh * gw), std::size_t(pd)});
  for (int bi = 0; bi < gh; ++bi) {
    for (int bj = 0; bj < gw; ++bj) {
      T* dst = out.row(std::size_t(bi * gw + bj));
      for (int y = 0; y < patch; ++y) {
        const float* src = image.data.data() + (std::size_t(bi * patch + y) * W + bj * patch) * C;
        for (int k = 0; k < patch * C; ++k) *dst++ = T(src[k]);
      }
    }
  }
  return out;
}

template <class T>
corpus::ImageTensor unpatchify(const nn::Tensor<T>& patches, int height, int width,
                               int patch, int channels) {
  if (patch <= 0 || height % patch || width % patch) {
    throw ConfigError("unpatchify: size not divisible by patch");
  }
  const int gh = height / patch, gw = width / patch;
  if (patches.rows() != std::size_t(gh * gw) ||
      patches.cols() != std::size_t(patch * patch * channels)) {
    throw ShapeError("unpatchify: got " + nn::shape_str(patches.shape()));
  }
  corpus::ImageTensor img;
  img.height = std::uint32_t(height);
  img.width = std::uint32_t(width);
  img.channels = std::uint32_t(channels);
  img.data.resize(std::size_t(height) * width * channels);
  for (int bi = 0; bi < gh; ++bi) {
    for (int bj = 0; bj < gw; ++bj) {
      const T* src = patches.row(std::size_t(bi * gw + bj));
      for (int y = 0; y < patch; ++y) {
        float* dst = img.data.data() + (std::size_t(bi * patch + y) * width + bj * patch) * channels;
        for (int k = 0; k < patch * channels; ++k) dst[k] = float(*src++);
      }
    }
  }
  return img;
}

template nn::Tensor<float> patchify(const corpus::ImageTensor&, int);
template nn::Tensor<double> patchify(const corpus::ImageTensor&, int);
template corpus::ImageTensor unpatchify(const nn::Tensor<float>&, int, int, int, int);
template corpus::ImageTensor unpatchify(const nn::Tensor<double>&, int, int, int, int);

}  // namespace urbanclip::model
