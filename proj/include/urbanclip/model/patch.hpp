#pragma once

#include "urbanclip/corpus/region.hpp"
#include "urbanclip/nn/tensor.hpp"

namespace urbanclip::model {

// Non-overlapping P x P blocks in row-major block order, each flattened
// channel-last: [m1, P*P*C].
template <class T>
nn::Tensor<T> patchify(const corpus::ImageTensor& image, int patch);

template <class T>
corpus::ImageTensor unpatchify(const nn::Tensor<T>& patches, int height, int width,
                               int patch, int channels = 3);

}  // namespace urbanclip::model
