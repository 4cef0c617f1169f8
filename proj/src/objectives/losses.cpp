#include "urbanclip/objectives/losses.hpp"

#include <numeric>

#include "urbanclip/errors.hpp"

namespace urbanclip::objectives {

using nn::Tensor;
using nn::Var;

void LossWeights::validate() const {
  if (con < 0 || lm < 0) throw ConfigError("loss weights must be non-negative");
  if (con == 0 && lm == 0) throw ConfigError("loss weights cannot both be zero");
}

template <class T>
Var<T> contrastive_from_similarity(const Var<T>& sim) {
  const std::size_t m = sim.value().rows();
  if (sim.value().rank() != 2 || sim.value().cols() != m || m == 0) {
    throw ShapeError("contrastive loss needs a square similarity matrix, got " +
                     nn::shape_str(sim.shape()));
  }
  if (!nn::all_finite(sim.value())) throw NumericError("non-finite similarity in contrastive loss");
  std::vector<int> diag(m);
  std::iota(diag.begin(), diag.end(), 0);
  return nn::add(nn::cross_entropy(sim, diag), nn::cross_entropy(nn::transpose(sim), diag));
}

template <class T>
Var<T> contrastive_loss(const Var<T>& image_pooled, const Var<T>& text_cls,
                        const Var<T>& log_temp, double temperature) {
  if (image_pooled.shape() != text_cls.shape()) {
    throw ShapeError("contrastive loss: image " + nn::shape_str(image_pooled.shape()) +
                     " vs text " + nn::shape_str(text_cls.shape()));
  }
  Var<T> sim = nn::matmul_nt(image_pooled, text_cls);
  if (log_temp) {
    sim = nn::scale_by_exp_neg(sim, log_temp);
  } else if (temperature != 1.0) {
    sim = nn::scale(sim, T(1.0 / temperature));
  }
  return contrastive_from_similarity(sim);
}

template <class T>
Var<T> lm_loss(const Var<T>& logits, const std::vector<int>& targets) {
  return nn::cross_entropy(logits, targets);
}

template <class T>
LossComponents<T> total_loss(const model::UrbanClip<T>& net,
                             const model::ImageEncoding<T>& image,
                             const model::TextEncoding<T>& text,
                             const model::MultimodalOutput<T>& mm,
                             const model::PackedText& packed, const LossWeights& weights) {
  weights.validate();
  LossComponents<T> out;
  out.con = contrastive_loss(image.pooled, text.cls, net.log_temperature(),
                             net.config().temperature);
  out.lm = lm_loss(mm.logits, packed.lm_targets);
  out.total = nn::add_scaled(out.con, T(weights.con), out.lm, T(weights.lm));
  return out;
}

template <class T>
LossComponents<T> forward_loss(const model::UrbanClip<T>& net, const Tensor<T>& patches,
                               const model::PackedText& packed, const LossWeights& weights) {
  const auto image = net.encode_image(patches, packed.batch());
  const auto text = net.encode_text(packed);
  const auto mm = net.decode(text, image, packed);
  return total_loss(net, image, text, mm, packed, weights);
}

template <class T>
Var<T> triplet_loss(const Var<T>& anchor, const Var<T>& positive, const Var<T>& negative,
                    double margin) {
  const Var<T> gap = nn::sub(nn::row_norms(nn::sub(anchor, positive)),
                             nn::row_norms(nn::sub(anchor, negative)));
  const Var<T> m(Tensor<T>(gap.shape(), T(margin)));
  return nn::mean(nn::relu(nn::add(gap, m)));
}

template <class T>
Var<T> text_simclr_loss(const Var<T>& z, const std::vector<std::uint8_t>& positive,
                        double temperature) {
  const std::size_t m = z.value().rows();
  if (positive.size() != m * m) throw ShapeError("positive mask must be m x m");
  const Var<T> zn = nn::l2_normalize_rows(z);
  Tensor<T> self_mask(nn::Shape{m, m});
  for (std::size_t i = 0; i < m; ++i) self_mask.at(i, i) = T(-1e9);
  const Var<T> sim = nn::add(nn::scale(nn::matmul_nt(zn, zn), T(1.0 / temperature)),
                             Var<T>(std::move(self_mask)));
  Var<T> sum;
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<int> targets;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i && positive[i * m + j]) targets.push_back(int(j));
    }
    if (targets.empty()) continue;
    const Var<T> term =
        nn::cross_entropy(nn::gather_rows(sim, std::vector<std::size_t>(targets.size(), i)), targets);
    sum = sum ? nn::add(sum, term) : term;
    ++anchors;
  }
  if (anchors == 0) throw DomainError("text_simclr_loss: no anchor has a positive");
  return nn::scale(sum, T(1.0 / double(anchors)));
}

template <class T>
Var<T> autoencoder_loss(const Var<T>& reconstruction, const Tensor<T>& image) {
  return nn::mse(reconstruction, image);
}

#define URBANCLIP_INSTANTIATE(T)                                                          \
  template Var<T> contrastive_from_similarity(const Var<T>&);                            \
  template Var<T> contrastive_loss(const Var<T>&, const Var<T>&, const Var<T>&, double); \
  template Var<T> lm_loss(const Var<T>&, const std::vector<int>&);                       \
  template LossComponents<T> total_loss(                                                 \
      const model::UrbanClip<T>&, const model::ImageEncoding<T>&,                        \
      const model::TextEncoding<T>&, const model::MultimodalOutput<T>&,                  \
      const model::PackedText&, const LossWeights&);                                     \
  template LossComponents<T> forward_loss(const model::UrbanClip<T>&, const Tensor<T>&,  \
                                          const model::PackedText&, const LossWeights&); \
  template Var<T> triplet_loss(const Var<T>&, const Var<T>&, const Var<T>&, double);     \
  template Var<T> text_simclr_loss(const Var<T>&, const std::vector<std::uint8_t>&,      \
                                   double);                                              \
  template Var<T> autoencoder_loss(const Var<T>&, const Tensor<T>&);

URBANCLIP_INSTANTIATE(float)
URBANCLIP_INSTANTIATE(double)

}  // namespace urbanclip::objectives
