#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "urbanclip/model/urbanclip.hpp"
#include "urbanclip/nn/ops.hpp"

namespace urbanclip::objectives {

struct LossWeights {
  double con = 1.0;
  double lm = 1.0;
  void validate() const;  // non-negative, not both zero
};

// Symmetric InfoNCE over a similarity matrix: mean over rows of the
// image-to-text cross-entropy plus mean over columns of the reverse.
template <class T>
nn::Var<T> contrastive_from_similarity(const nn::Var<T>& sim);

// S = img * txt^T scaled by exp(-log_temp) when log_temp is defined, else by
// 1/temperature. NumericError on a non-finite similarity.
template <class T>
nn::Var<T> contrastive_loss(const nn::Var<T>& image_pooled, const nn::Var<T>& text_cls,
                            const nn::Var<T>& log_temp, double temperature = 1.0);

// Mean next-token negative log-likelihood over targets >= 0. DomainError when
// every position is masked.
template <class T>
nn::Var<T> lm_loss(const nn::Var<T>& logits, const std::vector<int>& targets);

template <class T>
struct LossComponents {
  nn::Var<T> total;
  nn::Var<T> con;
  nn::Var<T> lm;
};

// Both terms from one shared forward pass.
template <class T>
LossComponents<T> total_loss(const model::UrbanClip<T>& net,
                             const model::ImageEncoding<T>& image,
                             const model::TextEncoding<T>& text,
                             const model::MultimodalOutput<T>& mm,
                             const model::PackedText& packed, const LossWeights& weights);

// Runs encode_image, encode_text and decode exactly once, then total_loss.
template <class T>
LossComponents<T> forward_loss(const model::UrbanClip<T>& net, const nn::Tensor<T>& patches,
                               const model::PackedText& packed, const LossWeights& weights);

// Mean over rows of max(0, |a-p| - |a-n| + margin).
template <class T>
nn::Var<T> triplet_loss(const nn::Var<T>& anchor, const nn::Var<T>& positive,
                        const nn::Var<T>& negative, double margin);

// Multi-positive NT-Xent over cosine similarities of `z` rows, excluding
// self-pairs. positive[i * m + j] marks j as a positive of anchor i. Anchors
// without positives are skipped; DomainError if none remain.
template <class T>
nn::Var<T> text_simclr_loss(const nn::Var<T>& z, const std::vector<std::uint8_t>& positive,
                            double temperature = 0.5);

// Mean squared reconstruction error.
template <class T>
nn::Var<T> autoencoder_loss(const nn::Var<T>& reconstruction, const nn::Tensor<T>& image);

}  // namespace urbanclip::objectives
