#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "urbanclip/corpus/region.hpp"
#include "urbanclip/model/config.hpp"
#include "urbanclip/nn/ops.hpp"
#include "urbanclip/nn/parameters.hpp"
#include "urbanclip/textpipe/vocab.hpp"

namespace urbanclip::model {

// Names and shapes of every learnable tensor for a config, in creation order.
std::vector<std::pair<std::string, nn::Shape>> parameter_shapes(const ModelConfig& config);

// Truncated normal (0.02) for weights, embeddings and queries; zeros for
// biases; ones for layer-norm gains.
template <class T>
nn::ParameterSet<T> init_parameters(const ModelConfig& config, std::uint64_t seed);

// Parameters that produce the pooled image embedding (everything the frozen
// encoder needs at inference).
bool is_image_encoder_parameter(const std::string& name);

// Text sequences packed back to back without padding.
struct PackedText {
  std::vector<int> ids;
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> offsets;
  // Next-token target per packed position; -1 where excluded (the [CLS]
  // target after [EOS] and the [CLS] position itself).
  std::vector<int> lm_targets;

  std::size_t batch() const { return lengths.size(); }
  std::size_t total() const { return ids.size(); }
  static PackedText pack(const std::vector<textpipe::TokenSequence>& seqs);
};

template <class T>
nn::Tensor<T> stack_patches(const std::vector<const corpus::ImageTensor*>& images, int patch);

template <class T>
struct ImageEncoding {
  std::size_t batch = 0;
  nn::Var<T> image_seq;    // [batch * (m1 + 1), d], [CLS] first per image
  nn::Var<T> pooled;       // [batch, proj]
  nn::Var<T> caption_seq;  // [batch * m1, d]
};

template <class T>
struct TextEncoding {
  nn::Var<T> states;  // [total, d] after the unimodal layers
  nn::Var<T> cls;     // [batch, proj]
};

template <class T>
struct MultimodalOutput {
  nn::Var<T> states;  // [total, d]
  nn::Var<T> logits;  // [total, vocab]
};

// Submodule invocation counts, for asserting a single forward per step.
struct ForwardCounters {
  std::atomic<long> image{0};
  std::atomic<long> text{0};
  std::atomic<long> multimodal{0};
  void reset() { image = 0; text = 0; multimodal = 0; }
};

template <class T>
class UrbanClip {
 public:
  UrbanClip(ModelConfig config, std::uint64_t seed);
  // Throws ShapeError when `params` does not match the config.
  UrbanClip(ModelConfig config, nn::ParameterSet<T> params);

  const ModelConfig& config() const { return config_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }
  ForwardCounters& counters() const { return counters_; }

  // patches: [batch * m1, patch_dim] from stack_patches.
  ImageEncoding<T> encode_image(const nn::Tensor<T>& patches, std::size_t batch) const;
  TextEncoding<T> encode_text(const PackedText& text) const;
  MultimodalOutput<T> decode(const TextEncoding<T>& text, const ImageEncoding<T>& image,
                             const PackedText& packed) const;

  // The learnable "log_temp" scalar; undefined when the temperature is fixed.
  nn::Var<T> log_temperature() const;

 private:
  nn::Var<T> block(const nn::Var<T>& x, const std::string& prefix,
                   const nn::AttentionLayout& layout) const;
  nn::Var<T> mlp(const nn::Var<T>& x, const std::string& prefix) const;
  nn::Var<T> norm(const nn::Var<T>& x, const std::string& prefix) const;
  nn::AttentionWeights<T> attn(const std::string& prefix) const;
  nn::Var<T> project(const nn::Var<T>& x, const std::string& weight) const;
  const nn::Var<T>& p(const std::string& name) const { return params_.at(name); }

  ModelConfig config_;
  nn::ParameterSet<T> params_;
  mutable ForwardCounters counters_;
};

}  // namespace urbanclip::model
