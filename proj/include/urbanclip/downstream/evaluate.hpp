#pragma once

#include <span>
#include <string>
#include <vector>

#include "urbanclip/downstream/encoder.hpp"
#include "urbanclip/downstream/head.hpp"
#include "urbanclip/downstream/metrics.hpp"
#include "urbanclip/textpipe/vocab.hpp"

namespace urbanclip::downstream {

struct Predictions {
  std::vector<std::string> ids;
  std::vector<std::string> outputs;  // indicator names
  nn::Tensor<double> log;            // [ids, outputs]
  nn::Tensor<double> raw;            // expm1(log), floored at 0
};

Predictions predict(const FrozenEncoder& encoder, const IndicatorHead& head,
                    const corpus::Corpus& corpus, const std::vector<std::string>& ids);
Predictions predict(const IndicatorHead& head, const EmbeddingTable& table,
                    const std::vector<std::string>& ids);

// One row per head output, metrics on log targets.
struct EvalLabels {
  std::string model = "urbanclip";
  std::string ablation = "full";
  std::string source_city;
  std::uint64_t seed = 0;
};
std::vector<MetricsRow> score(const Predictions& predictions, const corpus::Corpus& target,
                              const EvalLabels& labels);

// Frozen source encoder and source head applied to `ids` of the target
// corpus (all records when empty). The diagonal case passes the held-out ids.
std::vector<MetricsRow> transfer_eval(const FrozenEncoder& encoder, const IndicatorHead& head,
                                      const corpus::Corpus& target,
                                      const std::vector<std::string>& ids,
                                      const EvalLabels& labels);

struct SimilarHit {
  std::string region_id;
  double cosine = 0;
};

// Top-k rows of `table` by cosine with `query`, descending; ties by region id.
std::vector<SimilarHit> find_similar(std::span<const float> query, const EmbeddingTable& table,
                                     std::size_t k);

// Greedy next-token decoding from [BOS] until [EOS] or `max_len` words.
std::string greedy_caption(const model::UrbanClip<float>& net, const textpipe::Vocab& vocab,
                           const corpus::ImageTensor& image, int max_len = 32);

}  // namespace urbanclip::downstream
