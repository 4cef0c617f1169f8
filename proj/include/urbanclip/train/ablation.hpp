#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "urbanclip/corpus/corpus.hpp"
#include "urbanclip/downstream/head.hpp"
#include "urbanclip/downstream/metrics.hpp"
#include "urbanclip/train/train.hpp"

namespace urbanclip::train {

struct SuiteConfig {
  TrainConfig train;
  downstream::HeadConfig head;
  std::vector<Ablation> arms = all_ablations();
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct SuiteCell {
  std::string ablation;
  std::string indicator;
  double mean_r2 = 0;
  double std_r2 = 0;  // population spread over seeds
  std::vector<double> r2;
};

struct SuiteResult {
  std::vector<downstream::MetricsRow> rows;  // per seed, test split
  std::vector<SuiteCell> cells;              // arms x indicators
  const SuiteCell& cell(const std::string& ablation, const std::string& indicator) const;
};

struct ArmResult {
  PretrainResult trained;
  downstream::IndicatorHead head;
  std::vector<downstream::MetricsRow> rows;
};

// Pretrains (or fits) one arm, fits the frozen head on its train split and
// scores the test split.
ArmResult train_arm(const corpus::Corpus& corpus, const corpus::CorpusSplit& split,
                    const textpipe::Vocab& vocab, Ablation arm, std::uint64_t seed,
                    const SuiteConfig& config);

// The metrics rows of train_arm.
std::vector<downstream::MetricsRow> run_arm(const corpus::Corpus& corpus,
                                            const corpus::CorpusSplit& split,
                                            const textpipe::Vocab& vocab, Ablation arm,
                                            std::uint64_t seed, const SuiteConfig& config);

// `corpus` is the refined corpus; the unrefined arm recaptions a copy with
// refinement disabled (and injection on) before building its own vocab.
SuiteResult run_ablation_suite(const corpus::Corpus& corpus, const corpus::CorpusSplit& split,
                               const SuiteConfig& config);

}  // namespace urbanclip::train
