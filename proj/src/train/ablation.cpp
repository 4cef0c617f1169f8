#include "urbanclip/train/ablation.hpp"

#include <cmath>
#include <optional>

#include <spdlog/spdlog.h>

#include "urbanclip/downstream/evaluate.hpp"
#include "urbanclip/errors.hpp"

namespace urbanclip::train {

const SuiteCell& SuiteResult::cell(const std::string& ablation, const std::string& indicator) const {
  for (const auto& c : cells)
    if (c.ablation == ablation && c.indicator == indicator) return c;
  throw NotFoundError("no suite cell for " + ablation + "/" + indicator);
}

namespace {

std::vector<std::size_t> iota_rows(std::size_t begin, std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = begin + i;
  return r;
}

textpipe::Vocab corpus_vocab(const corpus::Corpus& corpus) {
  std::vector<std::string> captions;
  for (const auto& r : corpus.records) captions.insert(captions.end(), r.captions.begin(), r.captions.end());
  return textpipe::build_vocab(captions);
}

}  // namespace

ArmResult train_arm(const corpus::Corpus& corpus, const corpus::CorpusSplit& split,
                    const textpipe::Vocab& vocab, Ablation arm, std::uint64_t seed,
                    const SuiteConfig& config) {
  TrainConfig tc = for_ablation(config.train, arm);
  tc.seed = seed;
  const auto trained = pretrain(corpus, split, vocab, tc);
  const downstream::FrozenEncoder encoder(trained.checkpoint);

  std::vector<std::string> ids = split.train_ids;
  ids.insert(ids.end(), split.val_ids.begin(), split.val_ids.end());
  const auto records = downstream::select_records(corpus, ids);
  const auto table = downstream::extract_embeddings(encoder, records);
  auto head_config = config.head;
  head_config.seed = seed;
  auto head = downstream::fit_head(table.vectors, downstream::log_targets(records),
                                         iota_rows(0, split.train_ids.size()),
                                         iota_rows(split.train_ids.size(), split.val_ids.size()),
                                         head_config);
  downstream::EvalLabels labels;
  labels.ablation = ablation_name(arm);
  labels.seed = seed;
  auto rows = downstream::transfer_eval(encoder, head, corpus, split.test_ids, labels);
  return {trained, std::move(head), std::move(rows)};
}

std::vector<downstream::MetricsRow> run_arm(const corpus::Corpus& corpus,
                                            const corpus::CorpusSplit& split,
                                            const textpipe::Vocab& vocab, Ablation arm,
                                            std::uint64_t seed, const SuiteConfig& config) {
  return train_arm(corpus, split, vocab, arm, seed, config).rows;
}

SuiteResult run_ablation_suite(const corpus::Corpus& corpus, const corpus::CorpusSplit& split,
                               const SuiteConfig& config) {
  if (config.seeds.empty()) throw ConfigError("ablation suite needs at least one seed");
  const auto vocab = corpus_vocab(corpus);
  std::optional<corpus::Corpus> unrefined;
  std::optional<textpipe::Vocab> unrefined_vocab;

  SuiteResult result;
  for (Ablation arm : config.arms) {
    const corpus::Corpus* data = &corpus;
    const textpipe::Vocab* v = &vocab;
    if (arm == Ablation::kUnrefinedText) {
      if (!unrefined) {
        unrefined = corpus;
        auto cc = corpus.config;
        cc.refine = false;
        if (cc.inject_bad_prob <= 0) cc.inject_bad_prob = 0.3;
        corpus::recaption(*unrefined, cc);
        unrefined_vocab = corpus_vocab(*unrefined);
      }
      data = &*unrefined;
      v = &*unrefined_vocab;
    }
    for (std::uint64_t seed : config.seeds) {
      spdlog::info("ablation {} seed {}", ablation_name(arm), seed);
      auto rows = run_arm(*data, split, *v, arm, seed, config);
      result.rows.insert(result.rows.end(), rows.begin(), rows.end());
    }
  }
  for (Ablation arm : config.arms) {
    for (auto name : corpus::kIndicatorNames) {
      SuiteCell cell;
      cell.ablation = ablation_name(arm);
      cell.indicator = std::string(name);
      for (const auto& r : result.rows)
        if (r.ablation == cell.ablation && r.indicator == cell.indicator) cell.r2.push_back(r.r2);
      if (cell.r2.empty()) continue;
      for (double x : cell.r2) cell.mean_r2 += x;
      cell.mean_r2 /= double(cell.r2.size());
      for (double x : cell.r2) cell.std_r2 += (x - cell.mean_r2) * (x - cell.mean_r2);
      cell.std_r2 = std::sqrt(cell.std_r2 / double(cell.r2.size()));
      result.cells.push_back(cell);
    }
  }
  return result;
}

}  // namespace urbanclip::train
