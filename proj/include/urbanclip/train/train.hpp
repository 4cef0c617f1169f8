#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "urbanclip/corpus/corpus.hpp"
#include "urbanclip/corpus/split.hpp"
#include "urbanclip/model/checkpoint.hpp"
#include "urbanclip/model/config.hpp"
#include "urbanclip/objectives/losses.hpp"
#include "urbanclip/textpipe/vocab.hpp"

namespace urbanclip::train {

enum class Ablation {
  kFull,
  kNoLm,
  kNoCon,
  kImageOnly,
  kTextSimclr,
  kTile2vec,
  kAutoencoder,
  kPca,
  kUnrefinedText,
};

std::string ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);  // ConfigError when unknown
const std::vector<Ablation>& all_ablations();
// Whether the arm trains the full image-text model (and so has text towers).
bool uses_text_model(Ablation a);

struct GridSpec {
  std::vector<double> lrs{2e-6, 2e-5, 2e-4, 2e-3, 2e-2};
  std::vector<int> batches{4, 8, 16, 32, 64};
  int budget_steps = 40;  // training steps per cell
};

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 32;
  int epochs = 8;
  int max_steps = 0;  // stop early after this many steps when > 0
  std::uint64_t seed = 0;
  objectives::LossWeights weights;
  Ablation ablation = Ablation::kFull;
  GridSpec grid;
  model::ModelConfig model;  // vocab_size is taken from the vocab

  double triplet_margin = 1.0;
  int tile2vec_min_distance = 5;  // Chebyshev distance for negatives
  double simclr_temperature = 0.5;
  double simclr_threshold = 0.8;
  int pca_components = 10;

  // lr > 0, batch >= 1, epochs >= 1, weights consistent with the ablation.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Unknown keys are a ConfigError; missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

// Copy of `base` set up for `a`: forced loss weights (no_lm, no_con).
TrainConfig for_ablation(TrainConfig base, Ablation a);

struct LossRow {
  int step = 0;
  double con = 0;
  double lm = 0;
  double total = 0;
};

struct RunRecord {
  nlohmann::json config;
  std::vector<LossRow> history;  // one row per executed step
  std::vector<std::pair<int, double>> validation;  // (step, loss) after each epoch
  double wall_seconds = 0;
  std::string checkpoint_path;
  std::uint64_t seed = 0;
  int best_step = 0;
  double best_val_loss = 0;

  nlohmann::json to_json() const;
};

struct PretrainResult {
  RunRecord record;
  model::Checkpoint checkpoint;  // best-validation parameters
};

// Seeded pretraining for any ablation arm. Writes run.json, loss.csv and
// model.uckpt under `out_dir` when it is non-empty. NumericError with the
// step index when the loss diverges.
PretrainResult pretrain(const corpus::Corpus& corpus, const corpus::CorpusSplit& split,
                        const textpipe::Vocab& vocab, const TrainConfig& config,
                        const std::filesystem::path& out_dir = {});

// Mean total pretraining loss over `ids` with the deterministic validation
// caption choice used for checkpoint selection.
double validation_loss(const model::UrbanClip<float>& net, const corpus::Corpus& corpus,
                       const std::vector<std::string>& ids, const textpipe::Vocab& vocab,
                       const TrainConfig& config);

struct GridRow {
  double lr = 0;
  int batch_size = 0;
  double val_loss = 0;
};

struct GridResult {
  TrainConfig best;
  std::vector<GridRow> table;  // lr-major order
};

GridResult grid_search(const corpus::Corpus& corpus, const corpus::CorpusSplit& split,
                       const textpipe::Vocab& vocab, const TrainConfig& base);

}  // namespace urbanclip::train
