#include "urbanclip/train/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "urbanclip/downstream/encoder.hpp"
#include "urbanclip/errors.hpp"
#include "urbanclip/objectives/baselines.hpp"
#include "urbanclip/util/binary_io.hpp"
#include "urbanclip/util/hash.hpp"

namespace urbanclip::train {

using nlohmann::json;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

const std::vector<std::pair<Ablation, std::string>>& ablation_names() {
  static const std::vector<std::pair<Ablation, std::string>> names = {
      {Ablation::kFull, "full"},
      {Ablation::kNoLm, "no_lm"},
      {Ablation::kNoCon, "no_con"},
      {Ablation::kImageOnly, "image_only"},
      {Ablation::kTextSimclr, "text_simclr"},
      {Ablation::kTile2vec, "tile2vec"},
      {Ablation::kAutoencoder, "autoencoder"},
      {Ablation::kPca, "pca"},
      {Ablation::kUnrefinedText, "unrefined_text"},
  };
  return names;
}

}  // namespace

std::string ablation_name(Ablation a) {
  for (const auto& [value, name] : ablation_names())
    if (value == a) return name;
  throw ConfigError("unknown ablation value");
}

Ablation parse_ablation(const std::string& name) {
  for (const auto& [value, n] : ablation_names())
    if (n == name) return value;
  throw ConfigError("unknown ablation '" + name + "'");
}

const std::vector<Ablation>& all_ablations() {
  static const std::vector<Ablation> all = [] {
    std::vector<Ablation> v;
    for (const auto& [value, name] : ablation_names()) v.push_back(value);
    return v;
  }();
  return all;
}

bool uses_text_model(Ablation a) {
  return a == Ablation::kFull || a == Ablation::kNoLm || a == Ablation::kNoCon ||
         a == Ablation::kUnrefinedText;
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  weights.validate();
  if (ablation == Ablation::kNoLm && weights.lm != 0) throw ConfigError("no_lm requires weights.lm = 0");
  if (ablation == Ablation::kNoCon && weights.con != 0) throw ConfigError("no_con requires weights.con = 0");
  if (grid.lrs.empty() || grid.batches.empty()) throw ConfigError("grid must be non-empty");
  if (grid.budget_steps < 1) throw ConfigError("grid budget_steps must be >= 1");
  if (pca_components < 1) throw ConfigError("pca_components must be >= 1");
  if (!(simclr_temperature > 0)) throw ConfigError("simclr_temperature must be > 0");
}

json to_json(const TrainConfig& c) {
  json m = model::to_json(c.model);
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"max_steps", c.max_steps},
          {"seed", c.seed},
          {"weights", {{"con", c.weights.con}, {"lm", c.weights.lm}}},
          {"ablation", ablation_name(c.ablation)},
          {"grid", {{"lrs", c.grid.lrs}, {"batches", c.grid.batches}, {"budget_steps", c.grid.budget_steps}}},
          {"model", m},
          {"triplet_margin", c.triplet_margin},
          {"tile2vec_min_distance", c.tile2vec_min_distance},
          {"simclr_temperature", c.simclr_temperature},
          {"simclr_threshold", c.simclr_threshold},
          {"pca_components", c.pca_components}};
}

TrainConfig train_config_from_json(const json& j) {
  static const std::vector<std::string> known = {
      "lr", "batch_size", "epochs", "max_steps", "seed", "weights", "ablation", "grid", "model",
      "triplet_margin", "tile2vec_min_distance", "simclr_temperature", "simclr_threshold",
      "pca_components"};
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown train config key '" + key + "'");
    }
  }
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("weights")) {
      c.weights.con = j["weights"].value("con", c.weights.con);
      c.weights.lm = j["weights"].value("lm", c.weights.lm);
    }
    if (j.contains("ablation")) c.ablation = parse_ablation(j["ablation"].get<std::string>());
    if (j.contains("grid")) {
      c.grid.lrs = j["grid"].value("lrs", c.grid.lrs);
      c.grid.batches = j["grid"].value("batches", c.grid.batches);
      c.grid.budget_steps = j["grid"].value("budget_steps", c.grid.budget_steps);
    }
    if (j.contains("model")) c.model = model::model_config_from_json(j["model"]);
    c.triplet_margin = j.value("triplet_margin", c.triplet_margin);
    c.tile2vec_min_distance = j.value("tile2vec_min_distance", c.tile2vec_min_distance);
    c.simclr_temperature = j.value("simclr_temperature", c.simclr_temperature);
    c.simclr_threshold = j.value("simclr_threshold", c.simclr_threshold);
    c.pca_components = j.value("pca_components", c.pca_components);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(util::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return train_config_from_json(j);
}

TrainConfig for_ablation(TrainConfig base, Ablation a) {
  base.ablation = a;
  if (a == Ablation::kNoLm) base.weights = {base.weights.con > 0 ? base.weights.con : 1.0, 0.0};
  if (a == Ablation::kNoCon) base.weights = {0.0, base.weights.lm > 0 ? base.weights.lm : 1.0};
  return base;
}

json RunRecord::to_json() const {
  json hist = json::array();
  for (const auto& r : history) hist.push_back({r.step, r.con, r.lm, r.total});
  json val = json::array();
  for (const auto& [step, loss] : validation) val.push_back({step, loss});
  return {{"config", config},
          {"seed", seed},
          {"steps", history.size()},
          {"wall_seconds", wall_seconds},
          {"checkpoint", checkpoint_path},
          {"best_step", best_step},
          {"best_val_loss", best_val_loss},
          {"validation", val},
          {"history_columns", {"step", "con", "lm", "total"}},
          {"history", hist}};
}

namespace {

struct StepLoss {
  Var<float> total;
  double con = 0;
  double lm = 0;
};

model::ModelConfig resolved_model(const TrainConfig& config, const textpipe::Vocab& vocab,
                                  const corpus::Corpus& corpus) {
  model::ModelConfig m = config.model;
  m.vocab_size = vocab.size();
  if (!corpus.records.empty()) {
    m.image_h = int(corpus.records.front().image.height);
    m.image_w = int(corpus.records.front().image.width);
  }
  m.validate();
  return m;
}

std::size_t caption_choice(const std::string& id, std::uint64_t seed, std::size_t n) {
  return std::size_t(util::fnv1a(id, util::derive_seed(seed, "val-caption")) % n);
}

// Everything one arm needs to turn a batch of records into a loss.
class ArmState {
 public:
  ArmState(const corpus::Corpus& corpus, const corpus::CorpusSplit& split,
           const textpipe::Vocab& vocab, const TrainConfig& config)
      : corpus_(corpus),
        vocab_(vocab),
        config_(config),
        net_(resolved_model(config, vocab, corpus), util::derive_seed(config.seed, "init")) {
    const auto& m = net_.config();
    std::mt19937_64 rng(util::derive_seed(config.seed, "extra-init"));
    const std::size_t P = std::size_t(m.proj_dim);
    if (config.ablation == Ablation::kImageOnly) {
      extra_.add("vit_head.W1", nn::init::trunc_normal<float>(Shape{P, 256}, std::sqrt(2.0 / double(P)), rng));
      extra_.add("vit_head.b1", Tensor<float>(Shape{256}));
      extra_.add("vit_head.W2", nn::init::trunc_normal<float>(Shape{256, corpus::kNumIndicators}, 1.0 / 16, rng));
      extra_.add("vit_head.b2", Tensor<float>(Shape{corpus::kNumIndicators}));
      for (std::size_t k = 0; k < corpus::kNumIndicators; ++k) {
        double mean = 0, sq = 0;
        for (const auto& id : split.train_ids) mean += corpus.find(id).indicators_log.v[k];
        mean /= double(split.train_ids.size());
        for (const auto& id : split.train_ids) sq += std::pow(corpus.find(id).indicators_log.v[k] - mean, 2);
        y_mean_[k] = mean;
        y_scale_[k] = std::max(1e-12, std::sqrt(sq / double(split.train_ids.size())));
      }
    } else if (config.ablation == Ablation::kAutoencoder) {
      const std::size_t D = std::size_t(m.image_h * m.image_w * m.channels);
      extra_.add("ae.W", nn::init::trunc_normal<float>(Shape{P, D}, 0.02, rng));
      extra_.add("ae.b", Tensor<float>(Shape{D}));
    }
    extra_.set_requires_grad(true);
    if (config.ablation == Ablation::kTile2vec) {
      for (const auto& id : split.train_ids) {
        const auto& r = corpus.find(id);
        grid_[{r.grid_i, r.grid_j}] = &r;
        train_pool_.push_back(&r);
      }
    }
  }

  model::UrbanClip<float>& net() { return net_; }
  nn::ParameterSet<float>& extra() { return extra_; }

  // nullopt when the batch gives the objective nothing to work with.
  std::optional<StepLoss> loss(const std::vector<const corpus::RegionRecord*>& batch,
                               const std::vector<std::string>& captions, std::mt19937_64& rng) {
    switch (config_.ablation) {
      case Ablation::kFull:
      case Ablation::kNoLm:
      case Ablation::kNoCon:
      case Ablation::kUnrefinedText:
        return text_loss(batch, captions);
      case Ablation::kImageOnly:
        return supervised_loss(batch);
      case Ablation::kTextSimclr:
        return simclr_loss(batch, captions);
      case Ablation::kTile2vec:
        return triplet_loss(batch, rng);
      case Ablation::kAutoencoder:
        return reconstruction_loss(batch);
      case Ablation::kPca:
        break;
    }
    throw ConfigError("pca has no gradient training loop");
  }

 private:
  Tensor<float> patches(const std::vector<const corpus::RegionRecord*>& batch) const {
    std::vector<const corpus::ImageTensor*> images;
    for (const auto* r : batch) images.push_back(&r->image);
    return model::stack_patches<float>(images, net_.config().patch);
  }

  std::optional<StepLoss> text_loss(const std::vector<const corpus::RegionRecord*>& batch,
                                    const std::vector<std::string>& captions) {
    std::vector<textpipe::TokenSequence> seqs;
    for (const auto& c : captions) seqs.push_back(textpipe::tokenize(c, vocab_, net_.config().max_text_len));
    const auto packed = model::PackedText::pack(seqs);
    auto l = objectives::forward_loss(net_, patches(batch), packed, config_.weights);
    return StepLoss{l.total, l.con.value()[0], l.lm.value()[0]};
  }

  std::optional<StepLoss> supervised_loss(const std::vector<const corpus::RegionRecord*>& batch) {
    const auto img = net_.encode_image(patches(batch), batch.size());
    const Var<float> h = nn::relu(nn::linear(img.pooled, extra_.at("vit_head.W1"), extra_.at("vit_head.b1")));
    const Var<float> pred = nn::linear(h, extra_.at("vit_head.W2"), extra_.at("vit_head.b2"));
    Tensor<float> y(Shape{batch.size(), corpus::kNumIndicators});
    for (std::size_t i = 0; i < batch.size(); ++i)
      for (std::size_t k = 0; k < corpus::kNumIndicators; ++k)
        y.at(i, k) = float((batch[i]->indicators_log.v[k] - y_mean_[k]) / y_scale_[k]);
    return StepLoss{nn::mse(pred, y)};
  }

  std::optional<StepLoss> simclr_loss(const std::vector<const corpus::RegionRecord*>& batch,
                                      const std::vector<std::string>& captions) {
    const auto mask = objectives::tfidf_positive_mask(captions, config_.simclr_threshold);
    if (std::find(mask.begin(), mask.end(), 1) == mask.end()) return std::nullopt;
    const auto img = net_.encode_image(patches(batch), batch.size());
    return StepLoss{objectives::text_simclr_loss(img.pooled, mask, config_.simclr_temperature)};
  }

  std::optional<StepLoss> triplet_loss(const std::vector<const corpus::RegionRecord*>& batch,
                                       std::mt19937_64& rng) {
    std::vector<const corpus::RegionRecord*> anchors, positives, negatives;
    for (const auto* a : batch) {
      std::vector<const corpus::RegionRecord*> near;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          auto it = grid_.find({a->grid_i + di, a->grid_j + dj});
          if (it != grid_.end()) near.push_back(it->second);
        }
      if (near.empty()) continue;
      const corpus::RegionRecord* neg = nullptr;
      for (int attempt = 0; attempt < 64 && !neg; ++attempt) {
        const auto* cand = train_pool_[std::uniform_int_distribution<std::size_t>(0, train_pool_.size() - 1)(rng)];
        const int cheb = std::max(std::abs(cand->grid_i - a->grid_i), std::abs(cand->grid_j - a->grid_j));
        if (cheb > config_.tile2vec_min_distance) neg = cand;
      }
      if (!neg) continue;
      anchors.push_back(a);
      positives.push_back(near[std::uniform_int_distribution<std::size_t>(0, near.size() - 1)(rng)]);
      negatives.push_back(neg);
    }
    if (anchors.empty()) return std::nullopt;
    const std::size_t n = anchors.size();
    std::vector<const corpus::RegionRecord*> all = anchors;
    all.insert(all.end(), positives.begin(), positives.end());
    all.insert(all.end(), negatives.begin(), negatives.end());
    const auto img = net_.encode_image(patches(all), all.size());
    auto rows = [&](std::size_t block) {
      std::vector<std::size_t> r(n);
      for (std::size_t i = 0; i < n; ++i) r[i] = block * n + i;
      return nn::gather_rows(img.pooled, r);
    };
    return StepLoss{objectives::triplet_loss(rows(0), rows(1), rows(2), config_.triplet_margin)};
  }

  std::optional<StepLoss> reconstruction_loss(const std::vector<const corpus::RegionRecord*>& batch) {
    const auto img = net_.encode_image(patches(batch), batch.size());
    const Var<float> recon = nn::linear(img.pooled, extra_.at("ae.W"), extra_.at("ae.b"));
    const std::size_t D = recon.value().cols();
    Tensor<float> target(Shape{batch.size(), D});
    for (std::size_t i = 0; i < batch.size(); ++i)
      std::copy(batch[i]->image.data.begin(), batch[i]->image.data.end(), target.row(i));
    return StepLoss{objectives::autoencoder_loss(recon, target)};
  }

  const corpus::Corpus& corpus_;
  const textpipe::Vocab& vocab_;
  const TrainConfig& config_;
  model::UrbanClip<float> net_;
  nn::ParameterSet<float> extra_;
  std::array<double, corpus::kNumIndicators> y_mean_{}, y_scale_{};
  std::map<std::pair<int, int>, const corpus::RegionRecord*> grid_;
  std::vector<const corpus::RegionRecord*> train_pool_;
};

std::vector<const corpus::RegionRecord*> records_for(const corpus::Corpus& corpus,
                                                     const std::vector<std::string>& ids) {
  std::vector<const corpus::RegionRecord*> out;
  for (const auto& id : ids) out.push_back(&corpus.find(id));
  return out;
}

void require_captions(const std::vector<const corpus::RegionRecord*>& records) {
  for (const auto* r : records) {
    if (r->captions.empty()) throw DomainError("region " + r->region_id + " has no captions");
  }
}

// Mean per-batch loss over `records` in order, batch size from the config.
double evaluate(ArmState& arm, const std::vector<const corpus::RegionRecord*>& records,
                const TrainConfig& config) {
  nn::NoGradGuard no_grad;
  std::mt19937_64 rng(util::derive_seed(config.seed, "val-sampling"));
  double sum = 0;
  std::size_t weight = 0;
  const std::size_t bs = std::size_t(config.batch_size);
  for (std::size_t start = 0; start < records.size(); start += bs) {
    const std::size_t end = std::min(records.size(), start + bs);
    std::vector<const corpus::RegionRecord*> batch(records.begin() + std::ptrdiff_t(start),
                                                   records.begin() + std::ptrdiff_t(end));
    std::vector<std::string> captions;
    for (const auto* r : batch) {
      if (!r->captions.empty()) {
        captions.push_back(r->captions[caption_choice(r->region_id, config.seed, r->captions.size())]);
      }
    }
    const auto l = arm.loss(batch, captions, rng);
    if (!l) continue;
    sum += double(l->total.value()[0]) * double(batch.size());
    weight += batch.size();
  }
  return weight ? sum / double(weight) : std::numeric_limits<double>::infinity();
}

std::string loss_csv(const std::vector<LossRow>& rows) {
  std::string out = "step,L_Con,L_LM,L_Total\n";
  for (const auto& r : rows) out += fmt::format("{},{:.9g},{:.9g},{:.9g}\n", r.step, r.con, r.lm, r.total);
  return out;
}

void write_artifacts(const PretrainResult& result, const textpipe::Vocab& vocab,
                     const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  model::save_checkpoint(result.checkpoint, out_dir / "model.uckpt");
  util::write_file_atomic(out_dir / "run.json", result.record.to_json().dump(1) + "\n");
  util::write_file_atomic(out_dir / "loss.csv", loss_csv(result.record.history));
  vocab.save(out_dir / "vocab.json");
}

PretrainResult fit_pca(const corpus::Corpus& corpus, const corpus::CorpusSplit& split,
                       const textpipe::Vocab& vocab, const TrainConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const auto train = records_for(corpus, split.train_ids);
  if (train.empty()) throw DomainError("pca: empty training split");
  const std::size_t D = train.front()->image.data.size();
  Eigen::MatrixXd x(Eigen::Index(train.size()), Eigen::Index(D));
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t c = 0; c < D; ++c) x(Eigen::Index(i), Eigen::Index(c)) = train[i]->image.data[c];
  const auto basis = objectives::pca_fit(x, config.pca_components);

  PretrainResult result;
  result.checkpoint = downstream::pca_checkpoint(resolved_model(config, vocab, corpus), basis.mean,
                                                 basis.components);
  result.checkpoint.vocab_hash = vocab.hash();
  // Validation reconstruction error.
  double err = 0;
  const auto val = records_for(corpus, split.val_ids);
  for (const auto* r : val) {
    const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXf>(r->image.data.data(), Eigen::Index(D)).cast<double>();
    err += (objectives::pca_reconstruct(basis, objectives::pca_project(basis, v)) - v).squaredNorm() / double(D);
  }
  result.record.config = to_json(config);
  result.record.seed = config.seed;
  result.record.best_val_loss = val.empty() ? 0.0 : err / double(val.size());
  result.record.validation.push_back({0, result.record.best_val_loss});
  result.record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.checkpoint.meta = {{"ablation", "pca"}, {"seed", config.seed}, {"city", corpus.city},
                            {"val_loss", result.record.best_val_loss}};
  return result;
}

}  // namespace

double validation_loss(const model::UrbanClip<float>& net, const corpus::Corpus& corpus,
                       const std::vector<std::string>& ids, const textpipe::Vocab& vocab,
                       const TrainConfig& config) {
  nn::NoGradGuard no_grad;
  const auto records = records_for(corpus, ids);
  require_captions(records);
  double sum = 0;
  const std::size_t bs = std::size_t(config.batch_size);
  for (std::size_t start = 0; start < records.size(); start += bs) {
    const std::size_t end = std::min(records.size(), start + bs);
    std::vector<const corpus::ImageTensor*> images;
    std::vector<textpipe::TokenSequence> seqs;
    for (std::size_t i = start; i < end; ++i) {
      const auto* r = records[i];
      images.push_back(&r->image);
      seqs.push_back(textpipe::tokenize(r->captions[caption_choice(r->region_id, config.seed, r->captions.size())],
                                        vocab, net.config().max_text_len));
    }
    const auto l = objectives::forward_loss(net, model::stack_patches<float>(images, net.config().patch),
                                            model::PackedText::pack(seqs), config.weights);
    sum += double(l.total.value()[0]) * double(end - start);
  }
  return records.empty() ? std::numeric_limits<double>::infinity() : sum / double(records.size());
}

PretrainResult pretrain(const corpus::Corpus& corpus, const corpus::CorpusSplit& split,
                        const textpipe::Vocab& vocab, const TrainConfig& config,
                        const std::filesystem::path& out_dir) {
  config.validate();
  if (split.train_ids.empty()) throw DomainError("pretrain: empty training split");
  if (config.ablation == Ablation::kPca) {
    auto result = fit_pca(corpus, split, vocab, config);
    if (!out_dir.empty()) {
      result.record.checkpoint_path = (out_dir / "model.uckpt").string();
      write_artifacts(result, vocab, out_dir);
    }
    return result;
  }
  const auto start_time = std::chrono::steady_clock::now();
  const auto train_records = records_for(corpus, split.train_ids);
  const auto val_records = records_for(corpus, split.val_ids);
  const bool needs_text = uses_text_model(config.ablation) || config.ablation == Ablation::kTextSimclr;
  if (needs_text) {
    require_captions(train_records);
    require_captions(val_records);
  }

  ArmState arm(corpus, split, vocab, config);
  nn::AdamState<float> adam, adam_extra;
  adam.config.lr = adam_extra.config.lr = config.lr;
  std::mt19937_64 shuffle_rng(util::derive_seed(config.seed, "shuffle"));
  std::mt19937_64 caption_rng(util::derive_seed(config.seed, "captions"));
  std::mt19937_64 sample_rng(util::derive_seed(config.seed, "sampling"));

  PretrainResult result;
  result.record.config = to_json(config);
  result.record.seed = config.seed;
  result.record.best_val_loss = std::numeric_limits<double>::infinity();
  nn::ParameterSet<float> best = arm.net().params().clone();

  const auto& eval_set = val_records.empty() ? train_records : val_records;
  auto validate_now = [&](int step) {
    const double v = evaluate(arm, eval_set, config);
    result.record.validation.push_back({step, v});
    if (v < result.record.best_val_loss) {
      result.record.best_val_loss = v;
      result.record.best_step = step;
      best = arm.net().params().clone();
    }
  };

  std::vector<const corpus::RegionRecord*> order = train_records;
  const std::size_t bs = std::size_t(config.batch_size);
  int step = 0;
  bool stop = false;
  for (int epoch = 0; epoch < config.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<const corpus::RegionRecord*> batch(order.begin() + std::ptrdiff_t(start),
                                                     order.begin() + std::ptrdiff_t(end));
      std::vector<std::string> captions;
      for (const auto* r : batch) {
        if (r->captions.empty()) continue;
        captions.push_back(r->captions[std::uniform_int_distribution<std::size_t>(0, r->captions.size() - 1)(caption_rng)]);
      }
      arm.net().params().zero_grad();
      arm.extra().zero_grad();
      ++step;
      try {
        const auto l = arm.loss(batch, captions, sample_rng);
        if (l) {
          const double total = l->total.value()[0];
          if (!std::isfinite(total)) throw NumericError(fmt::format("loss is {}", total));
          nn::backward(l->total);
          nn::adam_step(arm.net().params(), adam);
          if (arm.extra().size()) nn::adam_step(arm.extra(), adam_extra);
          result.record.history.push_back({step, l->con, l->lm, total});
        } else {
          result.record.history.push_back({step, 0.0, 0.0, std::numeric_limits<double>::quiet_NaN()});
        }
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("training diverged at step {}: {}", step, e.what()));
      }
      if (config.max_steps > 0 && step >= config.max_steps) {
        stop = true;
        break;
      }
    }
    validate_now(step);
  }
  if (!std::isfinite(result.record.best_val_loss)) {
    throw NumericError(fmt::format("no finite validation loss after {} steps", step));
  }

  result.checkpoint.kind = "urbanclip";
  result.checkpoint.config = arm.net().config();
  result.checkpoint.vocab_hash = vocab.hash();
  result.checkpoint.params = std::move(best);
  result.checkpoint.meta = {{"ablation", ablation_name(config.ablation)},
                            {"seed", config.seed},
                            {"city", corpus.city},
                            {"best_step", result.record.best_step},
                            {"val_loss", result.record.best_val_loss}};
  result.record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  if (!out_dir.empty()) {
    result.record.checkpoint_path = (out_dir / "model.uckpt").string();
    write_artifacts(result, vocab, out_dir);
  }
  return result;
}

GridResult grid_search(const corpus::Corpus& corpus, const corpus::CorpusSplit& split,
                       const textpipe::Vocab& vocab, const TrainConfig& base) {
  base.validate();
  GridResult out;
  double best = std::numeric_limits<double>::infinity();
  bool have_best = false;
  for (double lr : base.grid.lrs) {
    for (int batch : base.grid.batches) {
      TrainConfig c = base;
      c.lr = lr;
      c.batch_size = batch;
      c.max_steps = base.grid.budget_steps;
      const std::size_t per_epoch = (split.train_ids.size() + std::size_t(batch) - 1) / std::size_t(batch);
      c.epochs = int((std::size_t(c.max_steps) + per_epoch - 1) / per_epoch);
      double val = std::numeric_limits<double>::infinity();
      try {
        val = pretrain(corpus, split, vocab, c).record.best_val_loss;
      } catch (const NumericError& e) {
        spdlog::warn("grid cell lr={} batch={} diverged: {}", lr, batch, e.what());
      }
      out.table.push_back({lr, batch, val});
      if (!have_best || val < best) {
        best = val;
        out.best = c;
        out.best.max_steps = base.max_steps;
        out.best.epochs = base.epochs;
        have_best = true;
      }
    }
  }
  return out;
}

}  // namespace urbanclip::train
