#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "urbanclip/errors.hpp"
#include "urbanclip/model/checkpoint.hpp"
#include "urbanclip/objectives/losses.hpp"
#include "urbanclip/train/ablation.hpp"
#include "urbanclip/train/train.hpp"
#include "urbanclip/util/hash.hpp"
#include "test_support.hpp"

namespace urbanclip {
namespace {

namespace fs = std::filesystem;
using train::Ablation;

corpus::Corpus small_corpus(int rows, int cols, std::uint64_t seed = 5) {
  corpus::CorpusConfig cc;
  cc.render.height = cc.render.width = 16;
  return corpus::build_corpus("T", seed, rows * cols, rows, cols, cc);
}

textpipe::Vocab vocab_for(const corpus::Corpus& c) {
  std::vector<std::string> caps;
  for (const auto& r : c.records) caps.insert(caps.end(), r.captions.begin(), r.captions.end());
  return textpipe::build_vocab(caps);
}

train::TrainConfig small_config() {
  train::TrainConfig t;
  t.model = testing::tiny_config();
  t.model.max_text_len = 64;
  t.batch_size = 8;
  t.epochs = 1;
  t.seed = 3;
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag)
      : path_(fs::temp_directory_path() / ("urbanclip_train_" + tag)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

class TrainTest : public ::testing::Test {
 protected:
  void SetUp() override {
    corpus_ = small_corpus(6, 6);
    split_ = corpus::split_corpus(corpus_.ids(), 1);
    vocab_ = vocab_for(corpus_);
  }
  model::ModelConfig resolved(const train::TrainConfig& t) const {
    auto m = t.model;
    m.vocab_size = vocab_.size();
    return m;
  }

  corpus::Corpus corpus_;
  corpus::CorpusSplit split_;
  textpipe::Vocab vocab_;
};

TEST_F(TrainTest, SameSeedGivesBitwiseIdenticalCheckpoints) {
  TempDir a("det_a"), b("det_b");
  auto t = small_config();
  t.epochs = 2;
  train::pretrain(corpus_, split_, vocab_, t, a.path());
  train::pretrain(corpus_, split_, vocab_, t, b.path());
  const auto bytes = slurp(a.path() / "model.uckpt");
  ASSERT_FALSE(bytes.empty());
  EXPECT_EQ(bytes, slurp(b.path() / "model.uckpt"));
  EXPECT_EQ(slurp(a.path() / "loss.csv"), slurp(b.path() / "loss.csv"));
  EXPECT_TRUE(fs::exists(a.path() / "run.json"));
  EXPECT_TRUE(fs::exists(a.path() / "vocab.json"));
}

TEST_F(TrainTest, DifferentSeedsDiffer) {
  auto t = small_config();
  const auto r1 = train::pretrain(corpus_, split_, vocab_, t);
  t.seed = 4;
  const auto r2 = train::pretrain(corpus_, split_, vocab_, t);
  EXPECT_FALSE(r1.checkpoint.params.same_values(r2.checkpoint.params));
}

TEST_F(TrainTest, HistoryHasOneRowPerStep) {
  auto t = small_config();
  t.epochs = 3;
  const auto r = train::pretrain(corpus_, split_, vocab_, t);
  const std::size_t per_epoch = (split_.train_ids.size() + 7) / 8;
  ASSERT_EQ(r.record.history.size(), 3 * per_epoch);
  for (std::size_t i = 0; i < r.record.history.size(); ++i) {
    EXPECT_EQ(r.record.history[i].step, int(i) + 1);
  }
  EXPECT_EQ(r.record.validation.size(), 3u);

  t.max_steps = 4;
  EXPECT_EQ(train::pretrain(corpus_, split_, vocab_, t).record.history.size(), 4u);
}

TEST_F(TrainTest, BestCheckpointMatchesLowestValidation) {
  auto t = small_config();
  t.epochs = 3;
  const auto r = train::pretrain(corpus_, split_, vocab_, t);
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& [step, v] : r.record.validation) lowest = std::min(lowest, v);
  EXPECT_EQ(r.record.best_val_loss, lowest);
  EXPECT_EQ(r.checkpoint.meta.at("best_step").get<int>(), r.record.best_step);
}

TEST_F(TrainTest, CheckpointRoundTripPreservesValidationLoss) {
  TempDir dir("roundtrip");
  auto t = small_config();
  t.epochs = 2;
  const auto r = train::pretrain(corpus_, split_, vocab_, t, dir.path());
  const auto loaded = model::load_checkpoint(dir.path() / "model.uckpt");
  const model::UrbanClip<float> net(loaded.config, loaded.params);
  EXPECT_EQ(train::validation_loss(net, corpus_, split_.val_ids, vocab_, t), r.record.best_val_loss);
}

TEST_F(TrainTest, NoConGivesContrastivePathZeroGradient) {
  auto t = train::for_ablation(small_config(), Ablation::kNoCon);
  EXPECT_EQ(t.weights.con, 0.0);
  const model::UrbanClip<float> init(resolved(t), util::derive_seed(t.seed, "init"));
  const auto r = train::pretrain(corpus_, split_, vocab_, t);
  for (const auto& name : {"proj_img.W", "proj_txt.W"}) {
    EXPECT_TRUE(init.params().at(name).value() == r.checkpoint.params.at(name).value()) << name;
  }
  EXPECT_FALSE(init.params().at("lm_head.W").value() == r.checkpoint.params.at("lm_head.W").value());
  // The contrastive term is still logged.
  for (const auto& row : r.record.history) EXPECT_GT(row.con, 0.0);

  model::UrbanClip<float> net(resolved(t), 9);
  std::vector<corpus::ImageTensor> images;
  std::vector<textpipe::TokenSequence> seqs;
  for (int i = 0; i < 4; ++i) {
    images.push_back(corpus_.records[std::size_t(i)].image);
    seqs.push_back(textpipe::tokenize(corpus_.records[std::size_t(i)].captions[0], vocab_, 64));
  }
  net.params().zero_grad();
  const auto l = objectives::forward_loss(net, testing::patches_for<float>(images, 8),
                                          model::PackedText::pack(seqs), t.weights);
  nn::backward(l.total);
  for (const auto& name : {"proj_img.W", "proj_txt.W"}) {
    const auto& v = net.params().at(name);
    if (!v.has_grad()) continue;
    for (float g : v.grad().span()) EXPECT_EQ(g, 0.0f) << name;
  }
}

TEST_F(TrainTest, NoLmLeavesLmHeadAtInitialization) {
  const auto t = train::for_ablation(small_config(), Ablation::kNoLm);
  EXPECT_EQ(t.weights.lm, 0.0);
  const model::UrbanClip<float> init(resolved(t), util::derive_seed(t.seed, "init"));
  const auto r = train::pretrain(corpus_, split_, vocab_, t);
  for (const auto& name : {"lm_head.W", "lm_head.b"}) {
    EXPECT_TRUE(init.params().at(name).value() == r.checkpoint.params.at(name).value()) << name;
  }
  EXPECT_FALSE(init.params().at("proj_img.W").value() == r.checkpoint.params.at("proj_img.W").value());
  for (const auto& row : r.record.history) EXPECT_GT(row.lm, 0.0);
}

TEST(TrainOverfit, TwoHundredStepsHalveTheLoss) {
  const auto c = small_corpus(4, 8, 11);
  corpus::CorpusSplit all;
  all.train_ids = c.ids();
  all.val_ids = {c.ids().front()};
  const auto vocab = vocab_for(c);
  auto t = small_config();
  t.batch_size = 32;
  t.epochs = 200;
  t.lr = 3e-3;
  t.model.d = 32;
  const auto r = train::pretrain(c, all, vocab, t);
  ASSERT_EQ(r.record.history.size(), 200u);
  EXPECT_LT(r.record.history.back().total, 0.5 * r.record.history.front().total);
}

TEST_F(TrainTest, DivergenceAbortsWithStepIndex) {
  auto broken = corpus_;
  for (auto& rec : broken.records) rec.image.data[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train::pretrain(broken, split_, vocab_, small_config());
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("at step 1"), std::string::npos) << e.what();
  }
}

TEST_F(TrainTest, BaselineArmsTrain) {
  for (auto a : {Ablation::kImageOnly, Ablation::kTextSimclr, Ablation::kTile2vec,
                 Ablation::kAutoencoder, Ablation::kPca}) {
    auto t = train::for_ablation(small_config(), a);
    t.simclr_threshold = 0.2;
    t.tile2vec_min_distance = 2;
    t.pca_components = 4;
    const auto r = train::pretrain(corpus_, split_, vocab_, t);
    EXPECT_EQ(r.checkpoint.meta.at("ablation").get<std::string>(), train::ablation_name(a));
    EXPECT_TRUE(std::isfinite(r.record.best_val_loss)) << train::ablation_name(a);
  }
}

TEST_F(TrainTest, GridOfFiveByFiveHasTwentyFiveRows) {
  auto t = small_config();
  t.grid.budget_steps = 1;
  const auto g = train::grid_search(corpus_, split_, vocab_, t);
  ASSERT_EQ(g.table.size(), 25u);
  std::set<std::pair<double, int>> cells;
  for (const auto& row : g.table) cells.insert({row.lr, row.batch_size});
  EXPECT_EQ(cells.size(), 25u);
  EXPECT_EQ(g.table[0].lr, t.grid.lrs[0]);
  EXPECT_EQ(g.table[1].lr, t.grid.lrs[0]);
  EXPECT_EQ(g.table[1].batch_size, t.grid.batches[1]);
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& row : g.table) lowest = std::min(lowest, row.val_loss);
  bool found = false;
  for (const auto& row : g.table) {
    if (row.val_loss == lowest && row.lr == g.best.lr && row.batch_size == g.best.batch_size) found = true;
  }
  EXPECT_TRUE(found);
}

TEST_F(TrainTest, GridOfOneCellSelectsIt) {
  auto t = small_config();
  t.grid.lrs = {5e-4};
  t.grid.batches = {4};
  t.grid.budget_steps = 3;
  const auto g = train::grid_search(corpus_, split_, vocab_, t);
  ASSERT_EQ(g.table.size(), 1u);
  EXPECT_EQ(g.best.lr, 5e-4);
  EXPECT_EQ(g.best.batch_size, 4);
  EXPECT_EQ(g.best.epochs, t.epochs);
}

TEST_F(TrainTest, GridRerunGivesIdenticalTable) {
  auto t = small_config();
  t.grid.lrs = {1e-3, 1e-2};
  t.grid.batches = {4, 8};
  t.grid.budget_steps = 2;
  const auto a = train::grid_search(corpus_, split_, vocab_, t);
  const auto b = train::grid_search(corpus_, split_, vocab_, t);
  ASSERT_EQ(a.table.size(), b.table.size());
  for (std::size_t i = 0; i < a.table.size(); ++i) EXPECT_EQ(a.table[i].val_loss, b.table[i].val_loss);
}

TEST(TrainConfigTest, JsonRoundTrip) {
  auto t = small_config();
  t.lr = 7e-4;
  t.ablation = Ablation::kTextSimclr;
  t.weights = {1.0, 0.0};
  t.grid.lrs = {1e-3};
  const auto back = train::train_config_from_json(train::to_json(t));
  EXPECT_EQ(train::to_json(back), train::to_json(t));
  EXPECT_EQ(back.lr, 7e-4);
  EXPECT_EQ(back.ablation, Ablation::kTextSimclr);
}

TEST(TrainConfigTest, UnknownKeyAndBadValuesAreRejected) {
  auto j = train::to_json(small_config());
  j["learning_rate"] = 1.0;
  EXPECT_THROW(train::train_config_from_json(j), ConfigError);
  auto t = small_config();
  t.lr = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = small_config();
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = small_config();
  t.ablation = Ablation::kNoLm;  // weights not forced
  EXPECT_THROW(t.validate(), ConfigError);
  EXPECT_THROW(train::parse_ablation("nope"), ConfigError);
}

TEST(TrainConfigTest, AblationNamesRoundTrip) {
  EXPECT_EQ(train::all_ablations().size(), 9u);
  for (auto a : train::all_ablations()) EXPECT_EQ(train::parse_ablation(train::ablation_name(a)), a);
}

TEST(AblationSuite, EmitsArmTimesIndicatorCells) {
  const auto c = small_corpus(6, 6);
  const auto split = corpus::split_corpus(c.ids(), 1);
  train::SuiteConfig sc;
  sc.train = small_config();
  sc.train.max_steps = 2;
  sc.head.steps = 20;
  sc.head.hidden = 8;
  sc.arms = {Ablation::kFull, Ablation::kPca};
  sc.seeds = {1, 2};
  sc.train.pca_components = 4;
  const auto s = train::run_ablation_suite(c, split, sc);
  EXPECT_EQ(s.rows.size(), 2u * 2u * 3u);
  ASSERT_EQ(s.cells.size(), 2u * 3u);
  for (const auto& cell : s.cells) {
    ASSERT_EQ(cell.r2.size(), 2u);
    EXPECT_DOUBLE_EQ(cell.mean_r2, 0.5 * (cell.r2[0] + cell.r2[1]));
    EXPECT_DOUBLE_EQ(cell.std_r2, 0.5 * std::abs(cell.r2[0] - cell.r2[1]));
  }
  EXPECT_EQ(s.cell("pca", "carbon").ablation, "pca");
  EXPECT_THROW(s.cell("pca", "nope"), NotFoundError);
}

}  // namespace
}  // namespace urbanclip
