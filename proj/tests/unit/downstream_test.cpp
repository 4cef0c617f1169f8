#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "urbanclip/downstream/encoder.hpp"
#include "urbanclip/downstream/evaluate.hpp"
#include "urbanclip/downstream/head.hpp"
#include "urbanclip/downstream/metrics.hpp"
#include "urbanclip/errors.hpp"
#include "urbanclip/train/train.hpp"
#include "test_support.hpp"

namespace urbanclip {
namespace {

namespace fs = std::filesystem;
using downstream::FrozenEncoder;

// Spreadsheet-style recomputation: plain loops in long double.
struct Reference {
  long double r2, rmse, mae;
};

Reference reference_metrics(const std::vector<double>& y, const std::vector<double>& yh) {
  long double mean = 0;
  for (double v : y) mean += v;
  mean /= (long double)y.size();
  long double ss_res = 0, ss_tot = 0, abs_sum = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const long double e = (long double)y[i] - yh[i];
    ss_res += e * e;
    ss_tot += ((long double)y[i] - mean) * ((long double)y[i] - mean);
    abs_sum += e < 0 ? -e : e;
  }
  return {1 - ss_res / ss_tot, std::sqrt(ss_res / (long double)y.size()),
          abs_sum / (long double)y.size()};
}

fs::path temp_path(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("urbanclip_ds_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Metrics, HandExample) {
  const std::vector<double> y{1, 2, 3}, yh{1, 2, 4};
  EXPECT_NEAR(downstream::r2(y, yh), 0.5, 1e-12);
  EXPECT_NEAR(downstream::rmse(y, yh), std::sqrt(1.0 / 3.0), 1e-12);
  EXPECT_NEAR(downstream::mae(y, yh), 1.0 / 3.0, 1e-12);
}

TEST(Metrics, PerfectAndMeanPredictions) {
  const std::vector<double> y{0.5, -1, 4, 2};
  EXPECT_EQ(downstream::r2(y, y), 1.0);
  EXPECT_EQ(downstream::rmse(y, y), 0.0);
  EXPECT_EQ(downstream::mae(y, y), 0.0);
  const std::vector<double> mean(4, 1.375);
  EXPECT_NEAR(downstream::r2(y, mean), 0.0, 1e-15);
}

TEST(Metrics, MatchIndependentRecomputationOnRandomVectors) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> n(0, 3);
  std::uniform_int_distribution<int> len(2, 60);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> y(std::size_t(len(rng))), yh(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = n(rng) + 5;
      yh[i] = y[i] + n(rng) * 0.5;
    }
    const auto ref = reference_metrics(y, yh);
    EXPECT_NEAR(downstream::r2(y, yh), double(ref.r2), 1e-9);
    EXPECT_NEAR(downstream::rmse(y, yh), double(ref.rmse), 1e-9);
    EXPECT_NEAR(downstream::mae(y, yh), double(ref.mae), 1e-9);
    EXPECT_LE(downstream::r2(y, yh), 1.0);
    EXPECT_GE(downstream::rmse(y, yh), 0.0);
  }
}

TEST(Metrics, Errors) {
  const std::vector<double> c{2, 2, 2}, yh{1, 2, 3};
  EXPECT_THROW(downstream::r2(c, yh), DomainError);
  const std::vector<double> one{1};
  EXPECT_THROW(downstream::r2(one, one), DomainError);
  const std::vector<double> two{1, 2};
  EXPECT_THROW(downstream::rmse(two, yh), ShapeError);
}

TEST(Metrics, CsvRoundTrip) {
  const auto dir = temp_path("csv");
  std::vector<downstream::MetricsRow> rows(2);
  rows[0] = {"urbanclip", "full", "A", "B", "carbon", 0.1234567890123456789, 1.5, 0.25, 3, 10};
  rows[1] = {"urbanclip", "pca", "A", "A", "gdp", -0.5, 1e-300, 7, 1, 5};
  downstream::write_metrics_csv(rows, dir / "m.csv");
  const auto back = downstream::read_metrics_csv(dir / "m.csv");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].ablation, rows[i].ablation);
    EXPECT_EQ(back[i].target_city, rows[i].target_city);
    EXPECT_EQ(back[i].r2, rows[i].r2);
    EXPECT_EQ(back[i].rmse, rows[i].rmse);
    EXPECT_EQ(back[i].seed, rows[i].seed);
  }
  std::ifstream in(dir / "m.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "model,ablation,source_city,target_city,indicator,r2,rmse,mae,seed");
  std::ofstream(dir / "bad.csv") << header << "\nurbanclip,full,A,B,carbon,x,1,1,1\n";
  EXPECT_THROW(downstream::read_metrics_csv(dir / "bad.csv"), IoError);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Heads on synthetic features

nn::Tensor<float> random_features(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0, 1);
  nn::Tensor<float> x(nn::Shape{n, d});
  for (auto& v : x.span()) v = g(rng);
  return x;
}

std::vector<std::size_t> range(std::size_t a, std::size_t b) {
  std::vector<std::size_t> r;
  for (std::size_t i = a; i < b; ++i) r.push_back(i);
  return r;
}

downstream::HeadConfig quick_head() {
  downstream::HeadConfig c;
  c.hidden = 32;
  c.steps = 300;
  c.lr = 1e-2;
  c.seed = 4;
  return c;
}

TEST(Head, ConstantTargetsGiveNearConstantOutput) {
  const auto x = random_features(40, 6, 1);
  nn::Tensor<double> y(nn::Shape{40, 3});
  for (std::size_t i = 0; i < 40; ++i) {
    y.at(i, 0) = 2.5;
    y.at(i, 1) = -1;
    y.at(i, 2) = 0;
  }
  downstream::HeadConfig cfg;
  cfg.seed = 4;
  const auto head = downstream::fit_head(x, y, range(0, 30), range(30, 40), cfg);
  const auto pred = head.predict(x);
  double mse = 0;
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t k = 0; k < 3; ++k) mse += std::pow(pred.at(i, k) - y.at(i, k), 2);
  EXPECT_LT(mse / 90, 1e-3);
}

TEST(Head, LearnsALinearMapAndIsDeterministic) {
  const auto x = random_features(200, 5, 2);
  nn::Tensor<double> y(nn::Shape{200, 3});
  for (std::size_t i = 0; i < 200; ++i) {
    y.at(i, 0) = x.at(i, 0) - 2 * x.at(i, 1);
    y.at(i, 1) = 0.5 * x.at(i, 2) + 3;
    y.at(i, 2) = x.at(i, 3) * x.at(i, 4);
  }
  const auto head = downstream::fit_head(x, y, range(0, 140), range(140, 170), quick_head());
  EXPECT_EQ(head.outputs.size(), 3u);
  const auto pred = head.predict(x);
  ASSERT_EQ(pred.cols(), 3u);
  std::vector<double> t, p;
  for (std::size_t i = 170; i < 200; ++i) {
    t.push_back(y.at(i, 0));
    p.push_back(pred.at(i, 0));
  }
  EXPECT_GT(downstream::r2(t, p), 0.9);

  const auto again = downstream::fit_head(x, y, range(0, 140), range(140, 170), quick_head());
  EXPECT_TRUE(again.predict(x).vec() == pred.vec());

  const auto single = downstream::fit_head(x, y, range(0, 140), range(140, 170), quick_head(), {1});
  EXPECT_EQ(single.predict(x).cols(), 1u);
  EXPECT_EQ(single.outputs, std::vector<std::string>{"population"});
}

TEST(Head, SaveLoadPreservesPredictions) {
  const auto x = random_features(30, 4, 3);
  nn::Tensor<double> y(nn::Shape{30, 3});
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t k = 0; k < 3; ++k) y.at(i, k) = x.at(i, k);
  auto cfg = quick_head();
  cfg.steps = 20;
  const auto head = downstream::fit_head(x, y, range(0, 20), range(20, 30), cfg);
  const auto dir = temp_path("head");
  head.save(dir / "head.json");
  const auto back = downstream::IndicatorHead::load(dir / "head.json");
  EXPECT_TRUE(back.predict(x).vec() == head.predict(x).vec());
  EXPECT_THROW(downstream::IndicatorHead::load(dir / "missing.json"), IoError);
  fs::remove_all(dir);
}

TEST(Head, ZeroAlignerMakesPromptInertAtInit) {
  const auto x = random_features(30, 4, 5);
  nn::Tensor<double> y(nn::Shape{30, 3});
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t k = 0; k < 3; ++k) y.at(i, k) = x.at(i, 0) + double(k);
  auto cfg = quick_head();
  cfg.steps = 0;
  const auto a = downstream::prompt_fit_head(x, y, range(0, 20), range(20, 30), {1, 2, 3}, 0, cfg);
  const auto b = downstream::prompt_fit_head(x, y, range(0, 20), range(20, 30), {-5, 0, 9}, 0, cfg);
  const auto aligned = a.aligned_prompt();
  for (double v : aligned.span()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(a.predict(x).vec() == b.predict(x).vec());
  EXPECT_EQ(a.outputs, std::vector<std::string>{"carbon"});

  cfg.steps = 100;
  const auto trained = downstream::prompt_fit_head(x, y, range(0, 20), range(20, 30), {1, 2, 3}, 0, cfg);
  const auto pred = trained.predict(x);
  for (double v : pred.span()) EXPECT_TRUE(std::isfinite(v));
}

// ---------------------------------------------------------------------------
// Trained tiny model on a 32-record corpus

class TrainedModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    corpus::CorpusConfig cc;
    cc.render.height = cc.render.width = 16;
    corpus_ = new corpus::Corpus(corpus::build_corpus("D", 11, 32, 4, 8, cc));
    std::vector<std::string> caps;
    for (const auto& r : corpus_->records) caps.insert(caps.end(), r.captions.begin(), r.captions.end());
    vocab_ = new textpipe::Vocab(textpipe::build_vocab(caps));
    split_ = new corpus::CorpusSplit();
    const auto ids = corpus_->ids();
    split_->train_ids = ids;
    split_->val_ids = {ids.front()};
    split_->test_ids.assign(ids.begin(), ids.begin() + 10);
    train::TrainConfig t;
    t.model = testing::tiny_config();
    t.model.d = 32;
    t.model.max_text_len = 48;
    t.batch_size = 32;
    t.epochs = 400;
    t.lr = 3e-3;
    t.seed = 2;
    ckpt_ = new model::Checkpoint(train::pretrain(*corpus_, *split_, *vocab_, t).checkpoint);
  }
  static void TearDownTestSuite() {
    delete corpus_;
    delete vocab_;
    delete split_;
    delete ckpt_;
  }
  static std::vector<const corpus::RegionRecord*> all_records() {
    std::vector<const corpus::RegionRecord*> out;
    for (const auto& r : corpus_->records) out.push_back(&r);
    return out;
  }

  static corpus::Corpus* corpus_;
  static textpipe::Vocab* vocab_;
  static corpus::CorpusSplit* split_;
  static model::Checkpoint* ckpt_;
};

corpus::Corpus* TrainedModel::corpus_ = nullptr;
textpipe::Vocab* TrainedModel::vocab_ = nullptr;
corpus::CorpusSplit* TrainedModel::split_ = nullptr;
model::Checkpoint* TrainedModel::ckpt_ = nullptr;

TEST_F(TrainedModel, EmbeddingsHaveProjectionShapeAndIgnoreCaptions) {
  const FrozenEncoder enc(*ckpt_);
  const auto table = downstream::extract_embeddings(enc, *corpus_);
  EXPECT_EQ(table.ids.size(), 32u);
  EXPECT_EQ(table.dim(), std::size_t(ckpt_->config.proj_dim));

  auto recaptioned = *corpus_;
  for (auto& r : recaptioned.records) r.captions = {"nothing to see here ."};
  EXPECT_TRUE(downstream::extract_embeddings(enc, recaptioned).vectors.vec() == table.vectors.vec());

  const auto one_by_one = downstream::extract_embeddings(enc, all_records(), 1);
  EXPECT_TRUE(one_by_one.vectors.vec() == table.vectors.vec());

  const auto& r0 = corpus_->records[0];
  const auto twice = enc.embed({&r0.image, &r0.image});
  EXPECT_TRUE(testing::rows_equal(twice, 0, twice, 1));
}

TEST_F(TrainedModel, EmbeddingFileRoundTrip) {
  const FrozenEncoder enc(*ckpt_);
  const auto table = downstream::extract_embeddings(enc, *corpus_);
  const auto dir = temp_path("emb");
  downstream::write_embeddings(table, dir);
  const auto back = downstream::read_embeddings(dir);
  EXPECT_EQ(back.ids, table.ids);
  EXPECT_TRUE(back.vectors.vec() == table.vectors.vec());
  EXPECT_EQ(back.row(table.ids[5]), 5u);
  EXPECT_THROW(back.row("nope"), NotFoundError);
  fs::remove_all(dir);
}

TEST_F(TrainedModel, ImageSizeMismatchIsRejected) {
  const FrozenEncoder enc(*ckpt_);
  const auto big = testing::random_image(32, 32, 1);
  EXPECT_ANY_THROW(enc.embed({&big}));
}

TEST_F(TrainedModel, FineTuningLeavesEncoderBytesUnchanged) {
  const FrozenEncoder enc(*ckpt_);
  const auto before = enc.model()->params().clone();
  const auto table = downstream::extract_embeddings(enc, *corpus_);
  const auto y = downstream::log_targets(all_records());
  const auto head = downstream::fit_head(table.vectors, y, range(0, 24), range(24, 32), quick_head());
  (void)head.predict(table.vectors);
  EXPECT_TRUE(before.same_values(enc.model()->params()));
  EXPECT_TRUE(before.same_values(ckpt_->params));
}

TEST_F(TrainedModel, PredictionsAreNonNegativeAndConsistent) {
  const FrozenEncoder enc(*ckpt_);
  const auto table = downstream::extract_embeddings(enc, *corpus_);
  const auto y = downstream::log_targets(all_records());
  const auto head = downstream::fit_head(table.vectors, y, range(0, 24), range(24, 32), quick_head());
  const auto p = downstream::predict(enc, head, *corpus_, corpus_->ids());
  for (std::size_t i = 0; i < p.raw.numel(); ++i) {
    EXPECT_GE(p.raw[i], 0.0);
    EXPECT_EQ(p.raw[i], std::max(0.0, std::expm1(p.log[i])));
  }
  const auto from_table = downstream::predict(head, table, corpus_->ids());
  EXPECT_TRUE(from_table.log.vec() == p.log.vec());
}

TEST_F(TrainedModel, TransferDiagonalEqualsInCityEval) {
  const FrozenEncoder enc(*ckpt_);
  const auto table = downstream::extract_embeddings(enc, *corpus_);
  const auto y = downstream::log_targets(all_records());
  const auto head = downstream::fit_head(table.vectors, y, range(10, 26), range(26, 32), quick_head());
  downstream::EvalLabels labels;
  labels.source_city = corpus_->city;
  labels.seed = 2;
  const auto eval = downstream::score(downstream::predict(head, table, split_->test_ids), *corpus_, labels);
  const auto transfer = downstream::transfer_eval(enc, head, *corpus_, split_->test_ids, labels);
  ASSERT_EQ(eval.size(), 3u);
  ASSERT_EQ(transfer.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(transfer[k].indicator, eval[k].indicator);
    EXPECT_EQ(transfer[k].target_city, corpus_->city);
    EXPECT_EQ(transfer[k].r2, eval[k].r2);
    EXPECT_EQ(transfer[k].rmse, eval[k].rmse);
    EXPECT_EQ(transfer[k].mae, eval[k].mae);
  }

  corpus::CorpusConfig cc;
  cc.render.height = cc.render.width = 32;
  const auto other = corpus::build_corpus("E", 12, 9, 3, 3, cc);
  EXPECT_THROW(downstream::transfer_eval(enc, head, other, {}, labels), ConfigError);
}

TEST_F(TrainedModel, FindSimilarMatchesBruteForce) {
  const FrozenEncoder enc(*ckpt_);
  const auto table = downstream::extract_embeddings(enc, *corpus_);
  for (std::size_t q = 0; q < table.ids.size(); ++q) {
    const auto query = std::span<const float>(table.vectors.row(q), table.dim());
    const auto hits = downstream::find_similar(query, table, 5);
    ASSERT_EQ(hits.size(), 5u);
    EXPECT_EQ(hits[0].region_id, table.ids[q]);
    EXPECT_NEAR(hits[0].cosine, 1.0, 1e-6);

    std::vector<std::pair<double, std::string>> brute;
    for (std::size_t i = 0; i < table.ids.size(); ++i) {
      double dot = 0, nq = 0, ni = 0;
      for (std::size_t c = 0; c < table.dim(); ++c) {
        dot += double(query[c]) * double(table.vectors.at(i, c));
        nq += double(query[c]) * double(query[c]);
        ni += double(table.vectors.at(i, c)) * double(table.vectors.at(i, c));
      }
      brute.push_back({std::clamp(dot / std::sqrt(nq * ni), -1.0, 1.0), table.ids[i]});
    }
    std::sort(brute.begin(), brute.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t k = 0; k < hits.size(); ++k) {
      EXPECT_EQ(hits[k].region_id, brute[k].second);
      EXPECT_NEAR(hits[k].cosine, brute[k].first, 1e-12);
      EXPECT_LE(std::abs(hits[k].cosine), 1.0);
    }
  }
  const auto query = std::span<const float>(table.vectors.row(0), table.dim());
  EXPECT_EQ(downstream::find_similar(query, table, 1000).size(), table.ids.size());
}

TEST(FindSimilar, TiesBreakByRegionId) {
  downstream::EmbeddingTable t;
  t.ids = {"c", "a", "b"};
  t.vectors = nn::Tensor<float>(nn::Shape{3, 2}, std::vector<float>{1, 0, 2, 0, 3, 0});
  const std::vector<float> q{1, 0};
  const auto hits = downstream::find_similar(q, t, 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].region_id, "a");
  EXPECT_EQ(hits[1].region_id, "b");
  EXPECT_EQ(hits[2].region_id, "c");
}

TEST_F(TrainedModel, GreedyCaptionIsDeterministicAndBounded) {
  const FrozenEncoder enc(*ckpt_);
  const auto& img = corpus_->records[3].image;
  const auto a = downstream::greedy_caption(*enc.model(), *vocab_, img);
  EXPECT_EQ(a, downstream::greedy_caption(*enc.model(), *vocab_, img));
  for (int max_len : {1, 3, 8}) {
    const auto s = downstream::greedy_caption(*enc.model(), *vocab_, img, max_len);
    EXPECT_LE(textpipe::normalize_words(s).size(), std::size_t(max_len)) << s;
  }
}

TEST_F(TrainedModel, GreedyCaptionsReproduceDensityWords) {
  const FrozenEncoder enc(*ckpt_);
  int hits = 0;
  for (const auto& r : corpus_->records) {
    const auto caption = downstream::greedy_caption(*enc.model(), *vocab_, r.image);
    const auto words = textpipe::normalize_words(caption);
    const std::string want(corpus::profile_name(r.scene->profile));
    if (std::find(words.begin(), words.end(), want) != words.end()) ++hits;
  }
  EXPECT_GE(hits, 16) << hits << " of 32";
}

TEST_F(TrainedModel, PromptEncodingIgnoresPadding) {
  const FrozenEncoder enc(*ckpt_);
  const auto& net = *enc.model();
  const std::string prompt = "the carbon emission is";
  const auto e = downstream::encode_prompt(net, *vocab_, prompt);
  ASSERT_EQ(e.size(), std::size_t(ckpt_->config.proj_dim));

  // Same prompt packed next to a longer caption, so its row carries a PAD tail.
  const int m2 = ckpt_->config.max_text_len;
  const auto short_seq = textpipe::tokenize(prompt, *vocab_, m2);
  const auto long_seq = textpipe::tokenize(corpus_->records[0].captions[0], *vocab_, m2);
  ASSERT_GT(long_seq.length, short_seq.length);
  const auto packed = model::PackedText::pack({short_seq, long_seq});
  nn::NoGradGuard guard;
  const auto text = net.encode_text(packed);
  for (std::size_t c = 0; c < e.size(); ++c) EXPECT_EQ(e[c], double(text.cls.value().at(0, c)));

  // All-unknown prompts still encode.
  EXPECT_EQ(downstream::encode_prompt(net, *vocab_, "zzz qqq").size(), e.size());
}

TEST(PcaEncoder, EmbedsByProjection) {
  model::ModelConfig cfg = testing::tiny_config();
  const std::size_t D = 16 * 16 * 3;
  Eigen::VectorXd mean = Eigen::VectorXd::Constant(Eigen::Index(D), 0.5);
  Eigen::MatrixXd comps = Eigen::MatrixXd::Zero(2, Eigen::Index(D));  // one component per row
  comps(0, 0) = 1;
  comps(1, 5) = 1;
  const FrozenEncoder enc(downstream::pca_checkpoint(cfg, mean, comps));
  EXPECT_EQ(enc.kind(), "pca");
  EXPECT_EQ(enc.dim(), 2u);
  EXPECT_EQ(enc.model(), nullptr);
  const auto img = testing::random_image(16, 16, 8);
  const auto e = enc.embed({&img});
  EXPECT_NEAR(e.at(0, 0), img.data[0] - 0.5, 1e-6);
  EXPECT_NEAR(e.at(0, 1), img.data[5] - 0.5, 1e-6);
}

}  // namespace
}  // namespace urbanclip
