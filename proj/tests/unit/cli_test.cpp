#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "urbanclip/cli/cli.hpp"
#include "urbanclip/cli/report.hpp"
#include "urbanclip/corpus/corpus.hpp"
#include "urbanclip/corpus/split.hpp"
#include "urbanclip/downstream/metrics.hpp"
#include "urbanclip/errors.hpp"
#include "urbanclip/util/binary_io.hpp"

namespace urbanclip {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("urbanclip_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string p(const std::string& rel) const { return (dir_ / rel).string(); }

  // A 16px corpus with a vocab and a tiny training config.
  void make_corpus() {
    ASSERT_EQ(run({"gen-corpus", "--city", "A", "--regions", "30", "--grid", "5x6", "--seed", "3", "--size",
                   "16", "--out", p("a")})
                  .code,
              0);
    ASSERT_EQ(run({"build-vocab", "--corpus", p("a"), "--out", p("v")}).code, 0);
    const json t = {{"epochs", 1},
                    {"batch_size", 8},
                    {"model",
                     {{"image_h", 16}, {"image_w", 16}, {"patch", 8}, {"d", 16}, {"n_heads", 2},
                      {"img_layers", 1}, {"txt_layers", 2}, {"max_text_len", 48}, {"proj_dim", 8}}}};
    std::ofstream(p("train.json")) << t.dump();
  }

  fs::path dir_;
};

TEST_F(Cli, CostPrintsTwentyTwo) {
  const auto r = run({"cost", "--L", "1", "--d", "1", "--m1", "2", "--m2", "2"});
  EXPECT_EQ(r.code, cli::kExitOk);
  EXPECT_NE(r.out.find("total 22\n"), std::string::npos) << r.out;
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"no-such-command"}).code, cli::kExitUsage);
  const auto r = run({"cost", "--L", "1", "--d", "1", "--m1", "2", "--m2", "2", "--bogus"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({"cost", "--L", "1"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"cost", "--L", "x", "--d", "1", "--m1", "2", "--m2", "2"}).code, cli::kExitUsage);
}

TEST_F(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, cli::kExitOk);
  for (const char* cmd : {"gen-corpus", "build-vocab", "refine", "pretrain", "grid", "ablate", "embed",
                          "finetune", "eval", "transfer", "similar", "caption", "cost", "serve", "report"}) {
    EXPECT_NE(r.out.find(cmd), std::string::npos) << cmd;
  }
  EXPECT_EQ(run({"pretrain", "--help"}).code, cli::kExitOk);
}

TEST_F(Cli, ModuleErrorsExitOne) {
  const auto r = run({"embed", "--checkpoint", p("missing"), "--corpus", p("x"), "--out", p("o")});
  EXPECT_EQ(r.code, cli::kExitUsage);  // CLI11 checks that the file exists
  EXPECT_EQ(run({"gen-corpus", "--city", "A", "--regions", "5", "--grid", "2x2", "--out", p("a")}).code,
            cli::kExitError);
  EXPECT_EQ(run({"gen-corpus", "--city", "A", "--regions", "4", "--grid", "2by2", "--out", p("a")}).code,
            cli::kExitError);
}

TEST_F(Cli, GenCorpusWritesRequestedRegionsAndSplits) {
  const auto r = run({"gen-corpus", "--city", "A", "--regions", "100", "--grid", "10x10", "--seed", "1",
                      "--size", "16", "--out", p("d")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto c = corpus::read_corpus(p("d"));
  EXPECT_EQ(c.records.size(), 100u);
  EXPECT_EQ(c.city, "A");
  const auto s = corpus::read_split(p("d/splits.json"));
  EXPECT_EQ(s.train_ids.size() + s.val_ids.size() + s.test_ids.size(), 100u);
}

TEST_F(Cli, OutputsNeedOverwriteAndRerunsAreIdentical) {
  const std::vector<std::string> args{"gen-corpus", "--city", "A", "--regions", "12", "--grid", "3x4",
                                      "--seed", "9", "--size", "16", "--out", p("d")};
  ASSERT_EQ(run(args).code, 0);
  const auto first = util::read_file(p("d/manifest.jsonl"));
  EXPECT_EQ(run(args).code, cli::kExitError);
  auto again = args;
  again.push_back("--overwrite");
  ASSERT_EQ(run(again).code, 0);
  EXPECT_EQ(util::read_file(p("d/manifest.jsonl")), first);
}

TEST_F(Cli, PretrainIsDeterministicAndFlagsOverrideConfig) {
  make_corpus();
  const auto base = std::vector<std::string>{"pretrain", "--corpus", p("a"), "--vocab", p("v/vocab.json"),
                                             "--config", p("train.json"), "--seed", "7", "--max-steps", "2"};
  auto a = base, b = base;
  a.insert(a.end(), {"--out", p("r1")});
  b.insert(b.end(), {"--out", p("r2")});
  ASSERT_EQ(run(a).code, 0);
  ASSERT_EQ(run(b).code, 0);
  EXPECT_EQ(util::read_file(p("r1/model.uckpt")), util::read_file(p("r2/model.uckpt")));
  EXPECT_EQ(util::read_file(p("r1/loss.csv")), util::read_file(p("r2/loss.csv")));
  const auto run_json = json::parse(util::read_file(p("r1/run.json")));
  EXPECT_EQ(run_json["config"]["seed"], 7);
  EXPECT_EQ(run_json["config"]["batch_size"], 8);
  EXPECT_EQ(run_json["config"]["max_steps"], 2);

  auto bad = base;
  bad.insert(bad.end(), {"--lr", "-1", "--out", p("r3")});
  EXPECT_EQ(run(bad).code, cli::kExitError);
}

TEST_F(Cli, DownstreamPipelineRuns) {
  make_corpus();
  ASSERT_EQ(run({"pretrain", "--corpus", p("a"), "--vocab", p("v/vocab.json"), "--config", p("train.json"),
                 "--out", p("r")})
                .code,
            0);
  const auto ckpt = p("r/model.uckpt");
  auto r = run({"finetune", "--checkpoint", ckpt, "--corpus", p("a"), "--head-steps", "20", "--out", p("h")});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run({"eval", "--checkpoint", ckpt, "--head", p("h/head.json"), "--corpus", p("a"), "--out", p("e")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = downstream::read_metrics_csv(p("e/metrics.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].source_city, "A");

  r = run({"transfer", "--checkpoint", ckpt, "--head", p("h/head.json"), "--target", p("a"), "--out", p("t")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto diag = downstream::read_metrics_csv(p("t/metrics.csv"));
  ASSERT_EQ(diag.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(diag[i].r2, rows[i].r2);

  r = run({"embed", "--checkpoint", ckpt, "--corpus", p("a"), "--out", p("em")});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run({"similar", "--embeddings", p("em"), "--query", "A_000_000", "-k", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("A_000_000\t1.000000\n", 0), 0u) << r.out;
  EXPECT_EQ(run({"similar", "--embeddings", p("em"), "--query", "nope"}).code, cli::kExitError);

  r = run({"caption", "--checkpoint", ckpt, "--vocab", p("v/vocab.json"), "--corpus", p("a"), "--region",
           "A_001_002"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(r.out.empty());
  EXPECT_EQ(run({"caption", "--checkpoint", ckpt, "--vocab", p("v/vocab.json")}).code, cli::kExitError);
}

TEST_F(Cli, RefineWritesNewCorpusAndReport) {
  ASSERT_EQ(run({"gen-corpus", "--city", "A", "--regions", "12", "--grid", "3x4", "--size", "16",
                 "--inject", "1", "--no-refine", "--out", p("raw")})
                .code,
            0);
  const auto r = run({"refine", "--corpus", p("raw"), "--out", p("clean")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(util::read_file(p("clean/refine_report.json")));
  EXPECT_EQ(report["regions"].size(), 12u);
  EXPECT_GT(report["removed_by_reason"].size(), 0u);
  EXPECT_EQ(corpus::read_corpus(p("clean")).records.size(), 12u);
  EXPECT_EQ(run({"refine", "--corpus", p("raw"), "--out", p("raw"), "--overwrite"}).code, cli::kExitError);
}

downstream::MetricsRow metric_row(std::string model, std::string target, std::string ind, double r2,
                                  std::uint64_t seed) {
  downstream::MetricsRow m;
  m.model = std::move(model);
  m.ablation = "full";
  m.source_city = "A";
  m.target_city = std::move(target);
  m.indicator = std::move(ind);
  m.r2 = r2;
  m.rmse = 1 - r2;
  m.mae = 2 - r2;
  m.seed = seed;
  m.n_samples = 10;
  return m;
}

TEST(Report, PivotAveragesSeedsAndMarksBestByBruteForce) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.5, 1.0);
  std::vector<downstream::MetricsRow> rows;
  const std::vector<std::string> models{"m1", "m2", "m3"}, cities{"A", "B"}, inds{"carbon", "gdp"};
  for (const auto& m : models)
    for (const auto& c : cities)
      for (const auto& i : inds)
        for (std::uint64_t s : {1, 2}) rows.push_back(metric_row(m, c, i, u(rng), s));
  const auto tables = cli::pivot_metrics(rows);
  ASSERT_EQ(tables.size(), 3u);
  for (const auto& t : tables) {
    ASSERT_EQ(t.rows.size(), 3u);
    ASSERT_EQ(t.columns.size(), 4u);
    EXPECT_EQ(t.filled_cells(), 12u);
    for (std::size_t j = 0; j < t.columns.size(); ++j) {
      std::vector<double> means;
      for (std::size_t i = 0; i < t.rows.size(); ++i) {
        double sum = 0;
        int n = 0;
        for (const auto& r : rows) {
          if (cli::row_label(r) != t.rows[i] || r.target_city != t.columns[j].first ||
              r.indicator != t.columns[j].second)
            continue;
          sum += t.metric == "r2" ? r.r2 : t.metric == "rmse" ? r.rmse : r.mae;
          ++n;
        }
        means.push_back(sum / n);
        EXPECT_NEAR(*t.cells[i][j], means.back(), 1e-15);
      }
      const auto best = t.higher_is_better ? std::max_element(means.begin(), means.end())
                                           : std::min_element(means.begin(), means.end());
      EXPECT_EQ(t.best[j], std::size_t(best - means.begin())) << t.metric << " column " << j;
    }
    const auto md = cli::render_markdown(t);
    EXPECT_EQ(std::count(md.begin(), md.end(), '\n'), 4 + 3);  // title, blank, header, rule, rows
    const auto svg = cli::render_svg(t);
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
  }
}

TEST(Report, MissingCellsStayEmpty) {
  const auto tables = cli::pivot_metrics({metric_row("m1", "A", "carbon", 0.5, 1),
                                          metric_row("m2", "B", "carbon", 0.2, 1)});
  EXPECT_EQ(tables[0].filled_cells(), 2u);
  EXPECT_FALSE(tables[0].cells[0][1].has_value());
  EXPECT_NE(cli::render_markdown(tables[0]).find(" - |"), std::string::npos);
}

TEST(Report, EmptyInputIsAnError) { EXPECT_THROW(cli::pivot_metrics({}), DomainError); }

TEST_F(Cli, ReportCommandWritesTablesAndCharts) {
  downstream::write_metrics_csv({metric_row("m1", "A", "carbon", 0.5, 1), metric_row("m2", "A", "carbon", 0.7, 1)},
                                p("m.csv"));
  const auto r = run({"report", "--metrics", p("m.csv"), "--out", p("rep")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("**0.7000**"), std::string::npos);
  for (const char* f : {"report.md", "r2.svg", "rmse.svg", "mae.svg"}) EXPECT_TRUE(fs::exists(dir_ / "rep" / f)) << f;
  std::ofstream(p("empty.csv")).close();
  EXPECT_EQ(run({"report", "--metrics", p("empty.csv"), "--out", p("rep2")}).code, cli::kExitError);
}

}  // namespace
}  // namespace urbanclip
