#include "urbanclip/cli/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "urbanclip/cli/report.hpp"
#include "urbanclip/corpus/corpus.hpp"
#include "urbanclip/corpus/split.hpp"
#include "urbanclip/downstream/encoder.hpp"
#include "urbanclip/downstream/evaluate.hpp"
#include "urbanclip/downstream/head.hpp"
#include "urbanclip/downstream/metrics.hpp"
#include "urbanclip/errors.hpp"
#include "urbanclip/model/checkpoint.hpp"
#include "urbanclip/model/config.hpp"
#include "urbanclip/service/service.hpp"
#include "urbanclip/textpipe/refine.hpp"
#include "urbanclip/textpipe/vocab.hpp"
#include "urbanclip/train/ablation.hpp"
#include "urbanclip/train/train.hpp"
#include "urbanclip/util/binary_io.hpp"
// After Eigen: <resolv.h> defines a macro named _res.
#include "httplib.h"

namespace urbanclip::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Shared helpers

void prepare_out(const fs::path& out, bool overwrite) {
  if (fs::exists(out) && !fs::is_directory(out)) throw IoError(out.string() + " is not a directory");
  if (fs::exists(out) && !fs::is_empty(out) && !overwrite) {
    throw IoError("output directory " + out.string() + " is not empty; pass --overwrite");
  }
  fs::create_directories(out);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(util::read_file(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

corpus::CorpusSplit load_split(const fs::path& corpus_dir, const std::string& split_path,
                               const corpus::Corpus& c, std::uint64_t seed) {
  if (!split_path.empty()) return corpus::read_split(split_path);
  if (fs::exists(corpus_dir / "splits.json")) return corpus::read_split(corpus_dir / "splits.json");
  return corpus::split_corpus(c.ids(), seed);
}

std::vector<std::string> split_ids(const corpus::CorpusSplit& split, const corpus::Corpus& c,
                                   const std::string& which) {
  if (which == "train") return split.train_ids;
  if (which == "val") return split.val_ids;
  if (which == "test") return split.test_ids;
  if (which == "all") return c.ids();
  throw ConfigError("--ids must be train, val, test or all");
}

std::vector<std::size_t> rows_of(const downstream::EmbeddingTable& table,
                                 const std::vector<std::string>& ids) {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) rows.push_back(table.row(id));
  return rows;
}

void write_predictions_csv(const downstream::Predictions& p, const fs::path& path) {
  std::string s = "region_id";
  for (const auto& o : p.outputs) s += "," + o;
  for (const auto& o : p.outputs) s += ",log_" + o;
  s += "\n";
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    s += p.ids[i];
    for (std::size_t k = 0; k < p.outputs.size(); ++k) s += fmt::format(",{:.17g}", p.raw.at(i, k));
    for (std::size_t k = 0; k < p.outputs.size(); ++k) s += fmt::format(",{:.17g}", p.log.at(i, k));
    s += "\n";
  }
  write_text(path, s);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "' in --seeds");
    }
  }
  if (out.empty()) throw ConfigError("--seeds is empty");
  return out;
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_report(const std::vector<downstream::MetricsRow>& rows, const fs::path& dir,
                  std::ostream& out) {
  std::string md;
  for (const auto& t : pivot_metrics(rows)) {
    md += render_markdown(t) + "\n";
    write_text(dir / (t.metric + ".svg"), render_svg(t));
  }
  write_text(dir / "report.md", md);
  out << md;
}

// Train-config flags that override keys of --config.
struct TrainFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string ablation;
  double lr = 0;
  int batch = 0;
  int epochs = 0;
  int max_steps = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* ablation_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* steps_opt = nullptr;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "train.json (TrainConfig keys)")->check(CLI::ExistingFile);
    seed_opt = app->add_option("--seed", seed, "run seed");
    ablation_opt = app->add_option("--ablation", ablation, "ablation arm");
    lr_opt = app->add_option("--lr", lr, "learning rate");
    batch_opt = app->add_option("--batch", batch, "batch size");
    epochs_opt = app->add_option("--epochs", epochs, "epochs");
    steps_opt = app->add_option("--max-steps", max_steps, "stop after this many steps");
  }

  train::TrainConfig resolve() const {
    train::TrainConfig t = config.empty() ? train::TrainConfig{} : train::load_train_config(config);
    if (*seed_opt) t.seed = seed;
    if (*lr_opt) t.lr = lr;
    if (*batch_opt) t.batch_size = batch;
    if (*epochs_opt) t.epochs = epochs;
    if (*steps_opt) t.max_steps = max_steps;
    if (*ablation_opt) t = train::for_ablation(t, train::parse_ablation(ablation));
    t.validate();
    return t;
  }
};

struct HeadFlags {
  std::string config;
  int hidden = 0;
  int steps = 0;
  double lr = 0;
  std::uint64_t seed = 0;
  CLI::Option* hidden_opt = nullptr;
  CLI::Option* steps_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* seed_opt = nullptr;

  void add_to(CLI::App* app) {
    app->add_option("--head-config", config, "head.json (HeadConfig keys)")->check(CLI::ExistingFile);
    hidden_opt = app->add_option("--hidden", hidden, "head hidden width");
    steps_opt = app->add_option("--head-steps", steps, "head Adam steps");
    lr_opt = app->add_option("--head-lr", lr, "head learning rate");
    seed_opt = app->add_option("--head-seed", seed, "head init seed");
  }

  downstream::HeadConfig resolve() const {
    downstream::HeadConfig h =
        config.empty() ? downstream::HeadConfig{} : downstream::head_config_from_json(read_json(config));
    if (*hidden_opt) h.hidden = hidden;
    if (*steps_opt) h.steps = steps;
    if (*lr_opt) h.lr = lr;
    if (*seed_opt) h.seed = seed;
    h.validate();
    return h;
  }
};

std::pair<int, int> parse_grid(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t a = 0, b = 0;
    const int rows = std::stoi(text.substr(0, x), &a);
    const int cols = std::stoi(text.substr(x + 1), &b);
    if (a != x || b != text.size() - x - 1) throw std::invalid_argument(text);
    return {rows, cols};
  } catch (const std::exception&) {
    throw ConfigError("--grid must look like 10x10, got '" + text + "'");
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Urban region profiling with image-text pretraining", "urbanclip"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every command");
  bool overwrite = false;
  std::function<void()> action;

  // gen-corpus
  struct {
    std::string city, grid, out, rules, split_path;
    int regions = 0, size = 64;
    std::uint64_t seed = 1;
    double noise = 0.05, inject = 0.3, captions = 4.5;
    bool no_refine = false;
  } gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Generate a synthetic city corpus");
  gen_cmd->add_option("--city", gen.city, "city name")->required();
  gen_cmd->add_option("--regions", gen.regions, "number of regions")->required();
  gen_cmd->add_option("--grid", gen.grid, "grid shape RxC")->required();
  gen_cmd->add_option("--seed", gen.seed, "city seed (also the split seed)");
  gen_cmd->add_option("--size", gen.size, "image side in pixels");
  gen_cmd->add_option("--noise", gen.noise, "indicator noise (fraction)");
  gen_cmd->add_option("--inject", gen.inject, "probability of an unfactual sentence");
  gen_cmd->add_option("--captions", gen.captions, "mean captions per image");
  gen_cmd->add_option("--rules", gen.rules, "refine_rules.json")->check(CLI::ExistingFile);
  gen_cmd->add_flag("--no-refine", gen.no_refine, "keep raw captions");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_flag("--overwrite", overwrite, "replace existing outputs");
  gen_cmd->callback([&] {
    action = [&] {
      const auto [rows, cols] = parse_grid(gen.grid);
      corpus::CorpusConfig cc;
      cc.render.height = cc.render.width = gen.size;
      cc.noise_sigma_frac = gen.noise;
      cc.inject_bad_prob = gen.inject;
      cc.captions_per_image = gen.captions;
      cc.refine = !gen.no_refine;
      if (!gen.rules.empty()) cc.rules = textpipe::load_rules(gen.rules);
      const auto c = corpus::build_corpus(gen.city, gen.seed, gen.regions, rows, cols, cc);
      corpus::write_corpus(c, gen.out, overwrite);
      corpus::write_split(corpus::split_corpus(c.ids(), gen.seed), fs::path(gen.out) / "splits.json");
      out << fmt::format("wrote {} regions of city {} to {}\n", c.records.size(), c.city, gen.out);
    };
  });

  // build-vocab
  struct {
    std::vector<std::string> corpora;
    int max_size = 2048;
    std::string out;
  } vocab_args;
  auto* vocab_cmd = app.add_subcommand("build-vocab", "Build vocab.json from corpus captions");
  vocab_cmd->add_option("--corpus", vocab_args.corpora, "corpus directory (repeatable)")->required();
  vocab_cmd->add_option("--max-size", vocab_args.max_size, "vocabulary size including specials");
  vocab_cmd->add_option("--out", vocab_args.out, "output directory")->required();
  vocab_cmd->add_flag("--overwrite", overwrite, "replace existing outputs");
  vocab_cmd->callback([&] {
    action = [&] {
      std::vector<std::string> captions;
      for (const auto& dir : vocab_args.corpora) {
        const auto c = corpus::read_corpus(dir);
        for (const auto& r : c.records) captions.insert(captions.end(), r.captions.begin(), r.captions.end());
      }
      const auto v = textpipe::build_vocab(captions, vocab_args.max_size);
      prepare_out(vocab_args.out, overwrite);
      v.save(fs::path(vocab_args.out) / "vocab.json");
      out << fmt::format("vocab of {} tokens from {} captions\n", v.size(), captions.size());
    };
  });

  // refine
  struct {
    std::string corpus, rules, out;
  } refine_args;
  auto* refine_cmd = app.add_subcommand("refine", "Refine the captions of a corpus into a new corpus");
  refine_cmd->add_option("--corpus", refine_args.corpus, "input corpus directory")->required();
  refine_cmd->add_option("--rules", refine_args.rules, "refine_rules.json")->check(CLI::ExistingFile);
  refine_cmd->add_option("--out", refine_args.out, "output corpus directory")->required();
  refine_cmd->add_flag("--overwrite", overwrite, "replace existing outputs");
  refine_cmd->callback([&] {
    action = [&] {
      if (fs::equivalent(refine_args.corpus, refine_args.out)) {
        throw ConfigError("refine never rewrites its input; choose another --out");
      }
      auto c = corpus::read_corpus(refine_args.corpus);
      const auto rules = refine_args.rules.empty() ? textpipe::default_rules() : textpipe::load_rules(refine_args.rules);
      json report = json::array();
      std::map<std::string, int> reasons;
      for (auto& rec : c.records) {
        std::vector<std::string> kept;
        json removed = json::array();
        for (const auto& caption : rec.captions) {
          const auto r = textpipe::refine_caption(caption, rec.scene, rules);
          for (const auto& [sentence, why] : r.report.removed) {
            removed.push_back({{"sentence", sentence}, {"reason", std::string(textpipe::reason_name(why))}});
            ++reasons[std::string(textpipe::reason_name(why))];
          }
          if (r.retained) kept.push_back(r.text);
        }
        if (kept.empty()) kept.push_back(rec.captions.front());
        rec.captions = std::move(kept);
        report.push_back({{"region_id", rec.region_id}, {"removed", removed}});
      }
      c.config.refine = true;
      c.config.rules = rules;
      corpus::write_corpus(c, refine_args.out, overwrite);
      if (fs::exists(fs::path(refine_args.corpus) / "splits.json")) {
        fs::copy_file(fs::path(refine_args.corpus) / "splits.json", fs::path(refine_args.out) / "splits.json",
                      fs::copy_options::overwrite_existing);
      }
      write_json(fs::path(refine_args.out) / "refine_report.json", {{"regions", report}, {"removed_by_reason", reasons}});
      for (const auto& [why, n] : reasons) out << fmt::format("removed {} {}\n", n, why);
    };
  });

  // pretrain
  struct {
    std::string corpus, vocab, split, out;
  } pre;
  TrainFlags pre_flags;
  auto* pre_cmd = app.add_subcommand("pretrain", "Pretrain one arm and write model.uckpt");
  pre_cmd->add_option("--corpus", pre.corpus, "corpus directory")->required();
  pre_cmd->add_option("--vocab", pre.vocab, "vocab.json")->required()->check(CLI::ExistingFile);
  pre_cmd->add_option("--split", pre.split, "splits.json (default: the corpus's)");
  pre_flags.add_to(pre_cmd);
  pre_cmd->add_option("--out", pre.out, "run directory")->required();
  pre_cmd->add_flag("--overwrite", overwrite, "replace existing outputs");
  pre_cmd->callback([&] {
    action = [&] {
      const auto t = pre_flags.resolve();
      const auto c = corpus::read_corpus(pre.corpus);
      const auto split = load_split(pre.corpus, pre.split, c, t.seed);
      const auto v = textpipe::Vocab::load(pre.vocab);
      prepare_out(pre.out, overwrite);
      const auto r = train::pretrain(c, split, v, t, pre.out);
      out << fmt::format("{} steps, best validation loss {:.6f} at step {}, {:.1f}s\n",
                         r.record.history.size(), r.record.best_val_loss, r.record.best_step,
                         r.record.wall_seconds);
    };
  });

  // grid
  struct {
    std::string corpus, vocab, split, out;
    int budget = 0;
  } grid_args;
  TrainFlags grid_flags;
  auto* grid_cmd = app.add_subcommand("grid", "Grid search over learning rate and batch size");
  grid_cmd->add_option("--corpus", grid_args.corpus, "corpus directory")->required();
  grid_cmd->add_option("--vocab", grid_args.vocab, "vocab.json")->required()->check(CLI::ExistingFile);
  grid_cmd->add_option("--split", grid_args.split, "splits.json (default: the corpus's)");
  auto* budget_opt = grid_cmd->add_option("--budget-steps", grid_args.budget, "steps per cell");
  grid_flags.add_to(grid_cmd);
  grid_cmd->add_option("--out", grid_args.out, "output directory")->required();
  grid_cmd->add_flag("--overwrite", overwrite, "replace existing outputs");
  grid_cmd->callback([&] {
    action = [&] {
      auto t = grid_flags.resolve();
      if (*budget_opt) t.grid.budget_steps = grid_args.budget;
      const auto c = corpus::read_corpus(grid_args.corpus);
      const auto split = load_split(grid_args.corpus, grid_args.split, c, t.seed);
      const auto v = textpipe::Vocab::load(grid_args.vocab);
      prepare_out(grid_args.out, overwrite);
      const auto g = train::grid_search(c, split, v, t);
      std::string csv = "lr,batch_size,val_loss\n";
      for (const auto& row : g.table) csv += fmt::format("{:.17g},{},{:.17g}\n", row.lr, row.batch_size, row.val_loss);
      write_text(fs::path(grid_args.out) / "grid.csv", csv);
      write_json(fs::path(grid_args.out) / "best_config.json", train::to_json(g.best));
      out << csv << fmt::format("best: lr {} batch {}\n", g.best.lr, g.best.batch_size);
    };
  });

  // ablate
  struct {
    std::string corpus, split, seeds = "1,2,3", arms, out;
  } abl;
  TrainFlags abl_flags;
  HeadFlags abl_head;
  auto* abl_cmd = app.add_subcommand("ablate", "Run ablation arms over seeds and report test R2");
  abl_cmd->add_option("--corpus", abl.corpus, "refined corpus directory")->required();
  abl_cmd->add_option("--split", abl.split, "splits.json (default: the corpus's)");
  abl_cmd->add_option("--seeds", abl.seeds, "comma-separated seeds");
  abl_cmd->add_option("--arms", abl.arms, "comma-separated arms (default: all)");
  abl_flags.add_to(abl_cmd);
  abl_head.add_to(abl_cmd);
  abl_cmd->add_option("--out", abl.out, "output directory")->required();
  abl_cmd->add_flag("--overwrite", overwrite, "replace existing outputs");
  abl_cmd->callback([&] {
    action = [&] {
      train::SuiteConfig sc;
      sc.train = abl_flags.resolve();
      sc.head = abl_head.resolve();
      sc.seeds = parse_seed_list(abl.seeds);
      if (!abl.arms.empty()) {
        sc.arms.clear();
        for (const auto& a : split_commas(abl.arms)) sc.arms.push_back(train::parse_ablation(a));
      }
      const auto c = corpus::read_corpus(abl.corpus);
      const auto split = load_split(abl.corpus, abl.split, c, sc.seeds.front());
      prepare_out(abl.out, overwrite);
      const auto s = train::run_ablation_suite(c, split, sc);
      downstream::write_metrics_csv(s.rows, fs::path(abl.out) / "metrics.csv");
      json cells = json::array();
      for (const auto& cell : s.cells) {
        cells.push_back({{"ablation", cell.ablation}, {"indicator", cell.indicator},
                         {"mean_r2", cell.mean_r2}, {"std_r2", cell.std_r2}, {"r2", cell.r2}});
      }
      write_json(fs::path(abl.out) / "suite.json", {{"cells", cells}, {"train", train::to_json(sc.train)}});
      write_report(s.rows, abl.out, out);
    };
  });

  // embed
  struct {
    std::string checkpoint, corpus, out;
  } emb;
  auto* emb_cmd = app.add_subcommand("embed", "Extract frozen image embeddings");
  emb_cmd->add_option("--checkpoint", emb.checkpoint, "model.uckpt")->required()->check(CLI::ExistingFile);
  emb_cmd->add_option("--corpus", emb.corpus, "corpus directory")->required();
  emb_cmd->add_option("--out", emb.out, "output directory")->required();
  emb_cmd->add_flag("--overwrite", overwrite, "replace existing outputs");
  emb_cmd->callback([&] {
    action = [&] {
      const auto enc = downstream::FrozenEncoder::load(emb.checkpoint);
      const auto c = corpus::read_corpus(emb.corpus);
      const auto table = downstream::extract_embeddings(enc, c);
      prepare_out(emb.out, overwrite);
      downstream::write_embeddings(table, emb.out);
      out << fmt::format("{} embeddings of dim {}\n", table.ids.size(), table.dim());
    };
  });

  // finetune
  struct {
    std::string checkpoint, corpus, split, prompt, indicator = "carbon", vocab, out;
  } ft;
  HeadFlags ft_head;
  auto* ft_cmd = app.add_subcommand("finetune", "Fit an indicator head on frozen embeddings");
  ft_cmd->add_option("--checkpoint", ft.checkpoint, "model.uckpt")->required()->check(CLI::ExistingFile);
  ft_cmd->add_option("--corpus", ft.corpus, "corpus directory")->required();
  ft_cmd->add_option("--split", ft.split, "splits.json (default: the corpus's)");
  ft_cmd->add_option("--prompt", ft.prompt, "task prompt, e.g. \"the carbon emission is\"");
  ft_cmd->add_option("--indicator", ft.indicator, "indicator for a prompt head");
  ft_cmd->add_option("--vocab", ft.vocab, "vocab.json (prompt heads)")->check(CLI::ExistingFile);
  ft_head.add_to(ft_cmd);
  ft_cmd->add_option("--out", ft.out, "output directory")->required();
  ft_cmd->add_flag("--overwrite", overwrite, "replace existing outputs");
  ft_cmd->callback([&] {
    action = [&] {
      const auto hc = ft_head.resolve();
      const auto ckpt = model::load_checkpoint(ft.checkpoint);
      const downstream::FrozenEncoder enc(ckpt);
      const auto c = corpus::read_corpus(ft.corpus);
      const auto split = load_split(ft.corpus, ft.split, c, hc.seed);
      std::vector<std::string> ids = split.train_ids;
      ids.insert(ids.end(), split.val_ids.begin(), split.val_ids.end());
      const auto records = downstream::select_records(c, ids);
      const auto table = downstream::extract_embeddings(enc, records);
      const auto y = downstream::log_targets(records);
      const auto train_rows = rows_of(table, split.train_ids);
      const auto val_rows = rows_of(table, split.val_ids);
      downstream::IndicatorHead head;
      if (ft.prompt.empty()) {
        head = downstream::fit_head(table.vectors, y, train_rows, val_rows, hc);
      } else {
        if (!enc.model()) throw ConfigError("prompt heads need an urbanclip checkpoint");
        if (ft.vocab.empty()) throw ConfigError("--prompt needs --vocab");
        const auto v = textpipe::Vocab::load(ft.vocab);
        const auto prompt = downstream::encode_prompt(*enc.model(), v, ft.prompt);
        head = downstream::prompt_fit_head(table.vectors, y, train_rows, val_rows, prompt,
                                           corpus::indicator_index(ft.indicator), hc);
      }
      prepare_out(ft.out, overwrite);
      head.save(fs::path(ft.out) / "head.json");
      out << fmt::format("head on {} train rows, best validation MSE {:.6f} at step {}\n",
                         train_rows.size(), head.best_val_mse, head.best_step);
    };
  });

  // eval
  struct {
    std::string checkpoint, head, corpus, split, ids = "test", out, model = "urbanclip", ablation;
    std::uint64_t seed = 0;
  } ev;
  auto* ev_cmd = app.add_subcommand("eval", "Score a head on a corpus split");
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "model.uckpt")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--head", ev.head, "head.json")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--corpus", ev.corpus, "corpus directory")->required();
  ev_cmd->add_option("--split", ev.split, "splits.json (default: the corpus's)");
  ev_cmd->add_option("--ids", ev.ids, "train, val, test or all");
  ev_cmd->add_option("--seed", ev.seed, "seed label for the metrics rows");
  ev_cmd->add_option("--model", ev.model, "model label");
  ev_cmd->add_option("--ablation", ev.ablation, "ablation label (default: the checkpoint's)");
  ev_cmd->add_option("--out", ev.out, "output directory")->required();
  ev_cmd->add_flag("--overwrite", overwrite, "replace existing outputs");
  ev_cmd->callback([&] {
    action = [&] {
      const auto ckpt = model::load_checkpoint(ev.checkpoint);
      const downstream::FrozenEncoder enc(ckpt);
      const auto head = downstream::IndicatorHead::load(ev.head);
      const auto c = corpus::read_corpus(ev.corpus);
      const auto split = load_split(ev.corpus, ev.split, c, ev.seed);
      const auto ids = split_ids(split, c, ev.ids);
      const auto p = downstream::predict(enc, head, c, ids);
      downstream::EvalLabels labels;
      labels.model = ev.model;
      labels.ablation = !ev.ablation.empty() ? ev.ablation : ckpt.meta.value("ablation", std::string("full"));
      labels.source_city = ckpt.meta.value("city", c.city);
      labels.seed = ev.seed;
      const auto rows = downstream::score(p, c, labels);
      prepare_out(ev.out, overwrite);
      downstream::write_metrics_csv(rows, fs::path(ev.out) / "metrics.csv");
      write_predictions_csv(p, fs::path(ev.out) / "predictions.csv");
      for (const auto& r : rows) {
        out << fmt::format("{:<10} R2 {:.4f}  RMSE {:.4f}  MAE {:.4f}  (n={})\n", r.indicator, r.r2, r.rmse,
                           r.mae, r.n_samples);
      }
    };
  });

  // transfer
  struct {
    std::string checkpoint, head, out, model = "urbanclip";
    std::vector<std::string> targets;
    bool refit = false;
    std::uint64_t seed = 0;
  } tr;
  HeadFlags tr_head;
  auto* tr_cmd = app.add_subcommand("transfer", "Apply a source encoder and head to target cities");
  tr_cmd->add_option("--checkpoint", tr.checkpoint, "source model.uckpt")->required()->check(CLI::ExistingFile);
  tr_cmd->add_option("--head", tr.head, "source head.json")->required()->check(CLI::ExistingFile);
  tr_cmd->add_option("--target", tr.targets, "target corpus directory (repeatable)")->required();
  tr_cmd->add_flag("--refit", tr.refit, "refit the head on each target's train split");
  tr_cmd->add_option("--seed", tr.seed, "seed label for the metrics rows");
  tr_head.add_to(tr_cmd);
  tr_cmd->add_option("--out", tr.out, "output directory")->required();
  tr_cmd->add_flag("--overwrite", overwrite, "replace existing outputs");
  tr_cmd->callback([&] {
    action = [&] {
      const auto ckpt = model::load_checkpoint(tr.checkpoint);
      const downstream::FrozenEncoder enc(ckpt);
      const auto source_head = downstream::IndicatorHead::load(tr.head);
      downstream::EvalLabels labels;
      labels.model = tr.model;
      labels.ablation = ckpt.meta.value("ablation", std::string("full"));
      labels.source_city = ckpt.meta.value("city", std::string());
      labels.seed = tr.seed;
      std::vector<downstream::MetricsRow> rows;
      for (const auto& dir : tr.targets) {
        const auto c = corpus::read_corpus(dir);
        const auto split = load_split(dir, "", c, tr.seed);
        // The source city is scored on its held-out split only.
        const bool diagonal = c.city == labels.source_city;
        const auto ids = diagonal || tr.refit ? split.test_ids : std::vector<std::string>{};
        auto head = source_head;
        if (tr.refit) {
          std::vector<std::string> fit_ids = split.train_ids;
          fit_ids.insert(fit_ids.end(), split.val_ids.begin(), split.val_ids.end());
          const auto records = downstream::select_records(c, fit_ids);
          const auto table = downstream::extract_embeddings(enc, records);
          head = downstream::fit_head(table.vectors, downstream::log_targets(records),
                                      rows_of(table, split.train_ids), rows_of(table, split.val_ids),
                                      tr_head.resolve());
        }
        const auto r = downstream::transfer_eval(enc, head, c, ids, labels);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      prepare_out(tr.out, overwrite);
      downstream::write_metrics_csv(rows, fs::path(tr.out) / "metrics.csv");
      for (const auto& r : rows) {
        out << fmt::format("{} -> {} {:<10} R2 {:.4f}\n", r.source_city, r.target_city, r.indicator, r.r2);
      }
    };
  });

  // similar
  struct {
    std::string embeddings, target, query, out;
    std::size_t k = 10;
  } sim;
  auto* sim_cmd = app.add_subcommand("similar", "Rank regions by embedding cosine");
  sim_cmd->add_option("--embeddings", sim.embeddings, "embedding directory of the query's city")->required();
  sim_cmd->add_option("--target", sim.target, "embedding directory to search (default: same)");
  sim_cmd->add_option("--query", sim.query, "query region id")->required();
  sim_cmd->add_option("-k,--k", sim.k, "number of results")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--out", sim.out, "optional output directory for similar.json");
  sim_cmd->add_flag("--overwrite", overwrite, "replace existing outputs");
  sim_cmd->callback([&] {
    action = [&] {
      const auto source = downstream::read_embeddings(sim.embeddings);
      const auto target = sim.target.empty() ? source : downstream::read_embeddings(sim.target);
      const std::size_t row = source.row(sim.query);
      const auto hits = downstream::find_similar({source.vectors.row(row), source.dim()}, target, sim.k);
      json list = json::array();
      for (const auto& h : hits) {
        list.push_back({{"region_id", h.region_id}, {"cosine", h.cosine}});
        out << fmt::format("{}\t{:.6f}\n", h.region_id, h.cosine);
      }
      if (!sim.out.empty()) {
        prepare_out(sim.out, overwrite);
        write_json(fs::path(sim.out) / "similar.json", {{"query", sim.query}, {"similar", list}});
      }
    };
  });

  // caption
  struct {
    std::string checkpoint, vocab, image, corpus, region;
    int max_len = 32;
  } cap;
  auto* cap_cmd = app.add_subcommand("caption", "Greedy caption for an image");
  cap_cmd->add_option("--checkpoint", cap.checkpoint, "model.uckpt")->required()->check(CLI::ExistingFile);
  cap_cmd->add_option("--vocab", cap.vocab, "vocab.json")->required()->check(CLI::ExistingFile);
  auto* image_opt = cap_cmd->add_option("--image", cap.image, ".imgf32 file")->check(CLI::ExistingFile);
  auto* corpus_opt = cap_cmd->add_option("--corpus", cap.corpus, "corpus directory");
  cap_cmd->add_option("--region", cap.region, "region id within --corpus")->needs(corpus_opt);
  image_opt->excludes(corpus_opt);
  cap_cmd->add_option("--max-len", cap.max_len, "maximum words")->check(CLI::PositiveNumber);
  cap_cmd->callback([&] {
    action = [&] {
      const auto ckpt = model::load_checkpoint(cap.checkpoint);
      const downstream::FrozenEncoder enc(ckpt);
      if (!enc.model()) throw ConfigError("captioning needs an urbanclip checkpoint");
      const auto v = textpipe::Vocab::load(cap.vocab);
      if (v.hash() != ckpt.vocab_hash) throw ConfigError("vocab does not match the checkpoint");
      if (ckpt.meta.contains("ablation") && ckpt.meta["ablation"] == "no_lm") {
        err << "warning: checkpoint was trained without the language-model loss\n";
      }
      corpus::ImageTensor img;
      if (!cap.image.empty()) {
        img = corpus::read_image(cap.image);
      } else if (!cap.corpus.empty() && !cap.region.empty()) {
        img = corpus::read_corpus(cap.corpus).find(cap.region).image;
      } else {
        throw ConfigError("caption needs --image or --corpus with --region");
      }
      out << downstream::greedy_caption(*enc.model(), v, img, cap.max_len) << "\n";
    };
  });

  // cost
  struct {
    double L = 0, d = 0, m1 = 0, m2 = 0;
  } cost;
  auto* cost_cmd = app.add_subcommand("cost", "Operation-count estimate of one forward pass");
  cost_cmd->add_option("--L", cost.L, "layers")->required();
  cost_cmd->add_option("--d", cost.d, "width")->required();
  cost_cmd->add_option("--m1", cost.m1, "image tokens")->required();
  cost_cmd->add_option("--m2", cost.m2, "text tokens")->required();
  cost_cmd->callback([&] {
    action = [&] {
      const auto e = model::estimate_cost(cost.L, cost.d, cost.m1, cost.m2);
      out << fmt::format("vit {:g}\npool {:g}\nembed {:g}\ntext {:g}\ncross {:g}\ntotal {:g}\n", e.vit,
                         e.pool, e.embed, e.text, e.cross, e.total);
    };
  });

  // serve
  struct {
    std::string checkpoint, head, vocab, host = "127.0.0.1";
    std::vector<std::string> corpora;
    int port = 8080;
  } srv;
  auto* srv_cmd = app.add_subcommand("serve", "Serve the read-only HTTP API");
  srv_cmd->add_option("--checkpoint", srv.checkpoint, "model.uckpt")->required()->check(CLI::ExistingFile);
  srv_cmd->add_option("--head", srv.head, "head.json")->required()->check(CLI::ExistingFile);
  srv_cmd->add_option("--vocab", srv.vocab, "vocab.json")->required()->check(CLI::ExistingFile);
  srv_cmd->add_option("--corpus", srv.corpora, "corpus directory (repeatable)")->required();
  srv_cmd->add_option("--host", srv.host, "bind address");
  srv_cmd->add_option("--port", srv.port, "port")->check(CLI::Range(1, 65535));
  srv_cmd->callback([&] {
    action = [&] {
      std::vector<corpus::Corpus> corpora;
      for (const auto& dir : srv.corpora) corpora.push_back(corpus::read_corpus(dir));
      auto state = std::make_shared<const service::ServiceState>(
          model::load_checkpoint(srv.checkpoint), downstream::IndicatorHead::load(srv.head),
          textpipe::Vocab::load(srv.vocab), std::move(corpora));
      httplib::Server server;
      service::register_routes(server, state);
      out << fmt::format("listening on http://{}:{}\n", srv.host, srv.port) << std::flush;
      if (!server.listen(srv.host, srv.port)) {
        throw IoError(fmt::format("cannot bind {}:{}", srv.host, srv.port));
      }
    };
  });

  // report
  struct {
    std::vector<std::string> metrics;
    std::string out;
  } rep;
  auto* rep_cmd = app.add_subcommand("report", "Pivot metrics.csv into tables and SVG charts");
  rep_cmd->add_option("--metrics", rep.metrics, "metrics.csv (repeatable)")->required();
  rep_cmd->add_option("--out", rep.out, "output directory")->required();
  rep_cmd->add_flag("--overwrite", overwrite, "replace existing outputs");
  rep_cmd->callback([&] {
    action = [&] {
      std::vector<downstream::MetricsRow> rows;
      for (const auto& path : rep.metrics) {
        const auto part = downstream::read_metrics_csv(path);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      prepare_out(rep.out, overwrite);
      write_report(rows, rep.out, out);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }
  try {
    if (action) action();
    return kExitOk;
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"urbanclip"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(int(argv.size()), argv.data(), out, err);
}

}  // namespace urbanclip::cli
