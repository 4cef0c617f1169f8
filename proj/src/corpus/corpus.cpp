#include "urbanclip/corpus/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <fmt/format.h>
#include "json.hpp"

#include "urbanclip/errors.hpp"
#include "urbanclip/util/binary_io.hpp"
#include "urbanclip/util/hash.hpp"

namespace urbanclip::corpus {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json indicators_json(const Indicators& ind) {
  json j = json::object();
  for (std::size_t k = 0; k < kNumIndicators; ++k) j[std::string(kIndicatorNames[k])] = ind.v[k];
  return j;
}

Indicators indicators_from(const json& j) {
  Indicators ind;
  for (std::size_t k = 0; k < kNumIndicators; ++k) {
    ind.v[k] = j.at(std::string(kIndicatorNames[k])).get<double>();
  }
  return ind;
}

json scene_json(const SceneSpec& s) {
  return {{"seed", s.seed},
          {"profile", std::string(profile_name(s.profile))},
          {"building_count", s.building_count},
          {"road_count", s.road_count},
          {"green_blob_count", s.green_blob_count},
          {"water_blob_count", s.water_blob_count},
          {"coverage",
           {{"b", s.coverage.b}, {"r", s.coverage.r}, {"g", s.coverage.g}, {"w", s.coverage.w}}}};
}

SceneSpec scene_from(const json& j) {
  SceneSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.profile = parse_profile(j.at("profile").get<std::string>());
  s.building_count = j.at("building_count").get<int>();
  s.road_count = j.at("road_count").get<int>();
  s.green_blob_count = j.at("green_blob_count").get<int>();
  s.water_blob_count = j.at("water_blob_count").get<int>();
  const json& c = j.at("coverage");
  s.coverage = {c.at("b").get<double>(), c.at("r").get<double>(), c.at("g").get<double>(),
                c.at("w").get<double>()};
  return s;
}

json config_json(const CorpusConfig& c) {
  return {{"height", c.render.height},
          {"width", c.render.width},
          {"patch", c.render.patch},
          {"noise_sigma_frac", c.noise_sigma_frac},
          {"inject_bad_prob", c.inject_bad_prob},
          {"captions_per_image", c.captions_per_image},
          {"refine", c.refine}};
}

CorpusConfig config_from(const json& j) {
  CorpusConfig c;
  c.render.height = j.at("height").get<int>();
  c.render.width = j.at("width").get<int>();
  c.render.patch = j.at("patch").get<int>();
  c.noise_sigma_frac = j.at("noise_sigma_frac").get<double>();
  c.inject_bad_prob = j.at("inject_bad_prob").get<double>();
  c.captions_per_image = j.at("captions_per_image").get<double>();
  c.refine = j.at("refine").get<bool>();
  return c;
}

std::vector<std::string> caption_region(const RegionRecord& rec,
                                        const CorpusConfig& config,
                                        const textpipe::CaptionProvider& provider) {
  const auto raw = provider.generate(rec.image, rec.scene, "Describe the satellite image.");
  if (!config.refine) return raw;
  std::vector<std::string> kept;
  const textpipe::RefinedCaption* best = nullptr;
  std::vector<textpipe::RefinedCaption> refined;
  refined.reserve(raw.size());
  for (const auto& c : raw) refined.push_back(textpipe::refine_caption(c, rec.scene, config.rules));
  for (const auto& r : refined) {
    if (r.retained) kept.push_back(r.text);
    if (!r.text.empty() && (!best || r.report.scores.second > best->report.scores.second)) {
      best = &r;
    }
  }
  if (kept.empty()) kept.push_back(best ? best->text : raw.front());
  return kept;
}

}  // namespace

const RegionRecord& Corpus::find(const std::string& region_id) const {
  auto it = index_.find(region_id);
  if (it == index_.end()) throw NotFoundError("unknown region '" + region_id + "'");
  return records[it->second];
}

std::vector<std::string> Corpus::ids() const {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.region_id);
  return out;
}

void Corpus::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!index_.emplace(records[i].region_id, i).second) {
      throw ConfigError("duplicate region id '" + records[i].region_id + "'");
    }
  }
}

std::string make_region_id(const std::string& city, int i, int j) {
  return fmt::format("{}_{:03}_{:03}", city, i, j);
}

DensityProfile cell_profile(std::uint64_t city_seed, int rows, int cols, int i, int j) {
  std::mt19937_64 layout(util::derive_seed(city_seed, "layout"));
  std::uniform_real_distribution<double> mid(0.25, 0.75);
  const double ci = mid(layout) * rows, cj = mid(layout) * cols;
  const double radius = 0.5 * std::max(rows, cols);
  const double u = std::hypot(i + 0.5 - ci, j + 0.5 - cj) / radius;
  std::mt19937_64 cell(util::derive_seed(city_seed, fmt::format("profile/{}/{}", i, j)));
  const double score = 1.0 - u + std::normal_distribution<double>(0.0, 0.25)(cell);
  if (score > 0.6) return DensityProfile::kDense;
  if (score > 0.25) return DensityProfile::kModerate;
  return DensityProfile::kSparse;
}

Corpus build_corpus(const std::string& city, std::uint64_t city_seed, int n_regions,
                    int rows, int cols, const CorpusConfig& config,
                    const textpipe::CaptionProvider* provider) {
  validate(config.render);
  if (rows <= 0 || cols <= 0 || n_regions != rows * cols) {
    throw ConfigError(fmt::format("n_regions {} does not match grid {}x{}", n_regions, rows, cols));
  }
  if (city.empty() || city.find_first_of("/\\ ") != std::string::npos) {
    throw ConfigError("city name must be non-empty without spaces or slashes");
  }
  Corpus corpus;
  corpus.city = city;
  corpus.seed = city_seed;
  corpus.rows = rows;
  corpus.cols = cols;
  corpus.config = config;
  corpus.records.reserve(std::size_t(n_regions));
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      RegionRecord rec;
      rec.region_id = make_region_id(city, i, j);
      rec.city = city;
      rec.grid_i = i;
      rec.grid_j = j;
      rec.image_path = "images/" + rec.region_id + ".imgf32";
      const std::uint64_t region_seed = util::derive_seed(city_seed, rec.region_id);
      auto [image, scene] = generate_scene(util::derive_seed(region_seed, "scene"),
                                           cell_profile(city_seed, rows, cols, i, j),
                                           config.render);
      rec.image = std::move(image);
      rec.indicators_raw = derive_indicators(scene, config.noise_sigma_frac,
                                             util::derive_seed(region_seed, "indicators"));
      rec.indicators_log = log_scale(rec.indicators_raw);
      rec.scene = scene;
      corpus.records.push_back(std::move(rec));
    }
  }
  corpus.reindex();
  recaption(corpus, config, provider);
  return corpus;
}

void recaption(Corpus& corpus, const CorpusConfig& config,
               const textpipe::CaptionProvider* provider) {
  textpipe::SyntheticCaptionProvider fallback(
      {config.inject_bad_prob, config.captions_per_image,
       util::derive_seed(corpus.seed, "captions")});
  const textpipe::CaptionProvider& p = provider ? *provider : fallback;
  for (auto& rec : corpus.records) rec.captions = caption_region(rec, config, p);
}

ImageTensor read_image(const fs::path& path) {
  auto blob = util::read_f32_blob(path);
  ImageTensor img;
  img.height = blob.h;
  img.width = blob.w;
  img.channels = blob.c;
  img.data = std::move(blob.data);
  return img;
}

void write_image(const fs::path& path, const ImageTensor& image) {
  util::write_f32_blob(path, {image.height, image.width, image.channels, image.data});
}

void write_corpus(const Corpus& corpus, const fs::path& dir, bool overwrite) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!overwrite) {
      throw IoError("output directory " + dir.string() + " exists; pass overwrite to replace it");
    }
    fs::remove(dir / "manifest.jsonl");
    fs::remove(dir / "corpus.json");
    fs::remove(dir / "refine_rules.json");
    fs::remove_all(dir / "images");
  }
  fs::create_directories(dir / "images");
  std::string manifest;
  for (const auto& r : corpus.records) {
    const json line = {{"region_id", r.region_id},
                       {"city", r.city},
                       {"grid_ij", {r.grid_i, r.grid_j}},
                       {"image_path", r.image_path},
                       {"captions", r.captions},
                       {"indicators_raw", indicators_json(r.indicators_raw)},
                       {"indicators_log", indicators_json(r.indicators_log)},
                       {"scene", r.scene ? scene_json(*r.scene) : json(nullptr)}};
    manifest += line.dump() + "\n";
    write_image(dir / r.image_path, r.image);
  }
  util::write_file_atomic(dir / "manifest.jsonl", manifest);
  const json meta = {{"city", corpus.city},
                     {"seed", corpus.seed},
                     {"rows", corpus.rows},
                     {"cols", corpus.cols},
                     {"config", config_json(corpus.config)}};
  util::write_file_atomic(dir / "corpus.json", meta.dump(2) + "\n");
  textpipe::save_rules(corpus.config.rules, dir / "refine_rules.json");
}

Corpus read_corpus(const fs::path& dir) {
  Corpus corpus;
  const json meta = json::parse(util::read_file(dir / "corpus.json"));
  corpus.city = meta.at("city").get<std::string>();
  corpus.seed = meta.at("seed").get<std::uint64_t>();
  corpus.rows = meta.at("rows").get<int>();
  corpus.cols = meta.at("cols").get<int>();
  corpus.config = config_from(meta.at("config"));
  if (fs::exists(dir / "refine_rules.json")) {
    corpus.config.rules = textpipe::load_rules(dir / "refine_rules.json");
  }
  std::ifstream in(dir / "manifest.jsonl");
  if (!in) throw IoError("cannot open " + (dir / "manifest.jsonl").string());
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      RegionRecord r;
      r.region_id = j.at("region_id").get<std::string>();
      r.city = j.at("city").get<std::string>();
      r.grid_i = j.at("grid_ij").at(0).get<int>();
      r.grid_j = j.at("grid_ij").at(1).get<int>();
      r.image_path = j.at("image_path").get<std::string>();
      r.captions = j.at("captions").get<std::vector<std::string>>();
      r.indicators_raw = indicators_from(j.at("indicators_raw"));
      r.indicators_log = indicators_from(j.at("indicators_log"));
      if (!j.at("scene").is_null()) r.scene = scene_from(j.at("scene"));
      r.image = read_image(dir / r.image_path);
      corpus.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw IoError(fmt::format("manifest line {}: {}", line_no, e.what()));
    }
  }
  corpus.reindex();
  return corpus;
}

}  // namespace urbanclip::corpus
