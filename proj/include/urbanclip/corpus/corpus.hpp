#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "urbanclip/corpus/region.hpp"
#include "urbanclip/corpus/scene.hpp"
#include "urbanclip/textpipe/caption.hpp"
#include "urbanclip/textpipe/refine.hpp"

namespace urbanclip::corpus {

struct CorpusConfig {
  RenderConfig render;
  double noise_sigma_frac = 0.05;
  double inject_bad_prob = 0.3;
  double captions_per_image = 4.5;
  bool refine = true;
  textpipe::RefineRules rules = textpipe::default_rules();
};

struct Corpus {
  std::string city;
  std::uint64_t seed = 0;
  int rows = 0;
  int cols = 0;
  CorpusConfig config;
  std::vector<RegionRecord> records;

  // Throws NotFoundError.
  const RegionRecord& find(const std::string& region_id) const;
  std::vector<std::string> ids() const;
  void reindex();

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

std::string make_region_id(const std::string& city, int i, int j);

// Density profile of a grid cell: dense near a seeded city centre, sparse
// towards the edge, with per-cell jitter.
DensityProfile cell_profile(std::uint64_t city_seed, int rows, int cols, int i, int j);

// One record per grid cell. Each cell's randomness derives from
// (city_seed, region_id) only. `provider` defaults to the synthetic one.
Corpus build_corpus(const std::string& city, std::uint64_t city_seed, int n_regions,
                    int rows, int cols, const CorpusConfig& config,
                    const textpipe::CaptionProvider* provider = nullptr);

// Replaces every record's captions from its scene (used by the unrefined-text
// ablation with refine = false).
void recaption(Corpus& corpus, const CorpusConfig& config,
               const textpipe::CaptionProvider* provider = nullptr);

// Writes manifest.jsonl, corpus.json and images/*.imgf32. Refuses an existing
// directory unless overwrite is set.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir, bool overwrite);
Corpus read_corpus(const std::filesystem::path& dir);

ImageTensor read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const ImageTensor& image);

}  // namespace urbanclip::corpus
