#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "urbanclip/corpus/corpus.hpp"
#include "urbanclip/corpus/split.hpp"
#include "urbanclip/errors.hpp"
#include "urbanclip/util/binary_io.hpp"

namespace urbanclip::corpus {
namespace {

namespace fs = std::filesystem;

// Classifies pixels by colour alone, without access to the generator's
// label buffer.
Coverage recount_by_colour(const ImageTensor& img) {
  std::size_t b = 0, r = 0, g = 0, w = 0;
  for (std::uint32_t y = 0; y < img.height; ++y) {
    for (std::uint32_t x = 0; x < img.width; ++x) {
      const float R = img.at(y, x, 0), G = img.at(y, x, 1), B = img.at(y, x, 2);
      if (R == G && G == B) {
        (R < 0.3f ? r : b) += 1;
      } else if (B > R && B > G) {
        ++w;
      } else if (G > R && G > B) {
        ++g;
      }
    }
  }
  const double n = double(img.height) * img.width;
  return {b / n, r / n, g / n, w / n};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("urbanclip_test_" + name);
  fs::remove_all(p);
  return p;
}

TEST(GenerateScene, SameSeedIsBitIdentical) {
  const auto a = generate_scene(7, DensityProfile::kDense);
  const auto b = generate_scene(7, DensityProfile::kDense);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_EQ(std::memcmp(a.first.data.data(), b.first.data.data(), a.first.data.size() * 4), 0);
}

TEST(GenerateScene, NoBuildingsMeansZeroBuildingCoverage) {
  int found = 0;
  for (std::uint64_t seed = 7; seed < 400 && found < 3; ++seed) {
    const auto [img, spec] = generate_scene(seed, DensityProfile::kSparse);
    if (spec.building_count != 0) continue;
    ++found;
    EXPECT_EQ(spec.coverage.b, 0.0);
  }
  EXPECT_GT(found, 0);
}

TEST(GenerateScene, CoverageMatchesIndependentPixelCount) {
  const auto [img, spec] = generate_scene(42, DensityProfile::kModerate);
  EXPECT_EQ(spec.coverage, recount_by_colour(img));
}

TEST(GenerateScene, CoverageInvariantsAcrossSeedsAndSizes) {
  const RenderConfig sizes[] = {{64, 64, 8}, {32, 32, 8}, {48, 32, 16}};
  for (const auto& cfg : sizes) {
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
      const auto profile = DensityProfile(seed % 3);
      const auto [img, spec] = generate_scene(seed, profile, cfg);
      ASSERT_EQ(img.height, std::uint32_t(cfg.height));
      ASSERT_EQ(img.width, std::uint32_t(cfg.width));
      const auto& c = spec.coverage;
      EXPECT_LE(c.b + c.r + c.g + c.w, 1.0 + 1e-6);
      EXPECT_EQ(c, recount_by_colour(img)) << "seed " << seed;
      for (float v : img.data) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
      }
    }
  }
}

TEST(GenerateScene, CountsRespectProfileRanges) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    EXPECT_LE(generate_scene(seed, DensityProfile::kSparse).second.building_count, 5);
    const int m = generate_scene(seed, DensityProfile::kModerate).second.building_count;
    EXPECT_GE(m, 6);
    EXPECT_LE(m, 20);
    const int d = generate_scene(seed, DensityProfile::kDense).second.building_count;
    EXPECT_GE(d, 21);
    EXPECT_LE(d, 60);
  }
}

TEST(GenerateScene, UntileableSizeIsConfigError) {
  EXPECT_THROW(generate_scene(1, DensityProfile::kSparse, {64, 60, 8}), ConfigError);
}

TEST(DeriveIndicators, EmptySceneIsZero) {
  SceneSpec s;
  const Indicators ind = derive_indicators(s, 0.0, 1);
  EXPECT_EQ(ind.carbon(), 0.0);
  EXPECT_EQ(ind.population(), 0.0);
  EXPECT_EQ(ind.gdp(), 0.0);
}

TEST(DeriveIndicators, HandEvaluatedFormulas) {
  SceneSpec s;
  s.coverage = {0.2, 0.1, 0.1, 0.0};
  const Indicators ind = derive_indicators(s, 0.0, 1);
  EXPECT_NEAR(ind.population(), 10200.0, 1e-9);
  EXPECT_NEAR(ind.carbon(), 7500.0, 1e-9);
  EXPECT_NEAR(ind.gdp(), 20000.0, 1e-9);
}

TEST(DeriveIndicators, CarbonIsFlooredAtZero) {
  SceneSpec s;
  s.coverage = {0.0, 0.0, 0.5, 0.0};
  EXPECT_EQ(derive_indicators(s, 0.0, 3).carbon(), 0.0);
}

TEST(DeriveIndicators, NoiseIsSeededAndTruncated) {
  SceneSpec s;
  s.coverage = {0.3, 0.1, 0.05, 0.0};
  const Indicators clean = derive_indicators(s, 0.0, 0);
  EXPECT_EQ(derive_indicators(s, 0.05, 11), derive_indicators(s, 0.05, 11));
  EXPECT_NE(derive_indicators(s, 0.05, 11), derive_indicators(s, 0.05, 12));
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Indicators noisy = derive_indicators(s, 2.0, seed);
    for (std::size_t k = 0; k < kNumIndicators; ++k) {
      const double ratio = noisy.v[k] / clean.v[k];
      EXPECT_GE(ratio, 0.5 - 1e-12);
      EXPECT_LE(ratio, 1.5 + 1e-12);
    }
  }
  EXPECT_THROW(derive_indicators(s, -0.1, 0), DomainError);
}

TEST(LogScale, KnownValues) {
  EXPECT_EQ(log_scale(0.0), 0.0);
  EXPECT_NEAR(log_scale(std::exp(1.0) - 1.0), 1.0, 1e-15);
  EXPECT_NEAR(log_scale(7500.0), double(std::log(7501.0L)), 1e-12);
  // 8.922658... is ln(7500) = log_scale(7499), not log_scale(7500).
  EXPECT_NEAR(log_scale(7499.0), 8.922658, 1e-6);
  EXPECT_NEAR(log_scale(7500.0), 8.922792, 1e-6);
  EXPECT_THROW(log_scale(-1.0), DomainError);
}

CorpusConfig small_config() {
  CorpusConfig c;
  c.render = {16, 16, 8};
  return c;
}

TEST(BuildCorpus, OneRecordPerCellWithValidInvariants) {
  const Corpus c = build_corpus("A", 1, 100, 10, 10, small_config());
  ASSERT_EQ(c.records.size(), 100u);
  std::set<std::pair<int, int>> cells;
  for (const auto& r : c.records) {
    cells.emplace(r.grid_i, r.grid_j);
    EXPECT_FALSE(r.captions.empty());
    for (std::size_t k = 0; k < kNumIndicators; ++k) {
      EXPECT_GE(r.indicators_raw.v[k], 0.0);
      EXPECT_EQ(r.indicators_log.v[k], std::log1p(r.indicators_raw.v[k]));
    }
    EXPECT_EQ(&c.find(r.region_id), &r);
  }
  EXPECT_EQ(cells.size(), 100u);
  EXPECT_THROW(c.find("nope"), NotFoundError);
}

TEST(BuildCorpus, GridMismatchIsRejected) {
  EXPECT_THROW(build_corpus("A", 1, 99, 10, 10, small_config()), ConfigError);
}

TEST(BuildCorpus, CityIsAPureFunctionOfSeedAndConfig) {
  const Corpus a = build_corpus("A", 5, 36, 6, 6, small_config());
  const Corpus b = build_corpus("A", 5, 36, 6, 6, small_config());
  EXPECT_EQ(a.records, b.records);
  const Corpus other = build_corpus("A", 6, 36, 6, 6, small_config());
  EXPECT_NE(a.records, other.records);
}

TEST(BuildCorpus, ProfilesFollowTheCityCentre) {
  const Corpus c = build_corpus("A", 3, 400, 20, 20, small_config());
  int counts[3] = {};
  for (const auto& r : c.records) ++counts[int(r.scene->profile)];
  EXPECT_GT(counts[0], 0);
  EXPECT_GT(counts[1], 0);
  EXPECT_GT(counts[2], 0);
}

TEST(BuildCorpus, TableOneScaleRegionAndCaptionCounts) {
  CorpusConfig cfg;
  cfg.render = {8, 8, 8};
  cfg.refine = false;
  const Corpus c = build_corpus("Beijing", 2024, 4592, 56, 82, cfg);
  ASSERT_EQ(c.records.size(), 4592u);
  std::size_t captions = 0;
  for (const auto& r : c.records) captions += r.captions.size();
  // 20,642 captions over 4,592 images.
  EXPECT_NEAR(double(captions) / 4592.0, 20642.0 / 4592.0, 0.05);
}

TEST(CorpusFiles, WriteReadRoundTripIsExact) {
  const fs::path dir = fresh_dir("roundtrip");
  const Corpus c = build_corpus("A", 1, 100, 10, 10, small_config());
  write_corpus(c, dir, false);
  std::size_t images = 0;
  for (const auto& e : fs::directory_iterator(dir / "images")) images += e.path().extension() == ".imgf32";
  EXPECT_EQ(images, 100u);
  EXPECT_TRUE(fs::exists(dir / "manifest.jsonl"));

  const Corpus back = read_corpus(dir);
  EXPECT_EQ(back.city, "A");
  EXPECT_EQ(back.rows, 10);
  ASSERT_EQ(back.records.size(), c.records.size());
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    EXPECT_EQ(back.records[i], c.records[i]) << c.records[i].region_id;
  }
  fs::remove_all(dir);
}

TEST(CorpusFiles, ExistingDirectoryNeedsOverwrite) {
  const fs::path dir = fresh_dir("overwrite");
  const Corpus c = build_corpus("A", 1, 25, 5, 5, small_config());
  write_corpus(c, dir, false);
  EXPECT_THROW(write_corpus(c, dir, false), IoError);
  EXPECT_NO_THROW(write_corpus(c, dir, true));
  fs::remove_all(dir);
}

TEST(ImageFormat, HeaderLayout) {
  ImageTensor img;
  img.height = 2;
  img.width = 1;
  img.data = {0.f, 0.25f, 0.5f, 0.75f, 1.f, 0.125f};
  const fs::path p = fresh_dir("img.imgf32");
  write_image(p, img);
  const std::string bytes = util::read_file(p);
  ASSERT_EQ(bytes.size(), 16u + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "URBC");
  const unsigned char* u = reinterpret_cast<const unsigned char*>(bytes.data());
  EXPECT_EQ(u[4] | u[5] << 8 | u[6] << 16 | u[7] << 24, 2);
  EXPECT_EQ(u[8], 1);
  EXPECT_EQ(u[12], 3);
  float second;
  std::memcpy(&second, bytes.data() + 20, 4);
  EXPECT_EQ(second, 0.25f);
  EXPECT_EQ(read_image(p), img);

  util::write_file_atomic(p, bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(read_image(p), IoError);
  fs::remove(p);
}

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("r" + std::to_string(i));
  return ids;
}

TEST(SplitCorpus, ExactProportions) {
  const auto s = split_corpus(make_ids(10), 1);
  EXPECT_EQ(s.train_ids.size(), 6u);
  EXPECT_EQ(s.val_ids.size(), 2u);
  EXPECT_EQ(s.test_ids.size(), 2u);
  const auto big = split_corpus(make_ids(4592), 1);
  EXPECT_EQ(big.train_ids.size(), 2755u);
  EXPECT_EQ(big.val_ids.size(), 918u);
  EXPECT_EQ(big.test_ids.size(), 919u);
}

TEST(SplitCorpus, PartitionPropertyAndDeterminism) {
  for (std::size_t n : {5u, 7u, 31u, 100u, 1001u}) {
    const auto ids = make_ids(n);
    const auto s = split_corpus(ids, n);
    EXPECT_EQ(s, split_corpus(ids, n));
    std::multiset<std::string> all;
    for (const auto* part : {&s.train_ids, &s.val_ids, &s.test_ids}) {
      EXPECT_FALSE(part->empty());
      all.insert(part->begin(), part->end());
    }
    EXPECT_EQ(all, std::multiset<std::string>(ids.begin(), ids.end()));
    EXPECT_LE(std::abs(double(s.train_ids.size()) - 0.6 * n), 1.0);
    EXPECT_LE(std::abs(double(s.val_ids.size()) - 0.2 * n), 1.0);
    EXPECT_LE(std::abs(double(s.test_ids.size()) - 0.2 * n), 1.0);
  }
}

TEST(SplitCorpus, RefusesTooFewOrDuplicateIds) {
  EXPECT_THROW(split_corpus(make_ids(4), 1), DomainError);
  EXPECT_THROW(split_corpus({"a", "b", "c", "d", "a"}, 1), DomainError);
}

TEST(SplitCorpus, FileRoundTrip) {
  const auto s = split_corpus(make_ids(20), 9);
  const fs::path p = fresh_dir("splits.json");
  write_split(s, p);
  EXPECT_EQ(read_split(p), s);
  fs::remove(p);
}

}  // namespace
}  // namespace urbanclip::corpus
