#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "urbanclip/corpus/scene.hpp"
#include "urbanclip/errors.hpp"
#include "urbanclip/textpipe/caption.hpp"
#include "urbanclip/textpipe/refine.hpp"
#include "urbanclip/textpipe/vocab.hpp"

namespace urbanclip::textpipe {
namespace {

using corpus::DensityProfile;
using corpus::SceneSpec;

const RefineRules kRules = default_rules();

SceneSpec scene_with(double b, double r, double g, double w, int buildings = 3,
                     int roads = 1) {
  SceneSpec s;
  s.coverage = {b, r, g, w};
  s.building_count = buildings;
  s.road_count = roads;
  return s;
}

bool mentions(const std::vector<std::string>& sentences, const std::string& feature) {
  return std::any_of(sentences.begin(), sentences.end(), [&](const std::string& s) {
    const auto f = mentioned_features(s, kRules);
    return std::find(f.begin(), f.end(), feature) != f.end();
  });
}

std::string joined(const std::vector<std::string>& sentences) {
  std::string out;
  for (const auto& s : sentences) out += (out.empty() ? "" : " ") + s;
  return out;
}

TEST(SynthCaption, ForcedInjectionMentionsAbsentWater) {
  const auto s = synth_caption(scene_with(0.2, 0.05, 0.05, 0.0), 3, 1.0);
  EXPECT_TRUE(mentions(s, "water"));
  const auto clean = synth_caption(scene_with(0.2, 0.05, 0.05, 0.0), 3, 0.0);
  EXPECT_FALSE(mentions(clean, "water"));
}

TEST(SynthCaption, DensityWordFollowsThresholds) {
  EXPECT_EQ(density_word(0.0), "sparse");
  EXPECT_EQ(density_word(0.0999), "sparse");
  EXPECT_EQ(density_word(0.1), "moderate");
  EXPECT_EQ(density_word(0.2999), "moderate");
  EXPECT_EQ(density_word(0.35), "dense");
  const auto s = synth_caption(scene_with(0.35, 0.05, 0.0, 0.0), 1, 0.0);
  EXPECT_NE(s.front().find("dense"), std::string::npos);
}

TEST(SynthCaption, DeterministicForEqualSeeds) {
  const auto scene = scene_with(0.15, 0.04, 0.2, 0.03);
  EXPECT_EQ(synth_caption(scene, 9, 0.0), synth_caption(scene, 9, 0.0));
  EXPECT_EQ(synth_caption(scene, 9, 0.5), synth_caption(scene, 9, 0.5));
}

TEST(SynthCaption, ExactCountsAndPresenceRule) {
  const auto s = joined(synth_caption(scene_with(0.2, 0.05, 0.0, 0.009, 12, 3), 4, 0.0));
  EXPECT_NE(s.find("12 buildings and 3 roads"), std::string::npos) << s;
  const auto sentences = synth_caption(scene_with(0.2, 0.05, 0.0, 0.009, 12, 3), 4, 0.0);
  EXPECT_FALSE(mentions(sentences, "water"));
  EXPECT_FALSE(mentions(sentences, "green"));
  const auto empty = joined(synth_caption(scene_with(0, 0, 0.3, 0, 0, 0), 4, 0.0));
  EXPECT_NE(empty.find("undeveloped"), std::string::npos);
}

TEST(SyntheticProvider, CaptionCountAveragesConfiguredRatio) {
  SyntheticCaptionProvider p({0.3, 4.5, 17});
  std::size_t total = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    SceneSpec s = scene_with(0.2, 0.05, 0.1, 0.0);
    s.seed = std::uint64_t(i);
    const auto caps = p.generate({}, s, "");
    ASSERT_GE(caps.size(), 1u);
    for (const auto& c : caps) EXPECT_FALSE(c.empty());
    total += caps.size();
  }
  EXPECT_NEAR(double(total) / n, 4.5, 0.05);
  EXPECT_THROW(p.generate({}, std::nullopt, ""), ConfigError);
}

TEST(CleanText, AppendixVagueSentenceRemoved) {
  const auto r = clean_text(
      "The image offers a comprehensive view of the city's layout and infrastructure.", kRules);
  EXPECT_TRUE(r.kept.empty());
  ASSERT_EQ(r.removed.size(), 1u);
  EXPECT_EQ(r.removed[0].second, RemovalReason::kVague);
}

TEST(CleanText, PossiblyARiverIsVague) {
  const auto r = clean_text(
      "The image features a large body of water, possibly a river or a lake, running "
      "through the city.",
      kRules);
  ASSERT_EQ(r.removed.size(), 1u);
  EXPECT_EQ(r.removed[0].second, RemovalReason::kVague);
}

TEST(CleanText, DuplicateSecondOccurrenceRemoved) {
  const auto r = clean_text(
      "It contains 12 buildings and 3 roads. It contains 12 buildings and 3 roads.", kRules);
  ASSERT_EQ(r.kept.size(), 1u);
  ASSERT_EQ(r.removed.size(), 1u);
  EXPECT_EQ(r.removed[0].second, RemovalReason::kDuplicate);
}

TEST(CleanText, LengthFiltersAndEmptyInput) {
  const auto r = clean_text("Too short. " + std::string(200, 'x') + " " +
                                [] {
                                  std::string s;
                                  for (int i = 0; i < 41; ++i) s += "word ";
                                  return s + ".";
                                }(),
                            kRules);
  ASSERT_EQ(r.removed.size(), 2u);
  EXPECT_EQ(r.removed[0].second, RemovalReason::kTooShort);
  EXPECT_EQ(r.removed[1].second, RemovalReason::kTooLong);
  const auto e = clean_text("", kRules);
  EXPECT_TRUE(e.kept.empty());
  EXPECT_TRUE(e.removed.empty());
}

TEST(CleanText, KeptPlusRemovedCoverInputInOrder) {
  const std::string text =
      "This is a dense urban area. Overall, it is busy. It has 3 roads. It has 3 roads.";
  const auto r = clean_text(text, kRules);
  EXPECT_EQ(r.kept.size() + r.removed.size(), split_sentences(text).size());
  EXPECT_EQ(r.kept, (std::vector<std::string>{"This is a dense urban area.", "It has 3 roads."}));
}

TEST(CleanText, IdempotentOverGeneratedCaptions) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto [img, scene] = corpus::generate_scene(seed, DensityProfile(seed % 3), {16, 16, 8});
    const std::string caption = joined(synth_caption(scene, seed, 0.5)) + " " +
                                joined(synth_caption(scene, seed, 0.5));
    const auto once = clean_text(caption, kRules);
    const auto twice = clean_text(once.kept_text(), kRules);
    EXPECT_EQ(once.kept, twice.kept);
  }
}

TEST(VerifyFactuality, WaterClaimWithoutWaterIsUnfactual) {
  const auto scene = scene_with(0.2, 0.05, 0.0, 0.0);
  const auto r = verify_factuality(
      clean_text("A wide river runs through the middle of the tile.", kRules), scene, kRules);
  EXPECT_TRUE(r.kept.empty());
  ASSERT_EQ(r.removed.size(), 1u);
  EXPECT_EQ(r.removed[0].second, RemovalReason::kUnfactual);
}

TEST(VerifyFactuality, FactualCaptionScoresOne) {
  const auto scene = scene_with(0.2, 0.05, 0.1, 0.0);
  const auto r = verify_factuality(
      clean_text("This is a moderate urban area. It contains 3 buildings and 1 road.", kRules),
      scene, kRules);
  EXPECT_EQ(r.scores.first, 1.0);
  EXPECT_EQ(r.scores.second, 1.0);
}

TEST(VerifyFactuality, MixedCaptionFactualFraction) {
  const auto scene = scene_with(0.2, 0.05, 0.1, 0.0);
  const auto r = verify_factuality(
      clean_text("This is a moderate urban area. It contains 3 buildings and 1 road. "
                 "A small patch of greenery is visible. A large lake lies near the center.",
                 kRules),
      scene, kRules);
  EXPECT_DOUBLE_EQ(r.scores.second, 0.75);
  EXPECT_EQ(r.kept.size(), 3u);
}

TEST(VerifyFactuality, WithoutSceneOnlyFlags) {
  const auto stage1 = clean_text("A large lake lies near the center. This is a sparse urban area.", kRules);
  const auto r = verify_factuality(stage1, std::nullopt, kRules);
  EXPECT_EQ(r.kept, stage1.kept);
  EXPECT_EQ(r.flagged.size(), 1u);
  EXPECT_DOUBLE_EQ(r.scores.second, 0.5);
}

TEST(VerifyFactuality, NeverAddsSentences) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto [img, scene] = corpus::generate_scene(seed, DensityProfile(seed % 3), {16, 16, 8});
    const auto stage1 = clean_text(joined(synth_caption(scene, seed, 0.7)), kRules);
    const auto stage2 = verify_factuality(stage1, scene, kRules);
    EXPECT_LE(stage2.kept.size(), stage1.kept.size());
    for (const auto& s : stage2.kept) {
      EXPECT_NE(std::find(stage1.kept.begin(), stage1.kept.end(), s), stage1.kept.end());
    }
  }
}

TEST(VerifyFactuality, InjectedSentencesAlwaysCaught) {
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 500; ++seed) {
    auto [img, scene] = corpus::generate_scene(seed, DensityProfile(seed % 3), {32, 32, 8});
    if (scene.coverage.w >= 0.01) continue;
    ++checked;
    const auto sentences = synth_caption(scene, seed, 1.0);
    const std::string injected = sentences.back();
    const auto r = verify_factuality(clean_text(joined(sentences), kRules), scene, kRules);
    EXPECT_EQ(std::find(r.kept.begin(), r.kept.end(), injected), r.kept.end()) << injected;
    EXPECT_GE(std::count_if(r.removed.begin(), r.removed.end(),
                            [](const auto& p) { return p.second == RemovalReason::kUnfactual; }),
              1);
  }
}

TEST(RefineRules, ShippedFileMatchesDefaults) {
  const auto path = std::filesystem::path(URBANCLIP_SOURCE_DIR) / "config" / "refine_rules.json";
  const RefineRules loaded = load_rules(path);
  EXPECT_EQ(loaded.vague_phrases, kRules.vague_phrases);
  EXPECT_EQ(loaded.feature_keywords, kRules.feature_keywords);
  EXPECT_EQ(loaded.coverage_threshold, kRules.coverage_threshold);

  const auto tmp = std::filesystem::temp_directory_path() / "urbanclip_rules.json";
  save_rules(loaded, tmp);
  EXPECT_EQ(load_rules(tmp).vague_phrases, loaded.vague_phrases);
  std::filesystem::remove(tmp);
}

TEST(BuildVocab, FrequencyThenLexicographicOrder) {
  const Vocab v = build_vocab({"a a b"});
  EXPECT_LT(v.id("a"), v.id("b"));
  EXPECT_EQ(v.id("a"), kNumSpecials);
  const Vocab tie = build_vocab({"zeta alpha"});
  EXPECT_LT(tie.id("alpha"), tie.id("zeta"));
  EXPECT_EQ(v.token(kPad), "[PAD]");
  EXPECT_EQ(v.token(kMask), "[MASK]");
}

TEST(BuildVocab, TruncatesToMaxSize) {
  std::string text;
  for (int i = 0; i < 3000; ++i) text += "w" + std::to_string(i) + " ";
  const Vocab v = build_vocab({text}, 2048);
  EXPECT_EQ(v.size(), 2048);
}

TEST(BuildVocab, DeterministicAndPersistable) {
  const std::vector<std::string> corpus = {"It contains 3 buildings.", "A lake. A park."};
  const Vocab a = build_vocab(corpus), b = build_vocab(corpus);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.hash(), b.hash());
  const auto tmp = std::filesystem::temp_directory_path() / "urbanclip_vocab.json";
  a.save(tmp);
  EXPECT_EQ(Vocab::load(tmp), a);
  std::filesystem::remove(tmp);
  EXPECT_NE(a.hash(), build_vocab({"other words"}).hash());
}

TEST(NormalizeWords, PunctuationAndFinalPeriod) {
  EXPECT_EQ(normalize_words("The city's Layout, mostly. OK"),
            (std::vector<std::string>{"the", "citys", "layout", "mostly", ".", "ok"}));
}

TEST(Tokenize, EmptyTextIsSpecialsOnly) {
  const Vocab v = build_vocab({"a b"});
  const auto t = tokenize("", v, 8);
  EXPECT_EQ(t.ids, (std::vector<int>{kBos, kEos, kCls, kPad, kPad, kPad, kPad, kPad}));
  EXPECT_EQ(t.length, 3);
  EXPECT_EQ(t.cls_position(), 2);
}

TEST(Tokenize, WordTokensBetweenBosAndEos) {
  const Vocab v = build_vocab({"contains 12 buildings ."});
  const auto t = tokenize("contains 12 buildings .", v, 16);
  EXPECT_EQ(t.length, 7);
  EXPECT_EQ(t.ids[0], kBos);
  EXPECT_EQ(t.ids[5], kEos);
  EXPECT_EQ(t.ids[6], kCls);
  for (int i = 1; i < 5; ++i) EXPECT_GE(t.ids[std::size_t(i)], kNumSpecials);
}

TEST(Tokenize, TruncationKeepsSpecialsAndUnknownsMapToUnk) {
  const Vocab v = build_vocab({"a b c d e f g"});
  const auto t = tokenize("a b c d e f g", v, 5);
  EXPECT_EQ(t.ids, (std::vector<int>{kBos, v.id("a"), v.id("b"), kEos, kCls}));
  EXPECT_EQ(tokenize("zzz", v, 5).ids[1], kUnk);
  EXPECT_THROW(tokenize("a", v, 3), ConfigError);
}

TEST(Tokenize, InvariantsAndRoundTripOverCaptions) {
  std::vector<std::string> captions;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto [img, scene] = corpus::generate_scene(seed, DensityProfile(seed % 3), {16, 16, 8});
    captions.push_back(joined(synth_caption(scene, seed, 0.3)));
  }
  const Vocab v = build_vocab(captions);
  for (const auto& c : captions) {
    const auto t = tokenize(c, v, 64);
    ASSERT_EQ(t.ids.size(), 64u);
    EXPECT_EQ(t.ids[0], kBos);
    EXPECT_EQ(t.ids[std::size_t(t.length - 2)], kEos);
    EXPECT_EQ(t.ids[std::size_t(t.length - 1)], kCls);
    for (std::size_t i = 0; i < t.ids.size(); ++i) {
      EXPECT_EQ(t.mask[i], int(i) < t.length);
      if (int(i) >= t.length) EXPECT_EQ(t.ids[i], kPad);
    }
    EXPECT_EQ(detokenize(t.ids, v), normalize_text(c));
  }
}

}  // namespace
}  // namespace urbanclip::textpipe
