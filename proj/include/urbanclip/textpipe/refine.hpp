#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "urbanclip/corpus/region.hpp"

namespace urbanclip::textpipe {

// Phrase and keyword lists are data, loaded from refine_rules.json.
struct RefineRules {
  std::vector<std::string> vague_phrases;
  // Feature name ("water", "green", "road", "building") -> keywords.
  std::map<std::string, std::vector<std::string>> feature_keywords;
  int min_words = 3;
  int max_words = 40;
  double coverage_threshold = 0.01;
  // A caption is retained at corpus build when factual_fraction >= this.
  double keep_threshold = 0.5;
};

RefineRules default_rules();
RefineRules load_rules(const std::filesystem::path& path);
void save_rules(const RefineRules& rules, const std::filesystem::path& path);

enum class RemovalReason { kVague, kUnfactual, kDuplicate, kTooShort, kTooLong };
std::string_view reason_name(RemovalReason r);

struct RefinementReport {
  std::vector<std::string> kept;
  std::vector<std::pair<std::string, RemovalReason>> removed;
  // Kept sentences that mention an absent feature but were not removed
  // because no scene was available.
  std::vector<std::string> flagged;
  // (kept_fraction, factual_fraction)
  std::pair<double, double> scores{0.0, 0.0};

  std::string kept_text() const;
};

// Splits after '.', '!' or '?'; trims whitespace; drops empty pieces.
std::vector<std::string> split_sentences(std::string_view text);

// Stage 1: length, vague-phrase and duplicate filters.
RefinementReport clean_text(std::string_view caption, const RefineRules& rules);

// Features (keys of rules.feature_keywords) mentioned by a sentence. A word
// mentions a keyword when it starts with it, case-insensitively.
std::vector<std::string> mentioned_features(std::string_view sentence,
                                            const RefineRules& rules);

// Stage 2: with a scene, removes sentences naming a feature whose coverage is
// below the threshold; without one, only flags them.
RefinementReport verify_factuality(RefinementReport report,
                                   const std::optional<corpus::SceneSpec>& scene,
                                   const RefineRules& rules);

struct RefinedCaption {
  std::string text;
  RefinementReport report;
  bool retained = false;
};

RefinedCaption refine_caption(std::string_view caption,
                              const std::optional<corpus::SceneSpec>& scene,
                              const RefineRules& rules);

}  // namespace urbanclip::textpipe
