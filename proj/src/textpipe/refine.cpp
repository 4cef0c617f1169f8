#include "urbanclip/textpipe/refine.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "json.hpp"

#include "urbanclip/errors.hpp"
#include "urbanclip/util/binary_io.hpp"

namespace urbanclip::textpipe {
namespace {

using nlohmann::json;

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::vector<std::string> words_of(std::string_view sentence) {
  std::istringstream ss{std::string(sentence)};
  std::vector<std::string> out;
  for (std::string w; ss >> w;) out.push_back(w);
  return out;
}

std::optional<double> coverage_of(const std::string& feature,
                                  const corpus::Coverage& c) {
  if (feature == "water") return c.w;
  if (feature == "green") return c.g;
  if (feature == "road") return c.r;
  if (feature == "building") return c.b;
  return std::nullopt;
}

}  // namespace

RefineRules default_rules() {
  RefineRules r;
  r.vague_phrases = {"comprehensive view", "layout and infrastructure",
                     "possibly a", "overall"};
  r.feature_keywords = {
      {"water", {"water", "river", "lake"}},
      {"green", {"park", "greenery", "trees", "green"}},
      {"road", {"road", "highway", "street"}},
      {"building", {"building", "residential", "houses"}},
  };
  return r;
}

RefineRules load_rules(const std::filesystem::path& path) {
  const json j = json::parse(util::read_file(path));
  RefineRules r = default_rules();
  r.vague_phrases = j.at("vague_phrases").get<std::vector<std::string>>();
  r.feature_keywords =
      j.at("feature_keywords").get<std::map<std::string, std::vector<std::string>>>();
  r.min_words = j.value("min_words", r.min_words);
  r.max_words = j.value("max_words", r.max_words);
  r.coverage_threshold = j.value("coverage_threshold", r.coverage_threshold);
  r.keep_threshold = j.value("keep_threshold", r.keep_threshold);
  return r;
}

void save_rules(const RefineRules& r, const std::filesystem::path& path) {
  const json j = {{"vague_phrases", r.vague_phrases},
                  {"feature_keywords", r.feature_keywords},
                  {"min_words", r.min_words},
                  {"max_words", r.max_words},
                  {"coverage_threshold", r.coverage_threshold},
                  {"keep_threshold", r.keep_threshold}};
  util::write_file_atomic(path, j.dump(2) + "\n");
}

std::string_view reason_name(RemovalReason r) {
  switch (r) {
    case RemovalReason::kVague: return "vague";
    case RemovalReason::kUnfactual: return "unfactual";
    case RemovalReason::kDuplicate: return "duplicate";
    case RemovalReason::kTooShort: return "too_short";
    case RemovalReason::kTooLong: return "too_long";
  }
  return "?";
}

std::string RefinementReport::kept_text() const {
  std::string out;
  for (const auto& s : kept) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    const bool end = i == text.size();
    if (end || text[i] == '.' || text[i] == '!' || text[i] == '?') {
      const std::size_t stop = end ? i : i + 1;
      std::string s = trim(text.substr(start, stop - start));
      if (!s.empty()) out.push_back(std::move(s));
      start = stop;
    }
  }
  return out;
}

RefinementReport clean_text(std::string_view caption, const RefineRules& rules) {
  RefinementReport report;
  std::set<std::string> seen;
  std::size_t total = 0;
  for (std::string& s : split_sentences(caption)) {
    ++total;
    const std::size_t n = words_of(s).size();
    const std::string low = lower(s);
    std::optional<RemovalReason> reason;
    if (int(n) < rules.min_words) {
      reason = RemovalReason::kTooShort;
    } else if (int(n) > rules.max_words) {
      reason = RemovalReason::kTooLong;
    } else if (std::any_of(rules.vague_phrases.begin(), rules.vague_phrases.end(),
                           [&](const std::string& p) {
                             return low.find(lower(p)) != std::string::npos;
                           })) {
      reason = RemovalReason::kVague;
    } else if (seen.count(s)) {
      reason = RemovalReason::kDuplicate;
    }
    seen.insert(s);
    if (reason) {
      report.removed.emplace_back(std::move(s), *reason);
    } else {
      report.kept.push_back(std::move(s));
    }
  }
  if (total > 0) report.scores = {double(report.kept.size()) / double(total), 1.0};
  return report;
}

std::vector<std::string> mentioned_features(std::string_view sentence,
                                            const RefineRules& rules) {
  std::vector<std::string> words;
  for (const auto& w : words_of(lower(sentence))) {
    std::string clean;
    for (char c : w) {
      if (std::isalnum(static_cast<unsigned char>(c))) clean += c;
    }
    words.push_back(std::move(clean));
  }
  std::vector<std::string> out;
  for (const auto& [feature, keywords] : rules.feature_keywords) {
    const bool hit = std::any_of(keywords.begin(), keywords.end(), [&](const auto& k) {
      const std::string kl = lower(k);
      return std::any_of(words.begin(), words.end(),
                         [&](const std::string& w) { return w.rfind(kl, 0) == 0; });
    });
    if (hit) out.push_back(feature);
  }
  return out;
}

RefinementReport verify_factuality(RefinementReport report,
                                   const std::optional<corpus::SceneSpec>& scene,
                                   const RefineRules& rules) {
  const std::size_t total = report.kept.size() + report.removed.size();
  const std::size_t checked = report.kept.size();
  std::size_t unfactual = 0;
  std::vector<std::string> kept;
  report.flagged.clear();
  for (std::string& s : report.kept) {
    const auto features = mentioned_features(s, rules);
    bool absent = false;
    if (scene) {
      for (const auto& f : features) {
        const auto cov = coverage_of(f, scene->coverage);
        absent = absent || (cov && *cov < rules.coverage_threshold);
      }
    } else if (!features.empty()) {
      // No ground truth: every feature claim is unverified.
      ++unfactual;
      report.flagged.push_back(s);
    }
    if (!absent) {
      kept.push_back(std::move(s));
    } else {
      ++unfactual;
      report.removed.emplace_back(std::move(s), RemovalReason::kUnfactual);
    }
  }
  report.kept = std::move(kept);
  report.scores.first = total ? double(report.kept.size()) / double(total) : 0.0;
  report.scores.second =
      checked ? double(checked - unfactual) / double(checked) : 0.0;
  return report;
}

RefinedCaption refine_caption(std::string_view caption,
                              const std::optional<corpus::SceneSpec>& scene,
                              const RefineRules& rules) {
  RefinedCaption out;
  out.report = verify_factuality(clean_text(caption, rules), scene, rules);
  out.text = out.report.kept_text();
  // Flags from an unverifiable caption do not cost it its place.
  out.retained = !out.report.kept.empty() &&
                 (!scene || out.report.scores.second >= rules.keep_threshold);
  return out;
}

}  // namespace urbanclip::textpipe
