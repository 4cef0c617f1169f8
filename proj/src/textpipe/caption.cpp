#include "urbanclip/textpipe/caption.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "urbanclip/errors.hpp"
#include "urbanclip/util/hash.hpp"

namespace urbanclip::textpipe {
namespace {

constexpr double kMentionThreshold = 0.01;

template <class Pool>
const auto& pick(const Pool& pool, std::mt19937_64& rng) {
  return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
}

std::string amount_word(double coverage) {
  if (coverage < 0.05) return "small";
  if (coverage < 0.15) return "modest";
  return "large";
}

std::string plural(int n, const char* word) {
  return fmt::format("{} {}{}", n, word, n == 1 ? "" : "s");
}

const std::vector<std::string> kDensityTemplates = {
    "This is a {} urban area.",
    "The region shows {} development.",
    "Development in this tile is {}.",
};
const std::vector<std::string> kCountTemplates = {
    "It contains {}.",
    "We can see {}.",
    "The tile has {}.",
};
const std::vector<std::string> kGreenTemplates = {
    "A {} patch of greenery is visible.",
    "Green space covers a {} part of the area.",
    "There is a {} park with trees.",
};
const std::vector<std::string> kWaterTemplates = {
    "A {} body of water is visible.",
    "Water covers a {} part of the tile.",
    "There is a {} lake in the area.",
};
const std::vector<std::string> kFillers = {
    "The image offers a comprehensive view of the city's layout and infrastructure.",
    "Overall, the scene looks like a typical part of the city.",
    "There is possibly a market or a school somewhere nearby.",
    "The picture gives a comprehensive view of the neighborhood.",
};
const std::vector<std::pair<std::string, std::string>> kHallucinations = {
    {"water", "A wide river runs through the middle of the tile."},
    {"water", "A large lake lies near the center of the area."},
    {"green", "A large park with tall trees fills the eastern side."},
    {"road", "A busy highway crosses the region from north to south."},
    {"building", "Rows of residential houses line every block."},
};

bool absent(const std::string& feature, const corpus::Coverage& c) {
  const double v = feature == "water"   ? c.w
                   : feature == "green" ? c.g
                   : feature == "road"  ? c.r
                                        : c.b;
  return v < kMentionThreshold;
}

}  // namespace

std::string density_word(double b) {
  if (b < 0.1) return "sparse";
  if (b < 0.3) return "moderate";
  return "dense";
}

std::vector<std::string> synth_caption(const corpus::SceneSpec& scene,
                                       std::uint64_t seed,
                                       double inject_bad_prob) {
  std::mt19937_64 rng(seed);
  const corpus::Coverage& c = scene.coverage;
  std::vector<std::string> out;
  out.push_back(fmt::format(fmt::runtime(pick(kDensityTemplates, rng)),
                            density_word(c.b)));

  std::vector<std::string> parts;
  if (scene.building_count > 0 && c.b >= kMentionThreshold) {
    parts.push_back(plural(scene.building_count, "building"));
  }
  if (scene.road_count > 0 && c.r >= kMentionThreshold) {
    parts.push_back(plural(scene.road_count, "road"));
  }
  if (parts.empty()) {
    out.push_back("The land appears undeveloped.");
  } else {
    const std::string joined =
        parts.size() == 1 ? parts[0] : parts[0] + " and " + parts[1];
    out.push_back(fmt::format(fmt::runtime(pick(kCountTemplates, rng)), joined));
  }
  if (c.g >= kMentionThreshold) {
    out.push_back(fmt::format(fmt::runtime(pick(kGreenTemplates, rng)), amount_word(c.g)));
  }
  if (c.w >= kMentionThreshold) {
    out.push_back(fmt::format(fmt::runtime(pick(kWaterTemplates, rng)), amount_word(c.w)));
  }
  const std::size_t at = std::uniform_int_distribution<std::size_t>(1, out.size())(rng);
  out.insert(out.begin() + std::ptrdiff_t(at), pick(kFillers, rng));

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < inject_bad_prob) {
    std::vector<const std::string*> candidates;
    for (const auto& [feature, sentence] : kHallucinations) {
      if (absent(feature, c)) candidates.push_back(&sentence);
    }
    if (!candidates.empty()) out.push_back(*pick(candidates, rng));
  }
  return out;
}

std::vector<std::string> SyntheticCaptionProvider::generate(
    const corpus::ImageTensor&, const std::optional<corpus::SceneSpec>& scene,
    const std::string&) const {
  if (!scene) throw ConfigError("synthetic caption provider needs a scene");
  const std::uint64_t base = util::splitmix64(config_.seed ^ util::splitmix64(scene->seed));
  std::mt19937_64 rng(base);
  const double whole = std::floor(config_.captions_per_image);
  int n = int(whole);
  if (std::uniform_real_distribution<double>(0, 1)(rng) < config_.captions_per_image - whole) ++n;
  n = std::max(n, 1);
  std::vector<std::string> captions;
  for (int k = 0; k < n; ++k) {
    std::string text;
    for (const auto& s : synth_caption(*scene, util::derive_seed(base, std::to_string(k)),
                                       config_.inject_bad_prob)) {
      if (!text.empty()) text += ' ';
      text += s;
    }
    captions.push_back(std::move(text));
  }
  return captions;
}

}  // namespace urbanclip::textpipe
