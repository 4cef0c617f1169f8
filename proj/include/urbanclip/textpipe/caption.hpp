#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "urbanclip/corpus/region.hpp"

namespace urbanclip::textpipe {

// Stand-in for an image-to-text model. Implementations return at least one
// non-empty caption per call.
class CaptionProvider {
 public:
  virtual ~CaptionProvider() = default;
  virtual std::string name() const = 0;
  virtual std::vector<std::string> generate(
      const corpus::ImageTensor& image,
      const std::optional<corpus::SceneSpec>& scene,
      const std::string& instruction) const = 0;
};

// Density word used in captions: sparse below 0.1 building coverage,
// moderate below 0.3, dense otherwise.
std::string density_word(double building_coverage);

// One caption as a list of sentences: density, visible primitive counts,
// greenery and water mentions (coverage >= 0.01), one vague filler, and with
// probability inject_bad_prob a sentence about a feature that is absent.
std::vector<std::string> synth_caption(const corpus::SceneSpec& scene,
                                       std::uint64_t seed,
                                       double inject_bad_prob);

struct SyntheticProviderConfig {
  double inject_bad_prob = 0.3;
  // Mean caption count; the fractional part is a Bernoulli extra caption.
  double captions_per_image = 4.5;
  std::uint64_t seed = 0;
};

// Derives its randomness from (config.seed, scene.seed); needs a scene.
class SyntheticCaptionProvider : public CaptionProvider {
 public:
  explicit SyntheticCaptionProvider(SyntheticProviderConfig config)
      : config_(config) {}
  std::string name() const override { return "synthetic"; }
  std::vector<std::string> generate(
      const corpus::ImageTensor& image,
      const std::optional<corpus::SceneSpec>& scene,
      const std::string& instruction) const override;

 private:
  SyntheticProviderConfig config_;
};

}  // namespace urbanclip::textpipe
