#pragma once

#include <cstdint>
#include <utility>

#include "urbanclip/corpus/region.hpp"

namespace urbanclip::corpus {

struct RenderConfig {
  int height = 64;
  int width = 64;
  int patch = 8;  // only validated here; the model owns patching
};

// Throws ConfigError when the image is not tileable by the patch size.
void validate(const RenderConfig& config);

// Renders water, greenery, roads and buildings (in that order, later layers
// on top) over a tan background. Coverage is measured on the final pixels.
std::pair<ImageTensor, SceneSpec> generate_scene(std::uint64_t seed,
                                                 DensityProfile profile,
                                                 const RenderConfig& config = {});

// Synthetic ground truth: linear in coverage, times a truncated-normal
// multiplicative noise factor per indicator.
Indicators derive_indicators(const SceneSpec& scene, double noise_sigma_frac,
                             std::uint64_t seed);

}  // namespace urbanclip::corpus
