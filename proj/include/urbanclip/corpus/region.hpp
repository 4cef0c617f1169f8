#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace urbanclip::corpus {

// Row-major, channel-last, values in [0, 1].
struct ImageTensor {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 3;
  std::vector<float> data;

  float at(std::uint32_t y, std::uint32_t x, std::uint32_t c) const {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
  bool operator==(const ImageTensor&) const = default;
};

enum class DensityProfile { kSparse, kModerate, kDense };
std::string_view profile_name(DensityProfile p);
DensityProfile parse_profile(std::string_view name);

// Visible-pixel fractions of the rendered image.
struct Coverage {
  double b = 0;  // buildings
  double r = 0;  // roads
  double g = 0;  // greenery
  double w = 0;  // water
  bool operator==(const Coverage&) const = default;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  DensityProfile profile = DensityProfile::kSparse;
  int building_count = 0;
  int road_count = 0;
  int green_blob_count = 0;
  int water_blob_count = 0;
  Coverage coverage;
  bool operator==(const SceneSpec&) const = default;
};

inline constexpr std::array<std::string_view, 3> kIndicatorNames = {
    "carbon", "population", "gdp"};
inline constexpr std::size_t kNumIndicators = kIndicatorNames.size();

// Indexed in kIndicatorNames order.
struct Indicators {
  std::array<double, kNumIndicators> v{};

  double& carbon() { return v[0]; }
  double& population() { return v[1]; }
  double& gdp() { return v[2]; }
  double carbon() const { return v[0]; }
  double population() const { return v[1]; }
  double gdp() const { return v[2]; }
  bool operator==(const Indicators&) const = default;
};

// Position of `name` in kIndicatorNames; NotFoundError otherwise.
std::size_t indicator_index(std::string_view name);

struct RegionRecord {
  std::string region_id;
  std::string city;
  int grid_i = 0;
  int grid_j = 0;
  std::string image_path;  // relative to the corpus directory
  ImageTensor image;
  std::vector<std::string> captions;
  Indicators indicators_raw;
  Indicators indicators_log;
  std::optional<SceneSpec> scene;
  bool operator==(const RegionRecord&) const = default;
};

// log(1 + x); DomainError for x < 0.
double log_scale(double x);
Indicators log_scale(const Indicators& raw);

}  // namespace urbanclip::corpus
