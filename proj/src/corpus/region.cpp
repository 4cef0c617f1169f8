#include "urbanclip/corpus/region.hpp"

#include <cmath>

#include "urbanclip/errors.hpp"

namespace urbanclip::corpus {

std::string_view profile_name(DensityProfile p) {
  switch (p) {
    case DensityProfile::kSparse: return "sparse";
    case DensityProfile::kModerate: return "moderate";
    case DensityProfile::kDense: return "dense";
  }
  return "?";
}

DensityProfile parse_profile(std::string_view name) {
  if (name == "sparse") return DensityProfile::kSparse;
  if (name == "moderate") return DensityProfile::kModerate;
  if (name == "dense") return DensityProfile::kDense;
  throw ConfigError("unknown density profile '" + std::string(name) + "'");
}

std::size_t indicator_index(std::string_view name) {
  for (std::size_t i = 0; i < kIndicatorNames.size(); ++i) {
    if (kIndicatorNames[i] == name) return i;
  }
  throw NotFoundError("unknown indicator '" + std::string(name) + "'");
}

double log_scale(double x) {
  if (!(x >= 0)) throw DomainError("log_scale: negative input " + std::to_string(x));
  return std::log1p(x);
}

Indicators log_scale(const Indicators& raw) {
  Indicators out;
  for (std::size_t k = 0; k < kNumIndicators; ++k) out.v[k] = log_scale(raw.v[k]);
  return out;
}

}  // namespace urbanclip::corpus
