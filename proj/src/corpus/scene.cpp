#include "urbanclip/corpus/scene.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "urbanclip/errors.hpp"

namespace urbanclip::corpus {
namespace {

enum Label : std::uint8_t { kBackground, kWater, kGreen, kRoad, kBuilding };

struct Rgb {
  float r, g, b;
};

constexpr Rgb kTan{0.80f, 0.72f, 0.56f};
constexpr Rgb kWaterBlue{0.18f, 0.36f, 0.72f};
constexpr Rgb kGreenery{0.24f, 0.56f, 0.26f};
constexpr Rgb kRoadGray{0.22f, 0.22f, 0.22f};

struct CountRanges {
  int buildings[2];
  int roads[2];
  int green[2];
  int water[2];
};

CountRanges ranges_for(DensityProfile p) {
  switch (p) {
    case DensityProfile::kSparse:
      return {{0, 5}, {0, 2}, {1, 4}, {0, 2}};
    case DensityProfile::kModerate:
      return {{6, 20}, {1, 4}, {0, 3}, {0, 1}};
    case DensityProfile::kDense:
      return {{21, 60}, {2, 6}, {0, 2}, {0, 1}};
  }
  throw ConfigError("unknown density profile");
}

class Canvas {
 public:
  Canvas(int h, int w) : h_(h), w_(w), pixels_(std::size_t(h) * w, kTan),
                         labels_(std::size_t(h) * w, kBackground) {}

  void paint(int y, int x, Rgb c, Label l) {
    if (y < 0 || x < 0 || y >= h_ || x >= w_) return;
    pixels_[std::size_t(y) * w_ + x] = c;
    labels_[std::size_t(y) * w_ + x] = l;
  }

  void disc(double cy, double cx, double radius, Rgb c, Label l) {
    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        if (dy * dy + dx * dx <= radius * radius) paint(y, x, c, l);
      }
    }
  }

  void rect(int y0, int x0, int rh, int rw, Rgb c, Label l) {
    for (int y = y0; y < y0 + rh; ++y)
      for (int x = x0; x < x0 + rw; ++x) paint(y, x, c, l);
  }

  // Pixels whose centre lies within half_width of the segment.
  void segment(double y0, double x0, double y1, double x1, double half_width,
               Rgb c, Label l) {
    const double vy = y1 - y0, vx = x1 - x0;
    const double len2 = vy * vy + vx * vx;
    for (int y = 0; y < h_; ++y) {
      for (int x = 0; x < w_; ++x) {
        const double py = y + 0.5 - y0, px = x + 0.5 - x0;
        double t = len2 > 0 ? (py * vy + px * vx) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double dy = py - t * vy, dx = px - t * vx;
        if (dy * dy + dx * dx <= half_width * half_width) paint(y, x, c, l);
      }
    }
  }

  ImageTensor image() const {
    ImageTensor img;
    img.height = h_;
    img.width = w_;
    img.data.reserve(pixels_.size() * 3);
    for (const Rgb& p : pixels_) {
      img.data.push_back(p.r);
      img.data.push_back(p.g);
      img.data.push_back(p.b);
    }
    return img;
  }

  Coverage coverage() const {
    std::size_t counts[5] = {};
    for (auto l : labels_) ++counts[l];
    const double n = double(labels_.size());
    return {counts[kBuilding] / n, counts[kRoad] / n, counts[kGreen] / n,
            counts[kWater] / n};
  }

 private:
  int h_, w_;
  std::vector<Rgb> pixels_;
  std::vector<Label> labels_;
};

int draw(std::mt19937_64& rng, const int (&range)[2]) {
  return std::uniform_int_distribution<int>(range[0], range[1])(rng);
}

}  // namespace

void validate(const RenderConfig& c) {
  if (c.height <= 0 || c.width <= 0 || c.patch <= 0) {
    throw ConfigError("image and patch sizes must be positive");
  }
  if (c.height % c.patch != 0 || c.width % c.patch != 0) {
    throw ConfigError("image " + std::to_string(c.height) + "x" +
                      std::to_string(c.width) + " is not divisible by patch " +
                      std::to_string(c.patch));
  }
}

std::pair<ImageTensor, SceneSpec> generate_scene(std::uint64_t seed,
                                                 DensityProfile profile,
                                                 const RenderConfig& config) {
  validate(config);
  const int H = config.height, W = config.width;
  const double S = std::min(H, W);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const CountRanges ranges = ranges_for(profile);
  SceneSpec spec;
  spec.seed = seed;
  spec.profile = profile;
  spec.building_count = draw(rng, ranges.buildings);
  spec.road_count = draw(rng, ranges.roads);
  spec.green_blob_count = draw(rng, ranges.green);
  spec.water_blob_count = draw(rng, ranges.water);

  Canvas canvas(H, W);
  for (int i = 0; i < spec.water_blob_count; ++i) {
    const double r = S * (0.08 + 0.12 * unit(rng));
    canvas.disc(H * unit(rng), W * unit(rng), r, kWaterBlue, kWater);
  }
  for (int i = 0; i < spec.green_blob_count; ++i) {
    const double r = S * (0.06 + 0.10 * unit(rng));
    canvas.disc(H * unit(rng), W * unit(rng), r, kGreenery, kGreen);
  }
  const double half_width = std::max(0.5, 0.015 * S);
  for (int i = 0; i < spec.road_count; ++i) {
    if (unit(rng) < 0.7) {
      // Straight street across the tile.
      const int thick = std::max(1, int(std::lround(2 * half_width)));
      if (unit(rng) < 0.5) {
        const int y = int(unit(rng) * (H - thick + 1));
        canvas.rect(y, 0, thick, W, kRoadGray, kRoad);
      } else {
        const int x = int(unit(rng) * (W - thick + 1));
        canvas.rect(0, x, H, thick, kRoadGray, kRoad);
      }
    } else {
      const double y0 = H * unit(rng), x0 = 0, y1 = H * unit(rng), x1 = W;
      canvas.segment(y0, x0, y1, x1, half_width, kRoadGray, kRoad);
    }
  }
  const int side_lo = std::max(2, int(std::lround(0.11 * S)));
  const int side_hi = std::max(side_lo, int(std::lround(0.19 * S)));
  std::uniform_int_distribution<int> side(side_lo, side_hi);
  for (int i = 0; i < spec.building_count; ++i) {
    const int bh = side(rng), bw = side(rng);
    const int y = std::uniform_int_distribution<int>(0, H - bh)(rng);
    const int x = std::uniform_int_distribution<int>(0, W - bw)(rng);
    const float shade = float(0.45 + 0.33 * unit(rng));
    canvas.rect(y, x, bh, bw, Rgb{shade, shade, shade}, kBuilding);
  }

  spec.coverage = canvas.coverage();
  return {canvas.image(), spec};
}

Indicators derive_indicators(const SceneSpec& scene, double noise_sigma_frac,
                             std::uint64_t seed) {
  if (noise_sigma_frac < 0) throw DomainError("noise_sigma_frac must be >= 0");
  const Coverage& c = scene.coverage;
  Indicators out;
  out.population() = 50000.0 * c.b * (1.0 + 0.2 * c.r);
  out.carbon() = std::max(0.0, 30000.0 * c.b + 20000.0 * c.r - 5000.0 * c.g);
  out.gdp() = 80000.0 * c.b + 40000.0 * c.r;
  if (noise_sigma_frac == 0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sigma_frac);
  for (double& v : out.v) {
    double eps;
    do {
      eps = noise(rng);
    } while (eps < -0.5 || eps > 0.5);
    v *= 1.0 + eps;
  }
  return out;
}

}  // namespace urbanclip::corpus
