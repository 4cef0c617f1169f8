#include "urbanclip/downstream/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "urbanclip/errors.hpp"
#include "urbanclip/util/binary_io.hpp"

namespace urbanclip::downstream {
namespace {

void check_lengths(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) {
    throw ShapeError(fmt::format("metric inputs differ in length: {} vs {}", y.size(), y_hat.size()));
  }
  if (y.empty()) throw DomainError("metric of an empty sample");
}

constexpr const char* kHeader = "model,ablation,source_city,target_city,indicator,r2,rmse,mae,seed";

}  // namespace

double r2(std::span<const double> y, std::span<const double> y_hat) {
  check_lengths(y, y_hat);
  if (y.size() < 2) throw DomainError("R2 needs at least 2 samples");
  double mean = 0;
  for (double v : y) mean += v;
  mean /= double(y.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  if (ss_tot == 0) throw DomainError("R2 undefined for constant targets");
  return 1.0 - ss_res / ss_tot;
}

double rmse(std::span<const double> y, std::span<const double> y_hat) {
  check_lengths(y, y_hat);
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
  return std::sqrt(s / double(y.size()));
}

double mae(std::span<const double> y, std::span<const double> y_hat) {
  check_lengths(y, y_hat);
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]);
  return s / double(y.size());
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{:.17g},{:.17g},{:.17g},{}\n", r.model, r.ablation,
                       r.source_city, r.target_city, r.indicator, r.r2, r.rmse, r.mae, r.seed);
  }
  util::write_file_atomic(path, out);
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::istringstream in(util::read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty metrics file");
  if (line != kHeader) throw IoError(path.string() + ": unexpected header '" + line + "'");
  std::vector<MetricsRow> rows;
  int number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    auto fail = [&](const std::string& why) {
      throw IoError(fmt::format("{}: row {}: {}", path.string(), number, why));
    };
    if (f.size() != 9) fail(fmt::format("expected 9 fields, found {}", f.size()));
    MetricsRow r;
    r.model = f[0];
    r.ablation = f[1];
    r.source_city = f[2];
    r.target_city = f[3];
    r.indicator = f[4];
    try {
      std::size_t used = 0;
      auto num = [&](const std::string& s) {
        const double v = std::stod(s, &used);
        if (used != s.size()) fail("trailing characters in '" + s + "'");
        return v;
      };
      r.r2 = num(f[5]);
      r.rmse = num(f[6]);
      r.mae = num(f[7]);
      r.seed = std::stoull(f[8], &used);
      if (used != f[8].size()) fail("bad seed '" + f[8] + "'");
    } catch (const std::logic_error&) {
      fail("non-numeric metric field");
    }
    rows.push_back(r);
  }
  if (rows.empty()) throw IoError(path.string() + ": metrics file has no rows");
  return rows;
}

}  // namespace urbanclip::downstream
