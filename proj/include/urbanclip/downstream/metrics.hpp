#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace urbanclip::downstream {

// 1 - SS_res / SS_tot. DomainError for fewer than 2 samples or constant y.
double r2(std::span<const double> y, std::span<const double> y_hat);
double rmse(std::span<const double> y, std::span<const double> y_hat);
double mae(std::span<const double> y, std::span<const double> y_hat);

struct MetricsRow {
  std::string model = "urbanclip";
  std::string ablation = "full";
  std::string source_city;
  std::string target_city;
  std::string indicator;
  double r2 = 0;
  double rmse = 0;
  double mae = 0;
  std::uint64_t seed = 0;
  std::size_t n_samples = 0;  // not persisted
};

// Columns: model, ablation, source_city, target_city, indicator, r2, rmse, mae, seed.
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);
// IoError naming the offending line; an empty table is an error.
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace urbanclip::downstream
