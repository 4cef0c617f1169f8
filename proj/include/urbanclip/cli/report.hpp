#pragma once

#include <optional>
#include <string>
#include <vector>

#include "urbanclip/downstream/metrics.hpp"

namespace urbanclip::cli {

// One metric pivoted to rows = model/ablation/source city and columns =
// target city x indicator. Cells average over seeds.
struct ReportTable {
  std::string metric;  // "r2", "rmse" or "mae"
  bool higher_is_better = false;
  std::vector<std::string> rows;
  std::vector<std::pair<std::string, std::string>> columns;  // (target city, indicator)
  std::vector<std::vector<std::optional<double>>> cells;     // [row][column]
  std::vector<std::optional<std::size_t>> best;              // per column

  std::size_t filled_cells() const;
};

std::string row_label(const downstream::MetricsRow& row);

// Tables for r2, rmse and mae. DomainError on an empty input.
std::vector<ReportTable> pivot_metrics(const std::vector<downstream::MetricsRow>& rows);

// Markdown with the best cell of each column in bold.
std::string render_markdown(const ReportTable& table);

// Grouped bar chart: one group per column, one bar per row.
std::string render_svg(const ReportTable& table);

}  // namespace urbanclip::cli
