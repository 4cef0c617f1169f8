#include "urbanclip/cli/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "urbanclip/errors.hpp"

namespace urbanclip::cli {

namespace {

double metric_of(const downstream::MetricsRow& r, const std::string& metric) {
  if (metric == "r2") return r.r2;
  if (metric == "rmse") return r.rmse;
  return r.mae;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::size_t ReportTable::filled_cells() const {
  std::size_t n = 0;
  for (const auto& row : cells)
    for (const auto& c : row) n += c.has_value();
  return n;
}

std::string row_label(const downstream::MetricsRow& row) {
  return row.model + "/" + row.ablation + "@" + row.source_city;
}

std::vector<ReportTable> pivot_metrics(const std::vector<downstream::MetricsRow>& rows) {
  if (rows.empty()) throw DomainError("no metrics rows to report");
  std::vector<std::string> row_keys;
  std::vector<std::pair<std::string, std::string>> col_keys;
  for (const auto& r : rows) {
    const auto label = row_label(r);
    if (std::find(row_keys.begin(), row_keys.end(), label) == row_keys.end()) row_keys.push_back(label);
    const std::pair<std::string, std::string> col{r.target_city, r.indicator};
    if (std::find(col_keys.begin(), col_keys.end(), col) == col_keys.end()) col_keys.push_back(col);
  }

  std::vector<ReportTable> out;
  for (const std::string metric : {"r2", "rmse", "mae"}) {
    ReportTable t;
    t.metric = metric;
    t.higher_is_better = metric == "r2";
    t.rows = row_keys;
    t.columns = col_keys;
    std::map<std::pair<std::size_t, std::size_t>, std::pair<double, int>> acc;
    for (const auto& r : rows) {
      const std::size_t i = std::size_t(std::find(row_keys.begin(), row_keys.end(), row_label(r)) - row_keys.begin());
      const std::size_t j = std::size_t(
          std::find(col_keys.begin(), col_keys.end(), std::pair{r.target_city, r.indicator}) - col_keys.begin());
      auto& [sum, n] = acc[{i, j}];
      sum += metric_of(r, metric);
      ++n;
    }
    t.cells.assign(row_keys.size(), std::vector<std::optional<double>>(col_keys.size()));
    for (const auto& [key, v] : acc) t.cells[key.first][key.second] = v.first / v.second;
    t.best.assign(col_keys.size(), std::nullopt);
    for (std::size_t j = 0; j < col_keys.size(); ++j) {
      for (std::size_t i = 0; i < row_keys.size(); ++i) {
        const auto& c = t.cells[i][j];
        if (!c) continue;
        const auto& b = t.best[j];
        if (!b || (t.higher_is_better ? *c > *t.cells[*b][j] : *c < *t.cells[*b][j])) t.best[j] = i;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::string render_markdown(const ReportTable& t) {
  std::string s = fmt::format("### {} ({} is better)\n\n| model |", t.metric,
                              t.higher_is_better ? "higher" : "lower");
  for (const auto& [city, ind] : t.columns) s += fmt::format(" {} {} |", city, ind);
  s += "\n|---|";
  for (std::size_t j = 0; j < t.columns.size(); ++j) s += "---:|";
  s += "\n";
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    s += "| " + t.rows[i] + " |";
    for (std::size_t j = 0; j < t.columns.size(); ++j) {
      const auto& c = t.cells[i][j];
      if (!c) {
        s += " - |";
      } else if (t.best[j] == i) {
        s += fmt::format(" **{:.4f}** |", *c);
      } else {
        s += fmt::format(" {:.4f} |", *c);
      }
    }
    s += "\n";
  }
  return s;
}

std::string render_svg(const ReportTable& t) {
  static constexpr std::array<const char*, 8> kColors = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2",
                                                         "#59a14f", "#edc948", "#b07aa1", "#9c755f"};
  const double bar = 14, gap = 18, left = 60, top = 30, height = 220;
  const double group = bar * double(t.rows.size()) + gap;
  const double width = left + group * double(t.columns.size()) + 20;
  const double legend_h = 16 * double(t.rows.size()) + 10;

  double lo = 0, hi = 0;
  for (const auto& row : t.cells)
    for (const auto& c : row)
      if (c) {
        lo = std::min(lo, *c);
        hi = std::max(hi, *c);
      }
  if (hi - lo < 1e-12) hi = lo + 1;
  const auto y_of = [&](double v) { return top + height * (hi - v) / (hi - lo); };

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" "
      "font-family=\"sans-serif\" font-size=\"10\">\n",
      width, top + height + 40 + legend_h);
  s += fmt::format("<text x=\"{}\" y=\"16\" font-size=\"12\">{}</text>\n", left, escape_xml(t.metric));
  s += fmt::format("<line x1=\"{}\" y1=\"{:.2f}\" x2=\"{:.0f}\" y2=\"{:.2f}\" stroke=\"#333\"/>\n", left,
                   y_of(0), width - 20, y_of(0));
  for (double v : {lo, hi}) {
    s += fmt::format("<text x=\"{}\" y=\"{:.2f}\" text-anchor=\"end\">{:.3f}</text>\n", left - 4,
                     y_of(v) + 3, v);
  }
  for (std::size_t j = 0; j < t.columns.size(); ++j) {
    const double x0 = left + group * double(j) + gap / 2;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto& c = t.cells[i][j];
      if (!c) continue;
      const double y = std::min(y_of(*c), y_of(0));
      const double h = std::abs(y_of(*c) - y_of(0));
      s += fmt::format(
          "<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\"{}/>\n",
          x0 + bar * double(i), y, bar - 2, h, kColors[i % kColors.size()],
          t.best[j] == i ? " stroke=\"#000\" stroke-width=\"1.5\"" : "");
    }
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{} {}</text>\n",
                     x0 + bar * double(t.rows.size()) / 2, top + height + 16,
                     escape_xml(t.columns[j].first), escape_xml(t.columns[j].second));
  }
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double y = top + height + 32 + 16 * double(i);
    s += fmt::format("<rect x=\"{}\" y=\"{:.0f}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n", left, y,
                     kColors[i % kColors.size()]);
    s += fmt::format("<text x=\"{}\" y=\"{:.0f}\">{}</text>\n", left + 14, y + 9, escape_xml(t.rows[i]));
  }
  s += "</svg>\n";
  return s;
}

}  // namespace urbanclip::cli
