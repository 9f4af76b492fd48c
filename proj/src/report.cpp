#include "layerforge/report.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace layerforge {

std::string format_full(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{}", v);
}

std::string format_4dp(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{:.4f}", v);
}

std::string format_p(double p) {
  if (std::isnan(p)) return "nan";
  return fmt::format("{:.4g}", p);
}

RankedTable render_ranked(std::vector<RankedRow> rows, const std::string& caption, const std::string& footer,
                          double threshold) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const RankedRow& a, const RankedRow& b) { return a.mean_mse < b.mean_mse; });

  std::size_t label_width = 1;
  for (const auto& r : rows) label_width = std::max(label_width, r.label.size());
  const std::size_t rank_width = std::to_string(rows.size()).size();

  RankedTable t;
  if (!caption.empty()) t.text += caption + "\n";
  t.text += "# rank  layers  mse  mark\n";
  t.csv = "rank,label,mean_mse,p_vs_best,mark\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    std::string mark;
    if (i == 0) {
      mark = "*";
    } else if (r.p_vs_best && *r.p_vs_best < threshold && r.mean_mse > rows.front().mean_mse) {
      mark = "v";
    }
    t.text += fmt::format("{:<{}}  {:<{}}  {}  {}", i + 1, rank_width, r.label, label_width, format_4dp(r.mean_mse), mark);
    while (!t.text.empty() && t.text.back() == ' ') t.text.pop_back();
    t.text += '\n';
    t.csv += fmt::format("{},{},{},{},{}\n", i + 1, r.label, format_full(r.mean_mse),
                         r.p_vs_best ? format_full(*r.p_vs_best) : std::string(), mark);
  }
  if (!footer.empty()) t.text += footer + "\n";
  return t;
}

}  // namespace layerforge
