#pragma once

#include <optional>
#include <string>
#include <vector>

namespace layerforge {

struct RankedRow {
  std::string label;
  double mean_mse = 0.0;
  std::optional<double> p_vs_best;  // unset for the best row
};

struct RankedTable {
  std::string text;
  std::string csv;
};

/// Sorts rows ascending by MSE (stable), marks rank 1 with '*' and rows with
/// p < threshold and a higher MSE with 'v'. Text shows 4 decimals, CSV full
/// precision.
RankedTable render_ranked(std::vector<RankedRow> rows, const std::string& caption,
                          const std::string& footer, double threshold = 0.05);

/// Shortest round-trip decimal form.
std::string format_full(double v);
/// Fixed 4 decimals.
std::string format_4dp(double v);
/// 4 significant digits, used for p-values.
std::string format_p(double p);

}  // namespace layerforge
