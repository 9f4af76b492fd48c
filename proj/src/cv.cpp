#include "layerforge/cv.hpp"

#include <algorithm>
#include <random>
#include <set>

#include <fmt/format.h>

#include "layerforge/error.hpp"
#include "layerforge/metrics.hpp"
#include "layerforge/report.hpp"

namespace layerforge {

FoldAssignment::FoldAssignment(int k, std::uint64_t seed, std::unordered_map<std::string, int> assignment)
    : k_(k), seed_(seed), assignment_(std::move(assignment)) {}

int FoldAssignment::fold_of(const std::string& user_id) const {
  auto it = assignment_.find(user_id);
  if (it == assignment_.end()) throw DataError("user " + user_id + " has no fold assignment");
  return it->second;
}

std::vector<int> FoldAssignment::row_folds(const std::vector<std::string>& user_ids) const {
  std::vector<int> out;
  out.reserve(user_ids.size());
  for (const auto& id : user_ids) out.push_back(fold_of(id));
  return out;
}

std::vector<std::size_t> FoldAssignment::fold_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k_), 0);
  for (const auto& [id, f] : assignment_) ++sizes[static_cast<std::size_t>(f)];
  return sizes;
}

FoldAssignment make_folds(std::vector<std::string> user_ids, int k, std::uint64_t seed) {
  if (k < 2) throw DataError(fmt::format("need k >= 2 folds, got {}", k));
  if (static_cast<std::size_t>(k) > user_ids.size()) {
    throw DataError(fmt::format("k = {} exceeds the number of users ({})", k, user_ids.size()));
  }
  std::sort(user_ids.begin(), user_ids.end());
  if (std::adjacent_find(user_ids.begin(), user_ids.end()) != user_ids.end()) {
    throw DataError("duplicate user ids passed to make_folds");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(user_ids.begin(), user_ids.end(), rng);
  std::unordered_map<std::string, int> assignment;
  assignment.reserve(user_ids.size());
  for (std::size_t i = 0; i < user_ids.size(); ++i) {
    assignment.emplace(user_ids[i], static_cast<int>(i % static_cast<std::size_t>(k)));
  }
  return FoldAssignment(k, seed, std::move(assignment));
}

std::vector<double> CvReport::squared_errors() const {
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - oof_predictions[i];
    out[i] = r * r;
  }
  return out;
}

CvReport cross_validate(const Corpus& c, const LayerSet& ls, const FoldAssignment& folds,
                        const AlphaGrid& grid, const CvOptions& opts) {
  const DesignMatrix d = build_design(c, ls);
  const std::vector<int> row_folds = folds.row_folds(d.user_ids);
  GridEvaluation ev;
  try {
    ev = opts.use_reference_kernel
             ? evaluate_grid_serial(d.X, d.y, row_folds, folds.k(), grid, opts.standardize, opts.observer)
             : evaluate_grid(d.X, d.y, row_folds, folds.k(), grid, opts.standardize, opts.observer);
  } catch (const Error& e) {
    throw DataError(fmt::format("layers {}: {}", ls.label(), e.what()));
  }

  const std::size_t best = ev.best_alpha_index();
  CvReport r;
  r.layer_set = ls;
  r.alpha_star = grid.values[best];
  r.alphas = grid.values;
  r.grid_fold_mse.resize(grid.size());
  for (std::size_t a = 0; a < grid.size(); ++a) {
    for (int f = 0; f < folds.k(); ++f) r.grid_fold_mse[a].push_back(ev.fold_mse(f, static_cast<Eigen::Index>(a)));
  }
  r.fold_mses = r.grid_fold_mse[best];
  r.mean_mse = ev.mean_mse(best);
  r.std_err = fold_standard_error(r.fold_mses);
  r.user_ids = d.user_ids;
  r.y.assign(d.y.data(), d.y.data() + d.y.size());
  r.oof_predictions.resize(d.user_ids.size());
  for (std::size_t i = 0; i < r.oof_predictions.size(); ++i) {
    r.oof_predictions[i] = ev.oof(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(best));
  }
  return r;
}

GridSearchResult grid_search(const FoldAssignment& folds, const DesignMatrix& d, const AlphaGrid& grid,
                             bool standardize) {
  return grid_search(d.X, d.y, folds.row_folds(d.user_ids), folds.k(), grid, standardize);
}

std::string to_text(const CvReport& r) {
  std::string s;
  s += fmt::format("layer_set={}\n", r.layer_set.label());
  s += fmt::format("k={}\n", r.fold_mses.size());
  s += fmt::format("n={}\n", r.user_ids.size());
  s += fmt::format("alpha_star={}\n", format_full(r.alpha_star));
  s += fmt::format("mean_mse={}\n", format_full(r.mean_mse));
  s += fmt::format("std_err={}\n", format_full(r.std_err));
  for (std::size_t f = 0; f < r.fold_mses.size(); ++f) {
    s += fmt::format("fold_mse[{}]={}\n", f, format_full(r.fold_mses[f]));
  }
  for (std::size_t a = 0; a < r.alphas.size(); ++a) {
    double m = 0.0;
    for (double v : r.grid_fold_mse[a]) m += v;
    m /= static_cast<double>(r.grid_fold_mse[a].size());
    s += fmt::format("alpha_mean_mse[{}]={}\n", format_full(r.alphas[a]), format_full(m));
  }
  return s;
}

std::string to_csv(const CvReport& r) {
  std::string s = "layer_set,alpha,fold,mse\n";
  for (std::size_t a = 0; a < r.alphas.size(); ++a) {
    for (std::size_t f = 0; f < r.grid_fold_mse[a].size(); ++f) {
      s += fmt::format("{},{},{},{}\n", r.layer_set.label(), format_full(r.alphas[a]), f,
                       format_full(r.grid_fold_mse[a][f]));
    }
  }
  return s;
}

}  // namespace layerforge
