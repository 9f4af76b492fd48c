#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace layerforge {

/// Strictly increasing list of positive penalties.
struct AlphaGrid {
  std::vector<double> values;

  /// {10, 1e2, ..., 1e6}
  static AlphaGrid standard();
  /// lo, lo*step, ... up to hi (inclusive, with relative slack for rounding).
  static AlphaGrid geometric(double lo, double hi, double step);

  void check() const;
  std::size_t size() const { return values.size(); }
};

struct RidgeModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  double alpha = 1.0;
  Eigen::VectorXd feature_means;
  std::optional<Eigen::VectorXd> feature_scales;
  double y_mean = 0.0;

  Eigen::Index width() const { return weights.size(); }
};

using MatrixRef = Eigen::Ref<const Eigen::MatrixXd>;
using VectorRef = Eigen::Ref<const Eigen::VectorXd>;

/// Solves A w = b for symmetric positive-definite A. Falls back to an SVD
/// pseudo-solve when the Cholesky factorization fails.
Eigen::VectorXd solve_spd(const Eigen::MatrixXd& A, const Eigen::VectorXd& b);

RidgeModel fit(const MatrixRef& X, const VectorRef& y, double alpha,
               bool standardize = false);

Eigen::VectorXd predict(const RidgeModel& m, const MatrixRef& X);

void save_model(const RidgeModel& m, const std::filesystem::path& path);
RidgeModel load_model(const std::filesystem::path& path);

/// Called once per fold with the row indices used to train and to evaluate
/// that fold's models. May be invoked concurrently from worker threads.
using FoldObserver =
    std::function<void(int fold, std::span<const int> train_rows,
                       std::span<const int> eval_rows)>;

/// Every (fold, alpha) cell of a k-fold ridge evaluation.
struct GridEvaluation {
  int k = 0;
  std::vector<double> alphas;
  // fold_mse(f, a): MSE of fold f's held-out rows under alphas[a].
  Eigen::MatrixXd fold_mse;
  // oof(i, a): out-of-fold prediction for row i under alphas[a].
  Eigen::MatrixXd oof;

  /// Mean over folds, reduced in fold order.
  double mean_mse(std::size_t a) const;
  /// Index of the lowest mean MSE; ties go to the smaller alpha.
  std::size_t best_alpha_index() const;
};

/// Fold-parallel kernel: one centered Gram matrix per fold, one Cholesky
/// solve per alpha. `row_folds[i]` is the fold of row i, in [0, k).
GridEvaluation evaluate_grid(const MatrixRef& X, const VectorRef& y,
                             std::span<const int> row_folds, int k,
                             const AlphaGrid& grid, bool standardize,
                             const FoldObserver& observer = {});

/// Serial reference: refits from scratch with `fit` for every cell.
GridEvaluation evaluate_grid_serial(const MatrixRef& X, const VectorRef& y,
                                    std::span<const int> row_folds, int k,
                                    const AlphaGrid& grid, bool standardize,
                                    const FoldObserver& observer = {});

struct GridSearchResult {
  double alpha_star = 0.0;
  std::vector<double> mean_mse;  // aligned with grid values
};

GridSearchResult grid_search(const MatrixRef& X, const VectorRef& y,
                             std::span<const int> row_folds, int k,
                             const AlphaGrid& grid, bool standardize);

}  // namespace layerforge
