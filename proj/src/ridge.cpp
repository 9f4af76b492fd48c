#include "layerforge/ridge.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <exception>
#include <fstream>

#include <fmt/format.h>
#include <omp.h>

#include "layerforge/error.hpp"

namespace layerforge {

AlphaGrid AlphaGrid::standard() { return geometric(10.0, 1e6, 10.0); }

AlphaGrid AlphaGrid::geometric(double lo, double hi, double step) {
  if (!(lo > 0.0) || !(hi >= lo) || !(step > 1.0)) {
    throw UsageError(fmt::format("invalid alpha grid lo={} hi={} step={}", lo, hi, step));
  }
  AlphaGrid g;
  // Repeated multiplication drifts (10*10*10 != 1e3 in general), so each
  // value is lo * step^i computed directly.
  for (int i = 0;; ++i) {
    double v = lo * std::pow(step, i);
    if (v > hi * (1.0 + 1e-9)) break;
    g.values.push_back(v);
  }
  return g;
}

void AlphaGrid::check() const {
  if (values.empty()) throw UsageError("alpha grid is empty");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0) || !std::isfinite(values[i])) {
      throw UsageError(fmt::format("alpha {} is not a positive finite value", values[i]));
    }
    if (i > 0 && !(values[i] > values[i - 1])) throw UsageError("alpha grid must be strictly increasing");
  }
}

Eigen::VectorXd solve_spd(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() == Eigen::Success) return llt.solve(b);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.solve(b);
}

namespace {

void check_finite(const MatrixRef& X, const VectorRef& y) {
  if (!X.allFinite()) throw DataError("design matrix contains non-finite values");
  if (!y.allFinite()) throw DataError("outcome vector contains non-finite values");
}

// Column scales for standardization: population standard deviation of the
// centered columns, with 1 for (numerically) constant columns.
Eigen::VectorXd column_scales(const Eigen::MatrixXd& centered, const Eigen::RowVectorXd& means) {
  const double n = static_cast<double>(centered.rows());
  Eigen::VectorXd s = (centered.colwise().squaredNorm() / n).cwiseSqrt().transpose();
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    if (!(s[j] > 1e-12 * std::max(1.0, std::abs(means[j])))) s[j] = 1.0;
  }
  return s;
}

// Centered (optionally scaled) training block and everything needed to solve
// for any alpha.
struct Normalized {
  Eigen::RowVectorXd means;
  std::optional<Eigen::VectorXd> scales;
  double y_mean = 0.0;
  Eigen::MatrixXd gram;  // lower triangle valid
  Eigen::VectorXd rhs;
};

Normalized normalize(const MatrixRef& X, const VectorRef& y, bool standardize) {
  Normalized nz;
  nz.means = X.colwise().mean();
  Eigen::MatrixXd Xc = X.rowwise() - nz.means;
  if (standardize) {
    nz.scales = column_scales(Xc, nz.means);
    Xc = Xc * nz.scales->cwiseInverse().asDiagonal();
  }
  nz.y_mean = y.mean();
  const auto p = X.cols();
  nz.gram = Eigen::MatrixXd::Zero(p, p);
  nz.gram.selfadjointView<Eigen::Lower>().rankUpdate(Xc.transpose());
  nz.rhs = Xc.transpose() * (y.array() - nz.y_mean).matrix();
  return nz;
}

Eigen::VectorXd solve_with_alpha(const Normalized& nz, double alpha) {
  Eigen::MatrixXd A = nz.gram.selfadjointView<Eigen::Lower>();
  A.diagonal().array() += alpha;
  return solve_spd(A, nz.rhs);
}

RidgeModel make_model(const Normalized& nz, Eigen::VectorXd w, double alpha) {
  RidgeModel m;
  m.alpha = alpha;
  m.feature_means = nz.means.transpose();
  m.feature_scales = nz.scales;
  m.y_mean = nz.y_mean;
  Eigen::VectorXd raw = w;
  if (m.feature_scales) raw = raw.cwiseQuotient(*m.feature_scales);
  m.intercept = m.y_mean - m.feature_means.dot(raw);
  m.weights = std::move(w);
  return m;
}

void check_fit_inputs(const MatrixRef& X, const VectorRef& y, double alpha) {
  if (X.rows() != y.size()) {
    throw DataError(fmt::format("X has {} rows but y has {} entries", X.rows(), y.size()));
  }
  if (X.rows() < 2) throw DataError(fmt::format("ridge fit needs n >= 2 rows, got {}", X.rows()));
  if (X.cols() < 1) throw DataError("ridge fit needs at least one feature");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DataError(fmt::format("alpha must be positive, got {}", alpha));
  check_finite(X, y);
}

void check_folds(Eigen::Index n, std::span<const int> row_folds, int k) {
  if (k < 2) throw DataError(fmt::format("need k >= 2 folds, got {}", k));
  if (static_cast<Eigen::Index>(row_folds.size()) != n) {
    throw DataError(fmt::format("{} fold labels for {} rows", row_folds.size(), n));
  }
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (int f : row_folds) {
    if (f < 0 || f >= k) throw DataError(fmt::format("fold label {} outside [0, {})", f, k));
    ++sizes[static_cast<std::size_t>(f)];
  }
  for (int f = 0; f < k; ++f) {
    const auto eval = sizes[static_cast<std::size_t>(f)];
    if (eval == 0) throw DataError(fmt::format("fold {} is empty", f));
    if (static_cast<Eigen::Index>(eval) + 2 > n) {
      throw DataError(fmt::format("fold {} leaves fewer than 2 training rows", f));
    }
  }
}

void split_rows(std::span<const int> row_folds, int fold, std::vector<int>& train, std::vector<int>& eval) {
  train.clear();
  eval.clear();
  for (std::size_t i = 0; i < row_folds.size(); ++i) {
    (row_folds[i] == fold ? eval : train).push_back(static_cast<int>(i));
  }
}

GridEvaluation empty_evaluation(Eigen::Index n, int k, const AlphaGrid& grid) {
  GridEvaluation ev;
  ev.k = k;
  ev.alphas = grid.values;
  const auto A = static_cast<Eigen::Index>(grid.size());
  ev.fold_mse = Eigen::MatrixXd::Zero(k, A);
  ev.oof = Eigen::MatrixXd::Zero(n, A);
  return ev;
}

}  // namespace

RidgeModel fit(const MatrixRef& X, const VectorRef& y, double alpha, bool standardize) {
  check_fit_inputs(X, y, alpha);
  Normalized nz = normalize(X, y, standardize);
  return make_model(nz, solve_with_alpha(nz, alpha), alpha);
}

Eigen::VectorXd predict(const RidgeModel& m, const MatrixRef& X) {
  if (X.cols() != m.width()) {
    throw DataError(fmt::format("model expects {} features, got {}", m.width(), X.cols()));
  }
  Eigen::MatrixXd Xc = X.rowwise() - m.feature_means.transpose();
  if (m.feature_scales) Xc = Xc * m.feature_scales->cwiseInverse().asDiagonal();
  return (Xc * m.weights).array() + m.y_mean;
}

double GridEvaluation::mean_mse(std::size_t a) const {
  double s = 0.0;
  for (int f = 0; f < k; ++f) s += fold_mse(f, static_cast<Eigen::Index>(a));
  return s / k;
}

std::size_t GridEvaluation::best_alpha_index() const {
  std::size_t best = 0;
  double best_mse = mean_mse(0);
  for (std::size_t a = 1; a < alphas.size(); ++a) {
    const double m = mean_mse(a);
    if (m < best_mse) {
      best = a;
      best_mse = m;
    }
  }
  return best;
}

GridEvaluation evaluate_grid(const MatrixRef& X, const VectorRef& y, std::span<const int> row_folds,
                             int k, const AlphaGrid& grid, bool standardize,
                             const FoldObserver& observer) {
  grid.check();
  check_fit_inputs(X, y, grid.values.front());
  check_folds(X.rows(), row_folds, k);
  GridEvaluation ev = empty_evaluation(X.rows(), k, grid);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(k));

  // Each fold writes only its own row of fold_mse and its own eval rows of
  // oof, so the result does not depend on scheduling.
#pragma omp parallel for schedule(dynamic, 1) if (!omp_in_parallel())
  for (int f = 0; f < k; ++f) {
    try {
      std::vector<int> train, eval;
      split_rows(row_folds, f, train, eval);
      if (observer) observer(f, train, eval);
      const Eigen::MatrixXd Xt = X(train, Eigen::all);
      const Eigen::VectorXd yt = y(train);
      const Normalized nz = normalize(Xt, yt, standardize);
      Eigen::MatrixXd Xe = X(eval, Eigen::all).rowwise() - nz.means;
      if (nz.scales) Xe = Xe * nz.scales->cwiseInverse().asDiagonal();
      const Eigen::VectorXd ye = y(eval);
      for (std::size_t a = 0; a < grid.size(); ++a) {
        const Eigen::VectorXd w = solve_with_alpha(nz, grid.values[a]);
        const Eigen::VectorXd pred = (Xe * w).array() + nz.y_mean;
        ev.fold_mse(f, static_cast<Eigen::Index>(a)) = (ye - pred).squaredNorm() / static_cast<double>(eval.size());
        for (std::size_t i = 0; i < eval.size(); ++i) {
          ev.oof(eval[i], static_cast<Eigen::Index>(a)) = pred[static_cast<Eigen::Index>(i)];
        }
      }
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(f)] =
          std::make_exception_ptr(DataError(fmt::format("fold {}: {}", f, e.what())));
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return ev;
}

GridEvaluation evaluate_grid_serial(const MatrixRef& X, const VectorRef& y, std::span<const int> row_folds,
                                    int k, const AlphaGrid& grid, bool standardize,
                                    const FoldObserver& observer) {
  grid.check();
  check_fit_inputs(X, y, grid.values.front());
  check_folds(X.rows(), row_folds, k);
  GridEvaluation ev = empty_evaluation(X.rows(), k, grid);
  std::vector<int> train, eval;
  for (int f = 0; f < k; ++f) {
    split_rows(row_folds, f, train, eval);
    if (observer) observer(f, train, eval);
    const Eigen::MatrixXd Xt = X(train, Eigen::all);
    const Eigen::VectorXd yt = y(train);
    const Eigen::MatrixXd Xe = X(eval, Eigen::all);
    for (std::size_t a = 0; a < grid.size(); ++a) {
      RidgeModel m;
      try {
        m = fit(Xt, yt, grid.values[a], standardize);
      } catch (const std::exception& e) {
        throw DataError(fmt::format("fold {}, alpha {}: {}", f, grid.values[a], e.what()));
      }
      const Eigen::VectorXd pred = predict(m, Xe);
      double sse = 0.0;
      for (std::size_t i = 0; i < eval.size(); ++i) {
        const double r = y[eval[i]] - pred[static_cast<Eigen::Index>(i)];
        sse += r * r;
        ev.oof(eval[i], static_cast<Eigen::Index>(a)) = pred[static_cast<Eigen::Index>(i)];
      }
      ev.fold_mse(f, static_cast<Eigen::Index>(a)) = sse / static_cast<double>(eval.size());
    }
  }
  return ev;
}

GridSearchResult grid_search(const MatrixRef& X, const VectorRef& y, std::span<const int> row_folds, int k,
                             const AlphaGrid& grid, bool standardize) {
  const GridEvaluation ev = evaluate_grid(X, y, row_folds, k, grid, standardize);
  GridSearchResult r;
  for (std::size_t a = 0; a < grid.size(); ++a) r.mean_mse.push_back(ev.mean_mse(a));
  r.alpha_star = grid.values[ev.best_alpha_index()];
  return r;
}

namespace {

constexpr std::array<char, 4> kModelMagic = {'R', 'D', 'G', '1'};

void put_u64(std::ofstream& out, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), 8);
}

void put_f64(std::ofstream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_uint(std::ifstream& in, int bytes, std::uint64_t& offset, const std::filesystem::path& path) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), bytes);
  if (in.gcount() != bytes) throw FormatError(path.string() + ": truncated model file", offset);
  offset += static_cast<std::uint64_t>(bytes);
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

void save_model(const RidgeModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(kModelMagic.data(), 4);
  const auto p = static_cast<std::uint32_t>(m.width());
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((p >> (8 * i)) & 0xff));
  put_f64(out, m.alpha);
  put_f64(out, m.y_mean);
  out.put(static_cast<char>(m.feature_scales ? 1 : 0));
  for (Eigen::Index j = 0; j < m.width(); ++j) put_f64(out, m.feature_means[j]);
  if (m.feature_scales) {
    for (Eigen::Index j = 0; j < m.width(); ++j) put_f64(out, (*m.feature_scales)[j]);
  }
  for (Eigen::Index j = 0; j < m.width(); ++j) put_f64(out, m.weights[j]);
  if (!out) throw DataError("write failed: " + path.string());
}

RidgeModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::uint64_t offset = 0;
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (in.gcount() != 4 || magic != kModelMagic) throw FormatError(path.string() + ": bad model magic", 0);
  offset = 4;
  const auto p = static_cast<Eigen::Index>(get_uint(in, 4, offset, path));
  RidgeModel m;
  m.alpha = std::bit_cast<double>(get_uint(in, 8, offset, path));
  m.y_mean = std::bit_cast<double>(get_uint(in, 8, offset, path));
  const auto flags_offset = offset;
  const auto flags = get_uint(in, 1, offset, path);
  if (flags > 1) throw FormatError(path.string() + ": unknown model flags", flags_offset);
  auto read_vec = [&](Eigen::VectorXd& v) {
    v.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) v[j] = std::bit_cast<double>(get_uint(in, 8, offset, path));
  };
  read_vec(m.feature_means);
  if (flags & 1) {
    Eigen::VectorXd s;
    read_vec(s);
    m.feature_scales = std::move(s);
  }
  read_vec(m.weights);
  Eigen::VectorXd raw = m.weights;
  if (m.feature_scales) raw = raw.cwiseQuotient(*m.feature_scales);
  m.intercept = m.y_mean - m.feature_means.dot(raw);
  return m;
}

}  // namespace layerforge
