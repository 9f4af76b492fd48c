#pragma once

#include <span>

namespace layerforge {

struct EvalResult {
  double mse = 0.0;
  double pearson_r = 0.0;  // NaN when undefined (constant predictions)
  double r_dis = 0.0;
  std::size_t n = 0;
};

struct TTestResult {
  double t = 0.0;
  int df = 0;
  double p_two_sided = 1.0;
  // Zero-variance differences with non-zero mean; t is +/-inf and p is 0.
  bool degenerate = false;
};

struct Disattenuated {
  double r_dis = 0.0;
  bool out_of_range = false;  // |r_dis| > 1; the value is left unclamped
};

double mse(std::span<const double> y, std::span<const double> yhat);

/// Sample Pearson correlation. Throws DataError if either side is constant.
double pearson_r(std::span<const double> x, std::span<const double> y);

Disattenuated disattenuate(double r, double rel_x, double rel_y);

/// Paired t-test on a - b with df = n - 1.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// P(T <= t) for Student's t with df degrees of freedom.
double student_t_cdf(double t, double df);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Sample standard deviation over folds divided by sqrt(k).
double fold_standard_error(std::span<const double> fold_mses);

EvalResult evaluate(std::span<const double> y, std::span<const double> yhat,
                    double rel_x = 1.0, double rel_y = 1.0);

}  // namespace layerforge
