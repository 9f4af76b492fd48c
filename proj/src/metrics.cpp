#include "layerforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <fmt/format.h>

#include "layerforge/error.hpp"

namespace layerforge {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DataError(fmt::format("{}: length mismatch ({} vs {})", what, a, b));
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Continued fraction for the incomplete beta function (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  return h;
}

// I_x(a, b) given both x and 1 - x, so callers can pass an accurately
// computed complement.
double incomplete_beta_pair(double a, double b, double x, double one_minus_x) {
  if (x <= 0.0) return 0.0;
  if (one_minus_x <= 0.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log(one_minus_x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, one_minus_x) / b;
}

// Two-sided tail P(|T| >= |t|).
double student_t_two_sided(double t, double df) {
  if (std::isinf(t)) return 0.0;
  const double t2 = t * t;
  const double x = df / (df + t2);
  const double one_minus_x = t2 / (df + t2);
  return incomplete_beta_pair(df / 2.0, 0.5, x, one_minus_x);
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw DataError("incomplete beta needs a, b > 0");
  if (x < 0.0 || x > 1.0) throw DataError(fmt::format("incomplete beta argument {} outside [0, 1]", x));
  return incomplete_beta_pair(a, b, x, 1.0 - x);
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw DataError("degrees of freedom must be positive");
  const double tail = 0.5 * student_t_two_sided(t, df);
  return t > 0.0 ? 1.0 - tail : tail;
}

double mse(std::span<const double> y, std::span<const double> yhat) {
  check_lengths(y.size(), yhat.size(), "mse");
  if (y.empty()) throw DataError("mse of empty vectors");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - yhat[i];
    s += r * r;
  }
  return s / static_cast<double>(y.size());
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  check_lengths(x.size(), y.size(), "pearson_r");
  if (x.size() < 2) throw DataError("pearson_r needs n >= 2");
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DataError("pearson_r undefined: constant input");
  return sxy / std::sqrt(sxx * syy);
}

Disattenuated disattenuate(double r, double rel_x, double rel_y) {
  if (!(rel_x > 0.0 && rel_x <= 1.0) || !(rel_y > 0.0 && rel_y <= 1.0)) {
    throw DataError(fmt::format("reliabilities must lie in (0, 1], got {} and {}", rel_x, rel_y));
  }
  Disattenuated d;
  d.r_dis = r / std::sqrt(rel_x * rel_y);
  d.out_of_range = std::abs(d.r_dis) > 1.0;
  return d;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  check_lengths(a.size(), b.size(), "paired_t_test");
  const std::size_t n = a.size();
  if (n < 2) throw DataError("paired t-test needs n >= 2");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double md = mean_of(d);
  double ss = 0.0;
  for (double v : d) ss += (v - md) * (v - md);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  r.df = static_cast<int>(n - 1);
  if (sd == 0.0) {
    if (md == 0.0) return r;
    r.t = md > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p_two_sided = 0.0;
    r.degenerate = true;
    return r;
  }
  r.t = md / (sd / std::sqrt(static_cast<double>(n)));
  r.p_two_sided = student_t_two_sided(r.t, r.df);
  return r;
}

double fold_standard_error(std::span<const double> fold_mses) {
  const std::size_t k = fold_mses.size();
  if (k < 2) throw DataError("standard error needs at least 2 folds");
  // Shifted by the first value so equal folds give exactly zero.
  const double shift = fold_mses[0];
  double s = 0.0, ss = 0.0;
  for (double v : fold_mses) {
    s += v - shift;
    ss += (v - shift) * (v - shift);
  }
  const double var = std::max(0.0, (ss - s * s / static_cast<double>(k)) / static_cast<double>(k - 1));
  return std::sqrt(var) / std::sqrt(static_cast<double>(k));
}

EvalResult evaluate(std::span<const double> y, std::span<const double> yhat, double rel_x, double rel_y) {
  EvalResult e;
  e.n = y.size();
  e.mse = mse(y, yhat);
  try {
    e.pearson_r = pearson_r(yhat, y);
  } catch (const DataError&) {
    e.pearson_r = std::numeric_limits<double>::quiet_NaN();
  }
  e.r_dis = disattenuate(e.pearson_r, rel_x, rel_y).r_dis;
  return e;
}

}  // namespace layerforge
