// Acceptance run: prints one PASS/FAIL line per criterion, exits non-zero on
// any failure. Uses synthetic corpora only.

#include <sys/wait.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "layerforge/corpus.hpp"
#include "layerforge/metrics.hpp"
#include "layerforge/ridge.hpp"
#include "layerforge/select.hpp"
#include "layerforge/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace layerforge;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

SynthSpec planted(std::uint64_t seed, std::vector<SignalTerm> signals) {
  SynthSpec spec;
  spec.n_users = 200;
  spec.num_layers = 12;
  spec.hidden_dim = 32;
  spec.noise_sigma = 0.3;
  spec.signals = std::move(signals);
  spec.seed = seed;
  return spec;
}

std::vector<int> sorted(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  return v;
}

Outcome ridge_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> p_dist(1, 50);
  const auto grid = AlphaGrid::standard().values;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int p = p_dist(rng);
    const int n = std::uniform_int_distribution<int>(2, 200)(rng);
    const double alpha = grid[static_cast<std::size_t>(trial) % grid.size()];
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd y(n);
    const double scale = std::pow(10.0, std::uniform_real_distribution<double>(-1, 2)(rng));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) X(i, j) = scale * nd(rng) + 0.3 * j;
      y[i] = 2.0 + nd(rng);
    }
    const auto m = fit(X, y, alpha);
    const auto o = oracle::ridge(X, y, alpha);
    std::vector<double> w(m.weights.data(), m.weights.data() + p);
    const Eigen::VectorXd pred = predict(m, X);
    std::vector<double> pv(pred.data(), pred.data() + n);
    worst = std::max({worst, oracle::max_rel_diff(w, o.weights), oracle::max_rel_diff(pv, oracle::ridge_predict(o, X))});
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 10.0, fmt::format("max relative diff {:.3g} (<= 1e-6), {:.2f} s (< 10 s)", worst, secs)};
}

Outcome shrinkage_limit() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 150, p = 30;
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) X(i, j) = nd(rng);
      y[i] = 3.0 + X(i, 0) + nd(rng);
    }
    const Eigen::VectorXd pred = predict(fit(X, y, 1e9), X);
    const double ybar = y.mean();
    for (int i = 0; i < n; ++i) worst = std::max(worst, std::abs(pred[i] - ybar) / std::abs(ybar));
  }
  return {worst <= 1e-3, fmt::format("max relative deviation from mean(y) {:.3g} (<= 1e-3)", worst)};
}

Outcome planted_recovery() {
  const auto t0 = Clock::now();
  int single = 0, pair = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SelectionConfig cfg;
    cfg.seed = seed;
    cfg.max_layers = 2;
    const auto one = greedy_select(generate(planted(seed, {{7, 1.0, {}}})).corpus, cfg);
    single += one.stages.front().chosen_layer == 7;
    const auto two = greedy_select(generate(planted(1000 + seed, {{3, 0.6, {}}, {9, 0.4, {}}})).corpus, cfg);
    pair += two.stages.size() >= 2 && sorted(two.stages[1].best().layers.layers()) == std::vector<int>{3, 9};
  }
  const double secs = seconds_since(t0);
  return {single >= 95 && pair >= 90 && secs < 300.0,
          fmt::format("single-layer stage 1 {}/100 (>= 95), two-layer stage-2 prefix {}/100 (>= 90), {:.1f} s (< 300 s)",
                      single, pair, secs)};
}

Outcome bayes_floor() {
  auto spec = planted(41, {{7, 1.0, {}}});
  spec.n_users = 2000;
  spec.n_test_users = 2000;
  spec.noise_sigma = 0.5;
  const auto gen = generate(spec);
  const auto r = evaluate_final(gen.corpus, gen.test, LayerSet({7}));
  const double rel = std::abs(r.eval.mse - 0.25) / 0.25;
  return {rel <= 0.10, fmt::format("held-out MSE {:.4f} vs floor 0.25, relative gap {:.3f} (<= 0.10)", r.eval.mse, rel)};
}

Outcome stop_rule() {
  int ok = 0;
  std::string failures;
  const int seeds = 10;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    const Corpus c = generate(planted(500 + seed, {{3, 0.6, {}}, {9, 0.4, {}}})).corpus;
    SelectionConfig cfg;
    cfg.seed = seed;
    cfg.epsilon = 0.0;
    const auto t = greedy_select(c, cfg);
    const bool good = t.stages.size() == 3 && t.stages[1].improved && !t.stages[2].improved &&
                      sorted(t.recommended.layers()) == std::vector<int>{3, 9};
    ok += good;
    if (!good) failures += fmt::format(" seed {}: {};", seed, t.stop_reason);
  }
  return {ok == seeds, fmt::format("stopped after stage 3 with {{3,9}} recommended in {}/{} corpora{}", ok, seeds,
                                   failures)};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> len(3, 200);
  double worst_r = 0.0, worst_t = 0.0, worst_p = 0.0, worst_se = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(len(rng));
    std::vector<double> a(n), b(n);
    const double shift = 0.2 * nd(rng);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = nd(rng) * 2.0 + 1.0;
      b[i] = 0.6 * a[i] + nd(rng) + shift;
    }
    worst_r = std::max(worst_r, std::abs(pearson_r(a, b) - oracle::pearson(a, b)));

    long double md = 0.0L;
    for (std::size_t i = 0; i < n; ++i) md += static_cast<long double>(a[i]) - b[i];
    md /= n;
    long double ss = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      const long double d = static_cast<long double>(a[i]) - b[i] - md;
      ss += d * d;
    }
    const double t_ref = static_cast<double>(md / (std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<long double>(n))));
    const boost::math::students_t dist(static_cast<double>(n - 1));
    const double p_ref = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t_ref)));
    const auto tt = paired_t_test(a, b);
    worst_t = std::max(worst_t, std::abs(tt.t - t_ref) / std::max(1.0, std::abs(t_ref)));
    worst_p = std::max(worst_p, std::abs(tt.p_two_sided - p_ref));

    const std::vector<double> folds(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(n, 10)));
    const double se_ref = oracle::sample_sd(folds) / std::sqrt(static_cast<double>(folds.size()));
    worst_se = std::max(worst_se, std::abs(fold_standard_error(folds) - se_ref));
  }
  const bool exact = disattenuate(0.45, 1.0, 0.81).r_dis == 0.50;
  const double worst = std::max({worst_r, worst_t, worst_p, worst_se});
  return {worst <= 1e-6 && exact,
          fmt::format("max diff r {:.2g}, t {:.2g}, p {:.2g}, se {:.2g} (<= 1e-6); disattenuate(.45,1,.81) == .50: {}",
                      worst_r, worst_t, worst_p, worst_se, exact)};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + LAYERFORGE_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  const auto dir = testutil::scratch("acceptance_determinism");
  auto spec = planted(77, {{3, 0.6, {}}, {9, 0.4, {}}});
  const auto out = generate(spec);
  write_synth(out, spec, dir / "s");
  const std::string data = " -e " + (dir / "s.ule").string() + " -y " + (dir / "s.outcomes.csv").string() + " --seed 5";
  const int rc1 = run_cli("select" + data + " -o " + (dir / "a").string());
  const int rc2 = run_cli("select" + data + " -o " + (dir / "b").string());
  const int rc3 = run_cli("--threads 1 select" + data + " -o " + (dir / "c").string());
  const auto ta = testutil::slurp(dir / "a" / "trace.csv");
  const bool traces = rc1 == 0 && rc2 == 0 && rc3 == 0 && !ta.empty() && ta == testutil::slurp(dir / "b" / "trace.csv") &&
                      ta == testutil::slurp(dir / "c" / "trace.csv");

  write_embeddings(out.corpus, dir / "w1.ule");
  LoadOptions opts;
  opts.min_words = 0;
  write_outcomes(out.corpus.outcomes, dir / "w1.csv");
  write_embeddings(load_corpus(dir / "w1.ule", dir / "w1.csv", opts), dir / "w2.ule");
  const auto w1 = testutil::slurp(dir / "w1.ule");
  const bool stable = !w1.empty() && w1 == testutil::slurp(dir / "w2.ule");
  return {traces && stable, fmt::format("trace.csv identical across 3 select runs: {}; write-read-write byte-stable "
                                        "({} bytes): {}",
                                        traces, w1.size(), stable)};
}

Outcome oof_purity() {
  const Corpus c = generate(planted(11, {{3, 0.6, {}}, {9, 0.4, {}}})).corpus;
  const auto n = static_cast<int>(c.users.size());
  std::mutex mu;
  std::atomic<long> calls{0}, leaks{0}, misplaced{0};
  SelectionConfig cfg;
  const auto folds = make_folds([&] {
    std::vector<std::string> ids;
    for (const auto& u : c.users) ids.push_back(u.user_id);
    return ids;
  }(), cfg.k, cfg.seed);
  cfg.observer = [&](int fold, std::span<const int> train, std::span<const int> eval) {
    ++calls;
    std::vector<char> in_train(static_cast<std::size_t>(n), 0);
    for (int r : train) in_train[static_cast<std::size_t>(r)] = 1;
    for (int r : eval) {
      if (in_train[static_cast<std::size_t>(r)]) ++leaks;
      if (folds.fold_of(c.users[static_cast<std::size_t>(r)].user_id) != fold) ++misplaced;
    }
    if (train.size() + eval.size() != static_cast<std::size_t>(n)) ++misplaced;
  };
  const auto t = greedy_select(c, cfg);
  long candidates = 0;
  for (const auto& st : t.stages) candidates += static_cast<long>(st.ranked.size());
  const bool ok = leaks == 0 && misplaced == 0 && calls == candidates * cfg.k && calls > 0;
  return {ok, fmt::format("{} fold fits over {} stages observed, {} eval users in training, {} misassigned rows",
                          calls.load(), t.stages.size(), leaks.load(), misplaced.load())};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"ridge-oracle-equivalence", ridge_oracle},
      {"shrinkage-limit", shrinkage_limit},
      {"planted-layer-recovery", planted_recovery},
      {"bayes-floor-convergence", bayes_floor},
      {"stop-rule-fidelity", stop_rule},
      {"metric-oracles", metric_oracles},
      {"determinism", determinism},
      {"out-of-fold-purity", oof_purity},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << fmt::format("{}/{} criteria passed", criteria.size() - static_cast<std::size_t>(failed), criteria.size())
            << std::endl;
  return failed == 0 ? 0 : 1;
}
