#include "layerforge/select.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include <fmt/format.h>
#include <omp.h>

#include "layerforge/error.hpp"
#include "layerforge/report.hpp"

namespace layerforge {

void SelectionConfig::check(int num_layers) const {
  if (max_layers < 1) throw UsageError("max_layers must be >= 1");
  if (max_layers > num_layers) {
    throw UsageError(fmt::format("max_layers {} exceeds the layer count {}", max_layers, num_layers));
  }
  if (!(epsilon >= 0.0)) throw UsageError("epsilon must be non-negative");
  if (top_k_report < 1) throw UsageError("top_k_report must be >= 1");
  if (k < 2) throw UsageError("k must be >= 2");
  if (!(significance > 0.0 && significance < 1.0)) throw UsageError("significance level must lie in (0, 1)");
  grid.check();
}

namespace {

// Runs one cross-validation per layer set. Candidates are independent; each
// writes only its own slot.
std::vector<CvReport> evaluate_all(const Corpus& c, const std::vector<LayerSet>& sets,
                                   const FoldAssignment& folds, const AlphaGrid& grid,
                                   const CvOptions& opts) {
  const auto n = static_cast<std::int64_t>(sets.size());
  std::vector<CvReport> out(sets.size());
  std::vector<std::exception_ptr> errors(sets.size());
#pragma omp parallel for schedule(dynamic, 1) if (!omp_in_parallel())
  for (std::int64_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      out[idx] = cross_validate(c, sets[idx], folds, grid, opts);
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<std::string> ids_of(const Corpus& c) {
  std::vector<std::string> ids;
  ids.reserve(c.users.size());
  for (const auto& u : c.users) ids.push_back(u.user_id);
  return ids;
}

std::string grid_label(const AlphaGrid& g) {
  std::string s = "{";
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    if (i) s += ", ";
    s += format_full(g.values[i]);
  }
  return s + "}";
}

std::string compact_label(const LayerSet& ls) {
  auto v = ls.layers();
  std::sort(v.begin(), v.end());
  std::string s = "L";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += '+';
    s += std::to_string(v[i]);
  }
  return s;
}

std::string config_block(const SelectionConfig& cfg, int num_layers) {
  std::string s;
  s += fmt::format("num_layers={}\n", num_layers);
  s += fmt::format("k={}\n", cfg.k);
  s += fmt::format("seed={}\n", cfg.seed);
  s += fmt::format("alpha_grid={}\n", grid_label(cfg.grid));
  s += fmt::format("standardize={}\n", cfg.standardize ? "true" : "false");
  s += fmt::format("max_layers={}\n", cfg.max_layers);
  s += fmt::format("epsilon={}\n", format_full(cfg.epsilon));
  s += fmt::format("top_k_report={}\n", cfg.top_k_report);
  s += fmt::format("significance={}\n", format_full(cfg.significance));
  return s;
}

}  // namespace

std::vector<CvReport> sweep_layers(const Corpus& c, const FoldAssignment& folds, const AlphaGrid& grid,
                                   const CvOptions& opts) {
  if (c.users.empty()) throw DataError("cannot sweep an empty corpus");
  std::vector<LayerSet> sets;
  for (int l = 1; l <= c.manifest.num_layers; ++l) sets.emplace_back(std::vector<int>{l});
  return evaluate_all(c, sets, folds, grid, opts);
}

SelectionTrace greedy_select(const Corpus& c, const SelectionConfig& cfg) {
  if (c.users.empty()) throw DataError("cannot run layer selection on an empty corpus");
  const int L = c.manifest.num_layers;
  cfg.check(L);

  SelectionTrace trace;
  trace.config = cfg;
  trace.num_layers = L;
  const FoldAssignment folds = make_folds(ids_of(c), cfg.k, cfg.seed);
  CvOptions opts;
  opts.standardize = cfg.standardize;
  opts.observer = cfg.observer;

  LayerSet prefix;
  double prev_best = std::numeric_limits<double>::infinity();
  for (int s = 1;; ++s) {
    std::vector<int> remaining;
    for (int l = 1; l <= L; ++l) {
      if (!prefix.contains(l)) remaining.push_back(l);
    }
    if (remaining.empty()) {
      trace.stop_reason = "every layer is included";
      break;
    }
    std::vector<LayerSet> sets;
    for (int l : remaining) sets.push_back(prefix.empty() ? LayerSet({l}) : prefix.with(l));
    const std::vector<CvReport> reports = evaluate_all(c, sets, folds, cfg.grid, opts);

    std::vector<std::size_t> order(reports.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (reports[a].mean_mse != reports[b].mean_mse) return reports[a].mean_mse < reports[b].mean_mse;
      return remaining[a] < remaining[b];
    });

    Stage stage;
    stage.prefix = prefix;
    const auto best_sq = reports[order.front()].squared_errors();
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      const auto& rep = reports[order[rank]];
      Candidate cand;
      cand.added_layer = remaining[order[rank]];
      cand.layers = rep.layer_set;
      cand.mean_mse = rep.mean_mse;
      cand.std_err = rep.std_err;
      cand.alpha_star = rep.alpha_star;
      if (rank > 0) {
        const auto sq = rep.squared_errors();
        cand.vs_rank1 = paired_t_test(sq, best_sq);
        cand.significantly_worse =
            cand.vs_rank1->p_two_sided < cfg.significance && cand.mean_mse > reports[order.front()].mean_mse;
      }
      stage.ranked.push_back(std::move(cand));
    }
    stage.chosen_layer = stage.best().added_layer;
    stage.tie_broken = stage.ranked.size() > 1 && stage.ranked[0].mean_mse == stage.ranked[1].mean_mse;
    const double best = stage.best().mean_mse;
    stage.improved = s == 1 || best < prev_best - cfg.epsilon;
    trace.stages.push_back(stage);

    if (!stage.improved) {
      trace.stop_reason = fmt::format("stage {} best {} did not improve on stage {} best {}", s,
                                      format_full(best), s - 1, format_full(prev_best));
      break;
    }
    prefix = stage.best().layers;
    prev_best = best;
    trace.recommended = prefix;
    trace.recommended_alpha = stage.best().alpha_star;
    trace.recommended_mse = best;
    trace.recommended_std_err = stage.best().std_err;
    if (s == cfg.max_layers) {
      trace.stop_reason = fmt::format("reached max_layers = {}", cfg.max_layers);
      break;
    }
  }

  trace.one_se_alternative = trace.recommended;
  for (const auto& st : trace.stages) {
    if (st.improved && st.best().mean_mse <= trace.recommended_mse + trace.recommended_std_err) {
      trace.one_se_alternative = st.best().layers;
      break;
    }
  }
  return trace;
}

void check_compatible(const Manifest& train, const Manifest& test) {
  std::vector<std::string> diffs;
  if (train.num_layers != test.num_layers) {
    diffs.push_back(fmt::format("num_layers ({} vs {})", train.num_layers, test.num_layers));
  }
  if (train.hidden_dim != test.hidden_dim) {
    diffs.push_back(fmt::format("hidden_dim ({} vs {})", train.hidden_dim, test.hidden_dim));
  }
  if (train.includes_embedding_layer != test.includes_embedding_layer) {
    diffs.push_back(fmt::format("includes_embedding_layer ({} vs {})", train.includes_embedding_layer,
                                test.includes_embedding_layer));
  }
  if (train.model_name != test.model_name) {
    diffs.push_back(fmt::format("model_name ({} vs {})", train.model_name, test.model_name));
  }
  if (train.dtype != test.dtype) diffs.push_back(fmt::format("dtype ({} vs {})", train.dtype, test.dtype));
  if (!diffs.empty()) {
    std::string msg = "train/test manifests differ:";
    for (const auto& d : diffs) msg += " " + d + ";";
    msg.pop_back();
    throw DataError(msg);
  }
}

FinalResult evaluate_final(const Corpus& train, const Corpus& test, const LayerSet& ls,
                           const FinalOptions& opts) {
  check_compatible(train.manifest, test.manifest);
  if (train.users.empty() || test.users.empty()) throw DataError("train and test corpora must be non-empty");

  const FoldAssignment folds = make_folds(ids_of(train), opts.k, opts.seed);
  const DesignMatrix dtrain = build_design(train, ls);
  const GridSearchResult gs = grid_search(folds, dtrain, opts.grid, opts.standardize);
  const RidgeModel model = fit(dtrain.X, dtrain.y, gs.alpha_star, opts.standardize);

  const DesignMatrix dtest = build_design(test, ls);
  const Eigen::VectorXd pred = predict(model, dtest.X);

  FinalResult r;
  r.layers = ls;
  r.alpha_star = gs.alpha_star;
  r.user_ids = dtest.user_ids;
  r.y.assign(dtest.y.data(), dtest.y.data() + dtest.y.size());
  r.yhat.assign(pred.data(), pred.data() + pred.size());
  r.eval = evaluate(r.y, r.yhat, opts.rel_x, opts.rel_y);
  r.r_dis_out_of_range = std::abs(r.eval.r_dis) > 1.0;

  if (opts.baseline) {
    std::vector<double> ours(r.y.size()), theirs(r.y.size()), base_pred(r.y.size());
    for (std::size_t i = 0; i < r.y.size(); ++i) {
      auto it = opts.baseline->find(r.user_ids[i]);
      if (it == opts.baseline->end()) throw DataError("baseline predictions missing user " + r.user_ids[i]);
      base_pred[i] = it->second;
      ours[i] = (r.y[i] - r.yhat[i]) * (r.y[i] - r.yhat[i]);
      theirs[i] = (r.y[i] - it->second) * (r.y[i] - it->second);
    }
    r.vs_baseline = paired_t_test(ours, theirs);
    r.baseline_mse = mse(r.y, base_pred);
  }
  return r;
}

std::string trace_csv(const SelectionTrace& t) {
  std::string s = "stage,candidate_layer,prefix,mean_mse,std_err,p_vs_rank1,rank,alpha_star\n";
  for (std::size_t st = 0; st < t.stages.size(); ++st) {
    const auto& stage = t.stages[st];
    for (std::size_t i = 0; i < stage.ranked.size(); ++i) {
      const auto& c = stage.ranked[i];
      s += fmt::format("{},{},{},{},{},{},{},{}\n", st + 1, c.added_layer, stage.prefix.label(),
                       format_full(c.mean_mse), format_full(c.std_err),
                       c.vs_rank1 ? format_full(c.vs_rank1->p_two_sided) : std::string(), i + 1,
                       format_full(c.alpha_star));
    }
  }
  return s;
}

std::string trace_text(const SelectionTrace& t) {
  std::string s;
  const std::string footer = fmt::format(
      "v: p < {} on a paired t-test of pooled per-user out-of-fold squared errors against rank 1; "
      "alpha chosen per candidate by {}-fold CV over {}",
      format_full(t.config.significance), t.config.k, grid_label(t.config.grid));
  for (std::size_t st = 0; st < t.stages.size(); ++st) {
    const auto& stage = t.stages[st];
    std::vector<RankedRow> rows;
    const auto shown = std::min<std::size_t>(stage.ranked.size(), static_cast<std::size_t>(t.config.top_k_report));
    for (std::size_t i = 0; i < shown; ++i) {
      const auto& c = stage.ranked[i];
      RankedRow row{c.layers.label(), c.mean_mse, std::nullopt};
      if (c.vs_rank1) row.p_vs_best = c.vs_rank1->p_two_sided;
      rows.push_back(std::move(row));
    }
    std::string caption = fmt::format("Stage {} ({} layer{}; prefix {}; {} candidates){}", st + 1, st + 1,
                                      st == 0 ? "" : "s", stage.prefix.empty() ? "-" : stage.prefix.label(),
                                      stage.ranked.size(), stage.improved ? "" : " [no improvement]");
    std::string foot = footer;
    if (stage.tie_broken) foot += "\ntie at rank 1 broken toward the lower layer index";
    s += render_ranked(std::move(rows), caption, foot, t.config.significance).text;
    s += '\n';
  }
  s += "stop: " + t.stop_reason + "\n";
  s += fmt::format("recommended: {} (mean_mse {}, alpha {})\n", t.recommended.label(),
                   format_4dp(t.recommended_mse), format_full(t.recommended_alpha));
  if (t.one_se_alternative != t.recommended) {
    s += fmt::format("within one standard error: {}\n", t.one_se_alternative.label());
  }
  return s;
}

std::string recommendation_text(const SelectionTrace& t) {
  std::string s;
  s += fmt::format("layers={}\n", t.recommended.label());
  s += fmt::format("alpha_star={}\n", format_full(t.recommended_alpha));
  s += fmt::format("mean_mse={}\n", format_full(t.recommended_mse));
  s += fmt::format("std_err={}\n", format_full(t.recommended_std_err));
  s += fmt::format("one_se_alternative={}\n", t.one_se_alternative.label());
  s += fmt::format("stages_evaluated={}\n", t.stages.size());
  s += fmt::format("stop_reason={}\n", t.stop_reason);
  s += config_block(t.config, t.num_layers);
  return s;
}

std::string sweep_csv(const std::vector<CvReport>& reports) {
  std::string s = "layer,mean_mse,std_err\n";
  for (const auto& r : reports) {
    s += fmt::format("{},{},{}\n", r.layer_set.label(), format_full(r.mean_mse), format_full(r.std_err));
  }
  return s;
}

std::string sweep_text(const std::vector<CvReport>& reports) {
  std::string s = "# layer  mean_mse  std_err  alpha_star\n";
  for (const auto& r : reports) {
    s += fmt::format("{:>3}  {}  {}  {}\n", r.layer_set.label(), format_4dp(r.mean_mse), format_4dp(r.std_err),
                     format_full(r.alpha_star));
  }
  if (!reports.empty()) {
    auto best = std::min_element(reports.begin(), reports.end(), [](const CvReport& a, const CvReport& b) {
      return a.mean_mse < b.mean_mse;
    });
    s += fmt::format("best single layer: {} (mean_mse {})\n", best->layer_set.label(), format_4dp(best->mean_mse));
  }
  return s;
}

std::string final_text(const FinalResult& r) {
  std::string s;
  const auto r_str = [](double v) { return std::isnan(v) ? std::string("undefined") : format_full(v); };
  s += fmt::format("layers={}\n", r.layers.label());
  s += fmt::format("alpha_star={}\n", format_full(r.alpha_star));
  s += fmt::format("n={}\n", r.eval.n);
  s += fmt::format("mse={}\n", format_full(r.eval.mse));
  s += fmt::format("pearson_r={}\n", r_str(r.eval.pearson_r));
  s += fmt::format("r_dis={}\n", r_str(r.eval.r_dis));
  if (r.r_dis_out_of_range) s += "warning=r_dis outside [-1, 1]; reliabilities may be misconfigured\n";
  if (r.vs_baseline) {
    s += fmt::format("baseline_mse={}\n", format_full(*r.baseline_mse));
    s += fmt::format("t_vs_baseline={}\n", format_full(r.vs_baseline->t));
    s += fmt::format("df_vs_baseline={}\n", r.vs_baseline->df);
    s += fmt::format("p_vs_baseline={}\n", format_p(r.vs_baseline->p_two_sided));
    if (r.vs_baseline->degenerate) s += "t_test_degenerate=true\n";
  }
  s += fmt::format("table_row={}  r_dis {}  MSE {}\n", compact_label(r.layers),
                   std::isnan(r.eval.r_dis) ? std::string("undefined") : format_4dp(r.eval.r_dis),
                   format_4dp(r.eval.mse));
  return s;
}

std::string predictions_csv(const FinalResult& r) {
  std::string s = "user_id,y,yhat\n";
  for (std::size_t i = 0; i < r.user_ids.size(); ++i) {
    s += fmt::format("{},{},{}\n", r.user_ids[i], format_full(r.y[i]), format_full(r.yhat[i]));
  }
  return s;
}

}  // namespace layerforge
