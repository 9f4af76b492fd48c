#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "layerforge/aggregate.hpp"
#include "layerforge/corpus.hpp"
#include "layerforge/cv.hpp"
#include "layerforge/metrics.hpp"
#include "layerforge/ridge.hpp"

namespace layerforge {

struct SelectionConfig {
  int max_layers = 8;
  double epsilon = 0.0;
  int top_k_report = 10;
  int k = 10;
  std::uint64_t seed = 0;
  AlphaGrid grid = AlphaGrid::standard();
  bool standardize = false;
  double significance = 0.05;
  FoldObserver observer;  // forwarded to every cross-validation

  void check(int num_layers) const;
};

struct Candidate {
  int added_layer = 0;
  LayerSet layers;
  double mean_mse = 0.0;
  double std_err = 0.0;
  double alpha_star = 0.0;
  // Paired t-test of per-user OOF squared errors against rank 1.
  // Unset for rank 1 itself.
  std::optional<TTestResult> vs_rank1;
  bool significantly_worse = false;
};

struct Stage {
  LayerSet prefix;                // empty at stage 1
  std::vector<Candidate> ranked;  // ascending mean_mse, ties to lower layer
  int chosen_layer = 0;
  bool tie_broken = false;        // rank 1 and 2 had identical mean_mse
  bool improved = false;          // beat the previous stage's best by > epsilon

  const Candidate& best() const { return ranked.front(); }
};

struct SelectionTrace {
  SelectionConfig config;
  int num_layers = 0;
  std::vector<Stage> stages;
  LayerSet recommended;
  double recommended_alpha = 0.0;
  double recommended_mse = 0.0;
  double recommended_std_err = 0.0;
  // Smallest improving prefix whose best MSE is within one standard error of
  // the recommendation.
  LayerSet one_se_alternative;
  std::string stop_reason;
};

/// One cross-validation per layer 1..L, in index order.
std::vector<CvReport> sweep_layers(const Corpus& c, const FoldAssignment& folds,
                                   const AlphaGrid& grid, const CvOptions& opts = {});

SelectionTrace greedy_select(const Corpus& c, const SelectionConfig& cfg);

struct FinalOptions {
  AlphaGrid grid = AlphaGrid::standard();
  bool standardize = false;
  int k = 10;
  std::uint64_t seed = 0;
  double rel_x = 1.0;
  double rel_y = 1.0;
  // user_id -> baseline prediction on the test set
  std::optional<OutcomeTable> baseline;
};

struct FinalResult {
  LayerSet layers;
  double alpha_star = 0.0;
  EvalResult eval;
  bool r_dis_out_of_range = false;
  std::vector<std::string> user_ids;
  std::vector<double> y;
  std::vector<double> yhat;
  std::optional<TTestResult> vs_baseline;  // a = ours, b = baseline
  std::optional<double> baseline_mse;
};

/// Throws DataError listing differing fields when the manifests disagree.
void check_compatible(const Manifest& train, const Manifest& test);

FinalResult evaluate_final(const Corpus& train, const Corpus& test,
                           const LayerSet& ls, const FinalOptions& opts = {});

std::string trace_csv(const SelectionTrace& t);
std::string trace_text(const SelectionTrace& t);
std::string recommendation_text(const SelectionTrace& t);
std::string sweep_csv(const std::vector<CvReport>& reports);
std::string sweep_text(const std::vector<CvReport>& reports);
std::string final_text(const FinalResult& r);
std::string predictions_csv(const FinalResult& r);

}  // namespace layerforge
