#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "layerforge/aggregate.hpp"
#include "layerforge/corpus.hpp"
#include "layerforge/ridge.hpp"

namespace layerforge {

class FoldAssignment {
 public:
  FoldAssignment() = default;
  FoldAssignment(int k, std::uint64_t seed,
                 std::unordered_map<std::string, int> assignment);

  int k() const { return k_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return assignment_.size(); }

  /// Throws DataError for users that were never assigned.
  int fold_of(const std::string& user_id) const;
  std::vector<int> row_folds(const std::vector<std::string>& user_ids) const;
  std::vector<std::size_t> fold_sizes() const;

 private:
  int k_ = 0;
  std::uint64_t seed_ = 0;
  std::unordered_map<std::string, int> assignment_;
};

/// Sorts ids, shuffles with the seeded generator, deals round-robin.
FoldAssignment make_folds(std::vector<std::string> user_ids, int k,
                          std::uint64_t seed);

struct CvReport {
  LayerSet layer_set;
  double alpha_star = 0.0;
  std::vector<double> fold_mses;  // at alpha_star
  double mean_mse = 0.0;
  double std_err = 0.0;
  std::vector<std::string> user_ids;
  std::vector<double> y;
  std::vector<double> oof_predictions;  // aligned with user_ids
  // Full grid, for the CSV: grid_fold_mse[a][f].
  std::vector<double> alphas;
  std::vector<std::vector<double>> grid_fold_mse;

  /// Per-user squared out-of-fold errors, used for paired tests.
  std::vector<double> squared_errors() const;
};

struct CvOptions {
  bool standardize = false;
  bool use_reference_kernel = false;
  FoldObserver observer;
};

CvReport cross_validate(const Corpus& c, const LayerSet& ls,
                        const FoldAssignment& folds, const AlphaGrid& grid,
                        const CvOptions& opts = {});

/// Alpha search on an already built design, using the corpus folds.
GridSearchResult grid_search(const FoldAssignment& folds, const DesignMatrix& d,
                             const AlphaGrid& grid, bool standardize);

/// Self-describing text block.
std::string to_text(const CvReport& r);
/// CSV with header layer_set,alpha,fold,mse covering every grid cell.
std::string to_csv(const CvReport& r);

}  // namespace layerforge
