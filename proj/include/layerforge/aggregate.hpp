#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "layerforge/corpus.hpp"

namespace layerforge {

/// Ordered, duplicate-free list of 1-based layer indices. Order is selection
/// order and fixes the column layout of the concatenated representation.
class LayerSet {
 public:
  LayerSet() = default;
  explicit LayerSet(std::vector<int> layers);

  /// Parses "19;16;24" (commas and '+' are accepted as separators too).
  static LayerSet parse(std::string_view text);

  const std::vector<int>& layers() const { return layers_; }
  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  bool contains(int layer) const;

  LayerSet with(int layer) const;

  /// Throws DataError unless every index lies in [1, num_layers].
  void check_range(int num_layers) const;

  /// "19;16;24"
  std::string label() const;

  bool operator==(const LayerSet&) const = default;

 private:
  std::vector<int> layers_;
};

/// Elementwise mean of the user's token vectors at `layer`.
Eigen::VectorXd pool_user(const UserEmbeddings& u, int layer, const Manifest& m);

struct DesignMatrix {
  std::vector<std::string> user_ids;
  Eigen::MatrixXd X;  // n x (H * |layers|)
  Eigen::VectorXd y;
};

/// Rows follow corpus user order; each row concatenates the pooled vectors of
/// `ls` in its order. Rows are built in parallel.
DesignMatrix build_design(const Corpus& c, const LayerSet& ls);

/// Serial reference for build_design.
DesignMatrix build_design_serial(const Corpus& c, const LayerSet& ls);

void write_design_csv(const DesignMatrix& d, const std::filesystem::path& path);

}  // namespace layerforge
