#include "layerforge/aggregate.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <unordered_set>

#include <fmt/format.h>

#include "layerforge/error.hpp"

namespace layerforge {

LayerSet::LayerSet(std::vector<int> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw DataError("layer set must not be empty");
  std::unordered_set<int> seen;
  for (int l : layers_) {
    if (l < 1) throw DataError(fmt::format("layer index {} is not 1-based", l));
    if (!seen.insert(l).second) throw DataError(fmt::format("duplicate layer {} in layer set", l));
  }
}

LayerSet LayerSet::parse(std::string_view text) {
  std::vector<int> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == ';' || text[i] == ',' || text[i] == '+')) ++i;
    if (i == text.size()) break;
    if (text[i] == 'L' || text[i] == 'l') ++i;
    int v = 0;
    auto [p, ec] = std::from_chars(text.data() + i, text.data() + text.size(), v);
    if (ec != std::errc()) throw UsageError(fmt::format("cannot parse layer list '{}'", text));
    out.push_back(v);
    i = static_cast<std::size_t>(p - text.data());
  }
  return LayerSet(std::move(out));
}

bool LayerSet::contains(int layer) const {
  return std::find(layers_.begin(), layers_.end(), layer) != layers_.end();
}

LayerSet LayerSet::with(int layer) const {
  auto v = layers_;
  v.push_back(layer);
  return LayerSet(std::move(v));
}

void LayerSet::check_range(int num_layers) const {
  if (layers_.empty()) throw DataError("layer set must not be empty");
  for (int l : layers_) {
    if (l < 1 || l > num_layers) {
      throw DataError(fmt::format("layer index {} out of range [1, {}]", l, num_layers));
    }
  }
}

std::string LayerSet::label() const {
  std::string s;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(layers_[i]);
  }
  return s;
}

Eigen::VectorXd pool_user(const UserEmbeddings& u, int layer, const Manifest& m) {
  if (layer < 1 || layer > m.num_layers) {
    throw DataError(fmt::format("layer index {} out of range [1, {}]", layer, m.num_layers));
  }
  if (u.total_token_count == 0) throw DataError("user " + u.user_id + " has zero tokens; cannot pool");
  auto sums = u.layer(layer, m.hidden_dim);
  const double count = static_cast<double>(u.total_token_count);
  Eigen::VectorXd v(sums.size());
  for (std::size_t i = 0; i < sums.size(); ++i) v[static_cast<Eigen::Index>(i)] = static_cast<double>(sums[i]) / count;
  return v;
}

namespace {

DesignMatrix allocate_design(const Corpus& c, const LayerSet& ls) {
  ls.check_range(c.manifest.num_layers);
  DesignMatrix d;
  const auto n = static_cast<Eigen::Index>(c.users.size());
  d.X.resize(n, static_cast<Eigen::Index>(c.manifest.hidden_dim * ls.size()));
  d.y.resize(n);
  d.user_ids.reserve(c.users.size());
  const std::size_t width = static_cast<std::size_t>(c.manifest.num_layers) * c.manifest.hidden_dim;
  for (const auto& u : c.users) {
    if (u.total_token_count == 0) throw DataError("user " + u.user_id + " has zero tokens; cannot pool");
    if (u.layer_sums.size() != width) {
      throw DataError(fmt::format("user {}: expected {} values, got {}", u.user_id, width, u.layer_sums.size()));
    }
    auto it = c.outcomes.find(u.user_id);
    if (it == c.outcomes.end()) throw DataError("user " + u.user_id + " has no outcome");
    d.y[static_cast<Eigen::Index>(d.user_ids.size())] = it->second;
    d.user_ids.push_back(u.user_id);
  }
  return d;
}

void fill_row(DesignMatrix& d, Eigen::Index row, const UserEmbeddings& u, const LayerSet& ls,
              const Manifest& m) {
  const auto H = static_cast<Eigen::Index>(m.hidden_dim);
  for (std::size_t j = 0; j < ls.size(); ++j) {
    d.X.row(row).segment(static_cast<Eigen::Index>(j) * H, H) = pool_user(u, ls.layers()[j], m).transpose();
  }
}

}  // namespace

DesignMatrix build_design(const Corpus& c, const LayerSet& ls) {
  DesignMatrix d = allocate_design(c, ls);
  const auto n = static_cast<std::int64_t>(c.users.size());
#pragma omp parallel for schedule(static) if (n > 256)
  for (std::int64_t i = 0; i < n; ++i) {
    fill_row(d, i, c.users[static_cast<std::size_t>(i)], ls, c.manifest);
  }
  return d;
}

DesignMatrix build_design_serial(const Corpus& c, const LayerSet& ls) {
  DesignMatrix d = allocate_design(c, ls);
  for (std::size_t i = 0; i < c.users.size(); ++i) {
    fill_row(d, static_cast<Eigen::Index>(i), c.users[i], ls, c.manifest);
  }
  return d;
}

void write_design_csv(const DesignMatrix& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "user_id";
  for (Eigen::Index j = 0; j < d.X.cols(); ++j) out << ",x" << j;
  out << '\n';
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    out << d.user_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < d.X.cols(); ++j) out << ',' << fmt::format("{}", d.X(i, j));
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace layerforge
