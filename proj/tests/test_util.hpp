#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "layerforge/corpus.hpp"

namespace testutil {

// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("layerforge_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

// Small hand-made corpus: n users, L layers, H dims, values from a seeded RNG.
inline layerforge::Corpus small_corpus(int n, int L, int H, unsigned seed = 1) {
  layerforge::Corpus c;
  c.manifest.num_layers = static_cast<std::uint16_t>(L);
  c.manifest.hidden_dim = static_cast<std::uint32_t>(H);
  std::mt19937 rng(seed);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  for (int i = 0; i < n; ++i) {
    layerforge::UserEmbeddings u;
    u.user_id = "user" + std::to_string(i);
    u.total_token_count = 1000 + static_cast<std::uint64_t>(i);
    u.layer_sums.resize(static_cast<std::size_t>(L * H));
    for (auto& v : u.layer_sums) v = nd(rng) * 100.0f;
    c.outcomes[u.user_id] = 1.0 + 0.01 * i;
    c.users.push_back(std::move(u));
  }
  return c;
}

}  // namespace testutil
