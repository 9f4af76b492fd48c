#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "layerforge/corpus.hpp"

namespace layerforge {

enum class TokenDistribution {
  // Independent user latents per layer: non-signal layers carry no signal.
  gaussian_iid,
  // Latents follow an AR(1) chain across layers with a per-layer shift, so
  // neighbouring layers are correlated.
  layerwise_shift,
};

struct SignalTerm {
  int layer = 1;
  double weight = 1.0;
  // Projection applied to the pooled vector. Empty: drawn from the seed with
  // unit expected norm.
  std::vector<double> direction;
};

struct SynthSpec {
  int n_users = 200;
  // Held-out users drawn from the same ground truth (directions and layer
  // offsets). Stored in SynthOutput::test with ids continuing the numbering.
  int n_test_users = 0;
  int messages_min = 20, messages_max = 40;
  int tokens_min = 50, tokens_max = 80;
  int num_layers = 12;
  int hidden_dim = 32;
  std::vector<SignalTerm> signals{{7, 1.0, {}}};
  double noise_sigma = 0.3;
  double token_sigma = 1.0;
  double layer_correlation = 0.8;  // layerwise_shift only
  double intercept = 3.0;
  TokenDistribution distribution = TokenDistribution::gaussian_iid;
  Granularity granularity = Granularity::user;
  bool retain_tokens = false;
  bool nonlinear = false;
  std::uint64_t seed = 0;
  std::string id_prefix = "u";
  Split split = Split::train;

  void check() const;
};

struct SynthTruth {
  // Effective weight vector of each signal term (weight * direction).
  std::vector<SignalTerm> signals;
  std::vector<std::vector<double>> weights;
  double noise_sigma = 0.0;
  double bayes_mse = 0.0;
  double intercept = 0.0;
  std::vector<double> signal;  // noiseless outcome per user, train then test
  // Raw token vectors when retained: tokens[user][message] is a flat
  // (tokens x L x H) array, token-major then layer-major.
  std::vector<std::vector<std::vector<float>>> tokens;
};

struct SynthOutput {
  Corpus corpus;
  // Message records when granularity == message.
  std::vector<MessageUser> messages;
  Corpus test;  // empty unless n_test_users > 0
  std::vector<MessageUser> test_messages;
  SynthTruth truth;
};

SynthOutput generate(const SynthSpec& spec);

/// Writes `<prefix>.ule`, its manifest, `<prefix>.outcomes.csv`,
/// `<prefix>.truth` (key=value) and `<prefix>.truth.bin` (f32le weights).
/// Held-out users go to `<prefix>.test.ule` and `<prefix>.test.outcomes.csv`.
void write_synth(const SynthOutput& out, const SynthSpec& spec,
                 const std::filesystem::path& prefix);

}  // namespace layerforge
