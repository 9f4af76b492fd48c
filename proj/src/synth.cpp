#include "layerforge/synth.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>

#include "layerforge/aggregate.hpp"
#include "layerforge/error.hpp"
#include "layerforge/report.hpp"

namespace layerforge {

void SynthSpec::check() const {
  if (n_users < 0 || n_test_users < 0) throw UsageError("user counts must be non-negative");
  if (messages_min < 1 || messages_max < messages_min) throw UsageError("invalid messages-per-user range");
  if (tokens_min < 1 || tokens_max < tokens_min) throw UsageError("invalid tokens-per-message range");
  if (num_layers < 1 || num_layers > 0xffff) throw UsageError("num_layers must lie in [1, 65535]");
  if (hidden_dim < 1) throw UsageError("hidden_dim must be >= 1");
  if (!(noise_sigma >= 0.0)) throw UsageError("noise_sigma must be non-negative");
  if (!(token_sigma >= 0.0)) throw UsageError("token_sigma must be non-negative");
  if (!(layer_correlation >= 0.0 && layer_correlation < 1.0)) throw UsageError("layer_correlation must lie in [0, 1)");
  for (const auto& s : signals) {
    if (s.layer < 1 || s.layer > num_layers) {
      throw UsageError(fmt::format("signal layer {} outside [1, {}]", s.layer, num_layers));
    }
    if (!s.direction.empty() && s.direction.size() != static_cast<std::size_t>(hidden_dim)) {
      throw UsageError(fmt::format("signal direction has {} entries, expected {}", s.direction.size(), hidden_dim));
    }
  }
}

SynthOutput generate(const SynthSpec& spec) {
  spec.check();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> n_messages(spec.messages_min, spec.messages_max);
  std::uniform_int_distribution<int> n_tokens(spec.tokens_min, spec.tokens_max);
  const auto L = static_cast<std::size_t>(spec.num_layers);
  const auto H = static_cast<std::size_t>(spec.hidden_dim);

  SynthOutput out;
  SynthTruth& truth = out.truth;
  truth.signals = spec.signals;
  truth.noise_sigma = spec.noise_sigma;
  truth.bayes_mse = spec.noise_sigma * spec.noise_sigma;
  truth.intercept = spec.intercept;
  for (auto& s : truth.signals) {
    if (s.direction.empty()) {
      s.direction.resize(H);
      for (auto& v : s.direction) v = normal(rng) / std::sqrt(static_cast<double>(H));
    }
    std::vector<double> w(H);
    for (std::size_t j = 0; j < H; ++j) w[j] = s.weight * s.direction[j];
    truth.weights.push_back(std::move(w));
  }

  // Layer-specific means shared by all users.
  std::vector<double> layer_offset(L * H);
  for (auto& v : layer_offset) v = 0.5 * normal(rng);

  Corpus& c = out.corpus;
  c.manifest.model_name = "synthetic";
  c.manifest.num_layers = static_cast<std::uint16_t>(L);
  c.manifest.hidden_dim = static_cast<std::uint32_t>(H);
  c.manifest.granularity = spec.granularity;
  c.manifest.notes = fmt::format("synthetic corpus, seed {}", spec.seed);
  c.split = spec.split;

  Corpus& held_out = out.test;
  held_out.manifest = c.manifest;
  held_out.split = Split::test;

  const int total_users = spec.n_users + spec.n_test_users;
  const int id_width = static_cast<int>(std::to_string(std::max(total_users, 1)).size());
  const double rho = spec.distribution == TokenDistribution::layerwise_shift ? spec.layer_correlation : 0.0;
  const double fresh = std::sqrt(1.0 - rho * rho);
  std::vector<double> latent(L * H);
  std::vector<double> acc(L * H);

  for (int u = 0; u < total_users; ++u) {
    const bool is_test = u >= spec.n_users;
    Corpus& dest = is_test ? held_out : c;
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t j = 0; j < H; ++j) {
        const double z = normal(rng);
        const double prev = l == 0 ? 0.0 : latent[(l - 1) * H + j] - layer_offset[(l - 1) * H + j];
        const double own = spec.distribution == TokenDistribution::layerwise_shift && l > 0 ? rho * prev + fresh * z : z;
        latent[l * H + j] = layer_offset[l * H + j] + own;
      }
    }

    MessageUser mu;
    mu.user_id = fmt::format("{}{:0{}}", spec.id_prefix, u, id_width);
    std::vector<std::vector<float>> user_tokens;
    const int m_count = n_messages(rng);
    for (int m = 0; m < m_count; ++m) {
      MessageEmbeddings msg;
      msg.message_id = fmt::format("m{}", m);
      const int t_count = n_tokens(rng);
      msg.token_count = static_cast<std::uint64_t>(t_count);
      if (spec.retain_tokens) {
        std::vector<float> toks(static_cast<std::size_t>(t_count) * L * H);
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int t = 0; t < t_count; ++t) {
          for (std::size_t i = 0; i < L * H; ++i) {
            const float v = static_cast<float>(latent[i] + spec.token_sigma * normal(rng));
            toks[static_cast<std::size_t>(t) * L * H + i] = v;
            acc[i] += v;
          }
        }
        user_tokens.push_back(std::move(toks));
      } else {
        // Sum of t_count iid N(mu, tau^2) tokens.
        const double sd = spec.token_sigma * std::sqrt(static_cast<double>(t_count));
        for (std::size_t i = 0; i < L * H; ++i) acc[i] = t_count * latent[i] + sd * normal(rng);
      }
      msg.layer_sums.assign(acc.begin(), acc.end());
      mu.messages.push_back(std::move(msg));
    }

    UserEmbeddings ue = fold_messages(mu, c.manifest.num_layers, c.manifest.hidden_dim);
    double signal = 0.0;
    for (std::size_t s = 0; s < truth.signals.size(); ++s) {
      const Eigen::VectorXd pooled = pool_user(ue, truth.signals[s].layer, c.manifest);
      for (std::size_t j = 0; j < H; ++j) signal += truth.weights[s][j] * pooled[static_cast<Eigen::Index>(j)];
    }
    double y = spec.intercept + signal;
    if (spec.nonlinear) y += 0.3 * signal * signal;
    truth.signal.push_back(y);
    y += spec.noise_sigma * normal(rng);

    if (spec.retain_tokens) truth.tokens.push_back(std::move(user_tokens));
    dest.outcomes.emplace(ue.user_id, y);
    dest.users.push_back(std::move(ue));
    if (spec.granularity == Granularity::message) (is_test ? out.test_messages : out.messages).push_back(std::move(mu));
  }
  return out;
}

void write_synth(const SynthOutput& out, const SynthSpec& spec, const std::filesystem::path& prefix) {
  auto with = [&](const char* suffix) {
    auto p = prefix;
    p += suffix;
    return p;
  };
  const auto emb = with(".ule");
  if (spec.granularity == Granularity::message) {
    write_message_embeddings(out.corpus.manifest, out.messages, emb);
  } else {
    write_embeddings(out.corpus, emb);
  }
  write_manifest(out.corpus.manifest, manifest_path(emb));
  write_outcomes(out.corpus.outcomes, with(".outcomes.csv"));
  if (spec.n_test_users > 0) {
    const auto test_emb = with(".test.ule");
    if (spec.granularity == Granularity::message) {
      write_message_embeddings(out.test.manifest, out.test_messages, test_emb);
    } else {
      write_embeddings(out.test, test_emb);
    }
    write_manifest(out.test.manifest, manifest_path(test_emb));
    write_outcomes(out.test.outcomes, with(".test.outcomes.csv"));
  }

  const auto& t = out.truth;
  std::ofstream kv(with(".truth"), std::ios::binary);
  if (!kv) throw DataError("cannot write truth sidecar for " + prefix.string());
  kv << "seed=" << spec.seed << '\n';
  kv << "n_users=" << spec.n_users << '\n';
  kv << "n_test_users=" << spec.n_test_users << '\n';
  kv << "num_layers=" << spec.num_layers << '\n';
  kv << "hidden_dim=" << spec.hidden_dim << '\n';
  kv << "distribution=" << (spec.distribution == TokenDistribution::gaussian_iid ? "gaussian_iid" : "layerwise_shift")
     << '\n';
  kv << "nonlinear=" << (spec.nonlinear ? "true" : "false") << '\n';
  kv << "intercept=" << format_full(t.intercept) << '\n';
  kv << "noise_sigma=" << format_full(t.noise_sigma) << '\n';
  kv << "bayes_mse=" << format_full(t.bayes_mse) << '\n';
  std::string layers, weights;
  for (std::size_t s = 0; s < t.signals.size(); ++s) {
    if (s) {
      layers += ';';
      weights += ';';
    }
    layers += std::to_string(t.signals[s].layer);
    weights += format_full(t.signals[s].weight);
  }
  kv << "signal_layers=" << layers << '\n';
  kv << "signal_weights=" << weights << '\n';
  kv << "weights_file=" << with(".truth.bin").filename().string() << '\n';

  // TRU1, u16 term count, then per term: u16 layer, u32 H, H f32 weights.
  std::ofstream bin(with(".truth.bin"), std::ios::binary);
  if (!bin) throw DataError("cannot write truth weights for " + prefix.string());
  auto put = [&](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) bin.put(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  bin.write("TRU1", 4);
  put(t.signals.size(), 2);
  for (std::size_t s = 0; s < t.signals.size(); ++s) {
    put(static_cast<std::uint64_t>(t.signals[s].layer), 2);
    put(t.weights[s].size(), 4);
    for (double w : t.weights[s]) put(std::bit_cast<std::uint32_t>(static_cast<float>(w)), 4);
  }
  if (!kv || !bin) throw DataError("write failed for truth sidecars of " + prefix.string());
}

}  // namespace layerforge
