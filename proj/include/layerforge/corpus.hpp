#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace layerforge {

enum class Granularity : std::uint8_t { user = 0, message = 1 };
enum class Split { train, test };

/// Per-store metadata. Header fields (layers, hidden size, granularity,
/// embedding-layer convention) live in the binary file; the rest come from
/// the `<embeddings>.manifest` sidecar.
struct Manifest {
  int format_version = 1;
  std::string model_name = "unknown";
  std::uint16_t num_layers = 0;
  std::uint32_t hidden_dim = 0;
  Granularity granularity = Granularity::user;
  // When set, layer 1 is the embedding-layer output and num_layers counts it.
  bool includes_embedding_layer = false;
  std::string dtype = "f32le";
  std::string notes;

  bool operator==(const Manifest&) const = default;
};

/// Token-sum vectors for one user, layer-major: layer l (1-based) occupies
/// [(l-1)*H, l*H).
struct UserEmbeddings {
  std::string user_id;
  std::uint64_t total_token_count = 0;
  std::vector<float> layer_sums;

  std::span<const float> layer(int layer, std::uint32_t hidden_dim) const {
    return std::span<const float>(layer_sums).subspan(
        static_cast<std::size_t>(layer - 1) * hidden_dim, hidden_dim);
  }
  bool operator==(const UserEmbeddings&) const = default;
};

struct MessageEmbeddings {
  std::string message_id;
  std::uint64_t token_count = 0;
  std::vector<float> layer_sums;
};

/// All messages of one user, as stored in a message-granularity file.
struct MessageUser {
  std::string user_id;
  std::vector<MessageEmbeddings> messages;
};

using OutcomeTable = std::map<std::string, double>;

struct Corpus {
  Manifest manifest;
  std::vector<UserEmbeddings> users;
  OutcomeTable outcomes;
  Split split = Split::train;

  std::size_t size() const { return users.size(); }
  bool operator==(const Corpus&) const = default;
};

struct LoadOptions {
  // Users with fewer stored tokens are dropped; exactly min_words is kept.
  std::uint64_t min_words = 1000;
  // Reject outcome scores outside [1, 5].
  bool strict_range = false;
  Split split = Split::train;
};

struct Violation {
  std::string user_id;  // empty for corpus-level violations
  int layer = 0;        // 0 when the rule is not layer-specific
  std::string rule;
};

Corpus load_corpus(const std::filesystem::path& embeddings,
                   const std::filesystem::path& outcomes,
                   const LoadOptions& opts = {});

/// Folds message records into per-user sums. Summation is float,
/// left to right in message order.
UserEmbeddings fold_messages(const MessageUser& user, std::uint16_t num_layers,
                             std::uint32_t hidden_dim);

std::vector<Violation> validate_corpus(const Corpus& c);
std::string to_string(const Violation& v);

std::filesystem::path manifest_path(const std::filesystem::path& embeddings);
std::filesystem::path outcomes_path_for(const std::filesystem::path& embeddings);

void write_embeddings(const Corpus& c, const std::filesystem::path& path);
void write_message_embeddings(const Manifest& m, std::span<const MessageUser> users,
                              const std::filesystem::path& path);
void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);
void write_outcomes(const OutcomeTable& outcomes, const std::filesystem::path& path);
OutcomeTable read_outcomes(const std::filesystem::path& path, bool strict_range = false);

/// Writes the corpus (user granularity) to `path` plus its manifest and
/// outcomes sidecars, then loads it back without filtering.
Corpus roundtrip(const Corpus& c, const std::filesystem::path& path);

}  // namespace layerforge
