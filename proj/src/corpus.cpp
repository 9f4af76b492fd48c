#include "layerforge/corpus.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>

#include "layerforge/error.hpp"

namespace layerforge {

namespace {

constexpr std::array<char, 4> kMagic = {'U', 'L', 'E', '1'};

// Little-endian reader over a stream that tracks the byte offset of every
// field so format errors can point at it.
class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open " + path.string());
  }

  std::uint64_t offset() const { return offset_; }

  bool at_eof() { return in_.peek() == std::char_traits<char>::eof(); }

  void read_bytes(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(fmt::format("{}: truncated {}", path_.string(), what), offset_);
    }
    offset_ += n;
  }

  template <typename T>
  T read_uint(const char* what) {
    std::array<unsigned char, sizeof(T)> b{};
    read_bytes(b.data(), b.size(), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
    return v;
  }

  std::string read_string(std::size_t n, const char* what) {
    std::string s(n, '\0');
    if (n > 0) read_bytes(s.data(), n, what);
    return s;
  }

  void read_floats(std::vector<float>& out, std::size_t count, const char* what) {
    buf_.resize(count * 4);
    read_bytes(buf_.data(), buf_.size(), what);
    out.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const unsigned char* p = buf_.data() + 4 * i;
      std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                           (static_cast<std::uint32_t>(p[2]) << 16) |
                           (static_cast<std::uint32_t>(p[3]) << 24);
      out[i] = std::bit_cast<float>(bits);
    }
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::uint64_t offset_ = 0;
  std::vector<unsigned char> buf_;
};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot open " + path.string() + " for writing");
  }

  template <typename T>
  void put_uint(T v) {
    std::array<char, sizeof(T)> b{};
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(b.data(), b.size());
  }

  void put_string16(const std::string& s) {
    if (s.size() > 0xffff) throw DataError("identifier longer than 65535 bytes: " + s.substr(0, 32));
    put_uint<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void put_floats(std::span<const float> v) {
    buf_.resize(v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
      auto bits = std::bit_cast<std::uint32_t>(v[i]);
      for (int j = 0; j < 4; ++j) buf_[4 * i + j] = static_cast<char>((bits >> (8 * j)) & 0xff);
    }
    out_.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  }

  void finish() {
    out_.flush();
    if (!out_) throw DataError("write failed: " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::vector<char> buf_;
};

void write_header(Writer& w, const Manifest& m, Granularity g) {
  w.put_uint<std::uint8_t>(static_cast<std::uint8_t>(kMagic[0]));
  w.put_uint<std::uint8_t>(static_cast<std::uint8_t>(kMagic[1]));
  w.put_uint<std::uint8_t>(static_cast<std::uint8_t>(kMagic[2]));
  w.put_uint<std::uint8_t>(static_cast<std::uint8_t>(kMagic[3]));
  w.put_uint<std::uint8_t>(static_cast<std::uint8_t>(g));
  w.put_uint<std::uint8_t>(m.includes_embedding_layer ? 1 : 0);
  w.put_uint<std::uint16_t>(m.num_layers);
  w.put_uint<std::uint32_t>(m.hidden_dim);
}

void check_finite(const std::string& user_id, std::span<const float> sums, std::uint32_t hidden_dim) {
  for (std::size_t i = 0; i < sums.size(); ++i) {
    if (!std::isfinite(sums[i])) {
      throw DataError(fmt::format("user {}: non-finite value at layer {}, dim {}", user_id,
                                  i / hidden_dim + 1, i % hidden_dim));
    }
  }
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  return s.substr(b);
}

}  // namespace

std::filesystem::path manifest_path(const std::filesystem::path& embeddings) {
  auto p = embeddings;
  p += ".manifest";
  return p;
}

std::filesystem::path outcomes_path_for(const std::filesystem::path& embeddings) {
  auto p = embeddings;
  p += ".outcomes.csv";
  return p;
}

UserEmbeddings fold_messages(const MessageUser& user, std::uint16_t num_layers,
                             std::uint32_t hidden_dim) {
  const std::size_t width = static_cast<std::size_t>(num_layers) * hidden_dim;
  UserEmbeddings u;
  u.user_id = user.user_id;
  u.layer_sums.assign(width, 0.0f);
  for (const auto& msg : user.messages) {
    if (msg.layer_sums.size() != width) {
      throw DataError(fmt::format("user {} message {}: expected {} values, got {}", user.user_id,
                                  msg.message_id, width, msg.layer_sums.size()));
    }
    u.total_token_count += msg.token_count;
    for (std::size_t i = 0; i < width; ++i) u.layer_sums[i] += msg.layer_sums[i];
  }
  return u;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  std::uint64_t offset = 0;
  std::vector<std::string> notes;
  while (std::getline(in, line)) {
    const std::uint64_t line_start = offset;
    offset += line.size() + 1;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(path.string() + ": manifest line without '='", line_start);
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "format_version") {
      int v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size()) {
        throw FormatError(path.string() + ": bad format_version", line_start);
      }
      m.format_version = v;
    } else if (key == "model_name") {
      m.model_name = value;
    } else if (key == "dtype") {
      m.dtype = value;
    } else if (key == "notes") {
      notes.push_back(value);
    }
    // Other keys (num_layers, hidden_dim, ...) are informational; the binary
    // header is authoritative for them.
  }
  for (std::size_t i = 0; i < notes.size(); ++i) {
    if (i) m.notes += '\n';
    m.notes += notes[i];
  }
  if (m.format_version != 1) {
    throw FormatError(fmt::format("{}: unsupported format_version {}", path.string(), m.format_version), 0);
  }
  if (m.dtype != "f32le") throw FormatError(path.string() + ": unsupported dtype " + m.dtype, 0);
  return m;
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "format_version=" << m.format_version << '\n';
  out << "model_name=" << m.model_name << '\n';
  out << "num_layers=" << m.num_layers << '\n';
  out << "hidden_dim=" << m.hidden_dim << '\n';
  out << "granularity=" << (m.granularity == Granularity::user ? "user" : "message") << '\n';
  out << "includes_embedding_layer=" << (m.includes_embedding_layer ? "true" : "false") << '\n';
  out << "dtype=" << m.dtype << '\n';
  if (!m.notes.empty()) {
    std::istringstream ns(m.notes);
    std::string line;
    while (std::getline(ns, line)) out << "notes=" << line << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

OutcomeTable read_outcomes(const std::filesystem::path& path, bool strict_range) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open outcomes " + path.string());
  OutcomeTable table;
  std::string line;
  std::uint64_t offset = 0;
  bool header = true;
  while (std::getline(in, line)) {
    const std::uint64_t line_start = offset;
    offset += line.size() + 1;
    line = trim(line);
    if (header) {
      if (line != "user_id,score") {
        throw FormatError(path.string() + ": expected header 'user_id,score'", line_start);
      }
      header = false;
      continue;
    }
    if (line.empty()) continue;
    auto comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0) {
      throw FormatError(path.string() + ": malformed outcome row", line_start);
    }
    std::string id = line.substr(0, comma);
    std::string value = trim(line.substr(comma + 1));
    double score = 0.0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), score);
    if (ec != std::errc() || p != value.data() + value.size()) {
      throw FormatError(path.string() + ": unparsable score for user " + id, line_start);
    }
    if (!std::isfinite(score)) throw DataError("outcome for user " + id + " is not finite");
    if (strict_range && (score < 1.0 || score > 5.0)) {
      throw DataError(fmt::format("outcome for user {} outside [1, 5]: {}", id, score));
    }
    if (!table.emplace(id, score).second) throw DataError("duplicate outcome row for user " + id);
  }
  if (header) throw FormatError(path.string() + ": empty outcomes file", 0);
  return table;
}

void write_outcomes(const OutcomeTable& outcomes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "user_id,score\n";
  for (const auto& [id, score] : outcomes) out << id << ',' << fmt::format("{}", score) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

Corpus load_corpus(const std::filesystem::path& embeddings, const std::filesystem::path& outcomes,
                   const LoadOptions& opts) {
  Corpus c;
  c.split = opts.split;
  if (std::filesystem::exists(manifest_path(embeddings))) {
    c.manifest = read_manifest(manifest_path(embeddings));
  }

  Reader r(embeddings);
  std::array<char, 4> magic{};
  r.read_bytes(magic.data(), magic.size(), "magic");
  if (magic != kMagic) throw FormatError(embeddings.string() + ": bad magic bytes", 0);
  const auto gran_offset = r.offset();
  const auto gran = r.read_uint<std::uint8_t>("granularity");
  if (gran > 1) throw FormatError(embeddings.string() + ": unknown granularity", gran_offset);
  const auto emb_offset = r.offset();
  const auto emb = r.read_uint<std::uint8_t>("includes_embedding_layer");
  if (emb > 1) throw FormatError(embeddings.string() + ": bad includes_embedding_layer flag", emb_offset);
  const auto l_offset = r.offset();
  const auto L = r.read_uint<std::uint16_t>("layer count");
  if (L == 0) throw FormatError(embeddings.string() + ": layer count must be >= 1", l_offset);
  const auto h_offset = r.offset();
  const auto H = r.read_uint<std::uint32_t>("hidden size");
  if (H == 0) throw FormatError(embeddings.string() + ": hidden size must be >= 1", h_offset);

  c.manifest.granularity = static_cast<Granularity>(gran);
  c.manifest.includes_embedding_layer = emb == 1;
  c.manifest.num_layers = L;
  c.manifest.hidden_dim = H;
  const std::size_t width = static_cast<std::size_t>(L) * H;

  c.outcomes = read_outcomes(outcomes, opts.strict_range);

  std::unordered_set<std::string> seen;
  while (!r.at_eof()) {
    UserEmbeddings u;
    const auto id_len = r.read_uint<std::uint16_t>("user id length");
    u.user_id = r.read_string(id_len, "user id");
    if (c.manifest.granularity == Granularity::user) {
      u.total_token_count = r.read_uint<std::uint64_t>("token count");
      r.read_floats(u.layer_sums, width, "layer values");
    } else {
      MessageUser mu;
      mu.user_id = u.user_id;
      const auto count = r.read_uint<std::uint32_t>("message count");
      mu.messages.resize(count);
      for (auto& msg : mu.messages) {
        const auto mid_len = r.read_uint<std::uint16_t>("message id length");
        msg.message_id = r.read_string(mid_len, "message id");
        msg.token_count = r.read_uint<std::uint64_t>("message token count");
        if (msg.token_count == 0) {
          throw DataError("user " + u.user_id + " message " + msg.message_id + ": zero token count");
        }
        r.read_floats(msg.layer_sums, width, "message layer values");
        check_finite(u.user_id, msg.layer_sums, H);
      }
      u = fold_messages(mu, L, H);
    }
    if (!seen.insert(u.user_id).second) throw DataError("duplicate user_id " + u.user_id);
    check_finite(u.user_id, u.layer_sums, H);
    if (u.total_token_count < opts.min_words || u.total_token_count == 0) continue;
    if (!c.outcomes.contains(u.user_id)) {
      throw DataError("user " + u.user_id + " has embeddings but no outcome row");
    }
    c.users.push_back(std::move(u));
  }
  return c;
}

std::vector<Violation> validate_corpus(const Corpus& c) {
  std::vector<Violation> out;
  const auto& m = c.manifest;
  if (m.format_version != 1) out.push_back({"", 0, fmt::format("format_version {} != 1", m.format_version)});
  if (m.num_layers < 1) out.push_back({"", 0, "num_layers must be >= 1"});
  if (m.hidden_dim < 1) out.push_back({"", 0, "hidden_dim must be >= 1"});
  if (m.dtype != "f32le") out.push_back({"", 0, "dtype must be f32le"});
  if (m.num_layers < 1 || m.hidden_dim < 1) return out;

  const std::size_t H = m.hidden_dim;
  std::unordered_set<std::string> seen;
  for (const auto& u : c.users) {
    if (!seen.insert(u.user_id).second) out.push_back({u.user_id, 0, "duplicate user_id"});
    if (u.total_token_count == 0) out.push_back({u.user_id, 0, "total_token_count must be > 0"});
    if (u.layer_sums.size() % H != 0) {
      out.push_back({u.user_id, 0,
                     fmt::format("{} values is not a whole number of {}-wide layers", u.layer_sums.size(), H)});
    } else if (u.layer_sums.size() / H != m.num_layers) {
      out.push_back({u.user_id, 0,
                     fmt::format("{} layer vectors, expected {}", u.layer_sums.size() / H, m.num_layers)});
    }
    for (std::size_t i = 0; i < u.layer_sums.size(); i += H) {
      const std::size_t end = std::min(u.layer_sums.size(), i + H);
      for (std::size_t j = i; j < end; ++j) {
        if (!std::isfinite(u.layer_sums[j])) {
          out.push_back({u.user_id, static_cast<int>(i / H) + 1, "non-finite entry"});
          break;
        }
      }
    }
    auto it = c.outcomes.find(u.user_id);
    if (it == c.outcomes.end()) {
      out.push_back({u.user_id, 0, "missing outcome"});
    } else if (!std::isfinite(it->second)) {
      out.push_back({u.user_id, 0, "non-finite outcome"});
    }
  }
  return out;
}

std::string to_string(const Violation& v) {
  std::string s = v.user_id.empty() ? std::string("<corpus>") : "user " + v.user_id;
  if (v.layer > 0) s += fmt::format(" layer {}", v.layer);
  return s + ": " + v.rule;
}

void write_embeddings(const Corpus& c, const std::filesystem::path& path) {
  const std::size_t width = static_cast<std::size_t>(c.manifest.num_layers) * c.manifest.hidden_dim;
  Writer w(path);
  write_header(w, c.manifest, Granularity::user);
  for (const auto& u : c.users) {
    if (u.layer_sums.size() != width) {
      throw DataError(fmt::format("user {}: expected {} values, got {}", u.user_id, width, u.layer_sums.size()));
    }
    w.put_string16(u.user_id);
    w.put_uint<std::uint64_t>(u.total_token_count);
    w.put_floats(u.layer_sums);
  }
  w.finish();
}

void write_message_embeddings(const Manifest& m, std::span<const MessageUser> users,
                              const std::filesystem::path& path) {
  const std::size_t width = static_cast<std::size_t>(m.num_layers) * m.hidden_dim;
  Writer w(path);
  write_header(w, m, Granularity::message);
  for (const auto& u : users) {
    w.put_string16(u.user_id);
    w.put_uint<std::uint32_t>(static_cast<std::uint32_t>(u.messages.size()));
    for (const auto& msg : u.messages) {
      if (msg.layer_sums.size() != width) {
        throw DataError(fmt::format("user {} message {}: expected {} values", u.user_id, msg.message_id, width));
      }
      w.put_string16(msg.message_id);
      w.put_uint<std::uint64_t>(msg.token_count);
      w.put_floats(msg.layer_sums);
    }
  }
  w.finish();
}

Corpus roundtrip(const Corpus& c, const std::filesystem::path& path) {
  Manifest m = c.manifest;
  m.granularity = Granularity::user;
  write_embeddings(c, path);
  write_manifest(m, manifest_path(path));
  write_outcomes(c.outcomes, outcomes_path_for(path));
  LoadOptions opts;
  opts.min_words = 0;
  opts.split = c.split;
  return load_corpus(path, outcomes_path_for(path), opts);
}

}  // namespace layerforge
