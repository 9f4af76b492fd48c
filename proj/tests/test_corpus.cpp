#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>

#include "layerforge/corpus.hpp"
#include "layerforge/error.hpp"
#include "layerforge/synth.hpp"
#include "test_util.hpp"

using namespace layerforge;

namespace {

Corpus with_token_counts(std::initializer_list<std::uint64_t> counts) {
  Corpus c = testutil::small_corpus(static_cast<int>(counts.size()), 2, 3);
  std::size_t i = 0;
  for (auto n : counts) c.users[i++].total_token_count = n;
  return c;
}

std::vector<std::string> ids(const Corpus& c) {
  std::vector<std::string> out;
  for (const auto& u : c.users) out.push_back(u.user_id);
  return out;
}

}  // namespace

TEST_CASE("word-count filter keeps exactly min_words and drops one fewer") {
  const auto dir = testutil::scratch("filter");
  Corpus c = with_token_counts({999, 1000, 1001});
  write_embeddings(c, dir / "c.ule");
  write_outcomes(c.outcomes, dir / "c.csv");
  LoadOptions opts;
  opts.min_words = 1000;
  const Corpus loaded = load_corpus(dir / "c.ule", dir / "c.csv", opts);
  CHECK(ids(loaded) == std::vector<std::string>{"user1", "user2"});
}

TEST_CASE("raising min_words never admits a user") {
  const auto dir = testutil::scratch("monotone");
  Corpus c = with_token_counts({5, 10, 20, 40, 80, 160, 320});
  write_embeddings(c, dir / "c.ule");
  write_outcomes(c.outcomes, dir / "c.csv");
  std::vector<std::string> prev;
  for (std::uint64_t t : {0, 5, 6, 39, 40, 200, 1000}) {
    LoadOptions opts;
    opts.min_words = t;
    auto now = ids(load_corpus(dir / "c.ule", dir / "c.csv", opts));
    if (!prev.empty()) {
      for (const auto& id : now) CHECK(std::find(prev.begin(), prev.end(), id) != prev.end());
    }
    prev = now;
  }
}

TEST_CASE("message folding adds token counts and sums") {
  MessageUser mu;
  mu.user_id = "a";
  mu.messages.push_back({"m1", 1, {1.0f, 2.0f, 3.0f, 4.0f}});
  mu.messages.push_back({"m2", 3, {0.5f, -1.0f, 10.0f, 0.25f}});
  const auto u = fold_messages(mu, 2, 2);
  CHECK(u.total_token_count == 4);
  CHECK(u.layer_sums == std::vector<float>{1.5f, 1.0f, 13.0f, 4.25f});
}

TEST_CASE("folding a message-granularity file matches left-to-right float summation") {
  const auto dir = testutil::scratch("fold");
  SynthSpec spec;
  spec.n_users = 25;
  spec.num_layers = 4;
  spec.hidden_dim = 5;
  spec.messages_min = 1;
  spec.messages_max = 9;
  spec.tokens_min = 1;
  spec.tokens_max = 30;
  spec.signals = {{2, 1.0, {}}};
  spec.granularity = Granularity::message;
  spec.seed = 11;
  const SynthOutput out = generate(spec);
  write_synth(out, spec, dir / "m");
  LoadOptions opts;
  opts.min_words = 0;
  const Corpus c = load_corpus(dir / "m.ule", dir / "m.outcomes.csv", opts);
  REQUIRE(c.users.size() == out.messages.size());
  for (std::size_t i = 0; i < c.users.size(); ++i) {
    const auto& msgs = out.messages[i].messages;
    std::uint64_t tokens = 0;
    for (const auto& m : msgs) tokens += m.token_count;
    CHECK(c.users[i].total_token_count == tokens);
    for (std::size_t j = 0; j < c.users[i].layer_sums.size(); ++j) {
      float acc = 0.0f;
      for (const auto& m : msgs) acc = acc + m.layer_sums[j];
      CHECK(std::bit_cast<std::uint32_t>(acc) == std::bit_cast<std::uint32_t>(c.users[i].layer_sums[j]));
    }
  }
  CHECK(c.manifest.granularity == Granularity::message);
}

TEST_CASE("validate_corpus") {
  Corpus c = testutil::small_corpus(4, 24, 3);

  SUBCASE("well-formed corpus has no violations") { CHECK(validate_corpus(c).empty()); }

  SUBCASE("missing layer vector is cited with the user") {
    c.users[2].layer_sums.resize(23 * 3);
    const auto v = validate_corpus(c);
    REQUIRE(v.size() == 1);
    CHECK(v[0].user_id == "user2");
    CHECK(v[0].rule.find("23 layer vectors") != std::string::npos);
  }

  SUBCASE("NaN entry is cited with user and layer") {
    c.users[1].layer_sums[4 * 3 + 1] = std::numeric_limits<float>::quiet_NaN();
    const auto v = validate_corpus(c);
    REQUIRE(v.size() == 1);
    CHECK(v[0].user_id == "user1");
    CHECK(v[0].layer == 5);
  }

  SUBCASE("missing outcome and zero tokens") {
    c.outcomes.erase("user0");
    c.users[3].total_token_count = 0;
    CHECK(validate_corpus(c).size() == 2);
  }
}

TEST_CASE("roundtrip is lossless and byte-stable") {
  const auto dir = testutil::scratch("roundtrip");

  SUBCASE("empty corpus writes a header-only file") {
    Corpus c;
    c.manifest.num_layers = 24;
    c.manifest.hidden_dim = 1024;
    const Corpus back = roundtrip(c, dir / "empty.ule");
    CHECK(std::filesystem::file_size(dir / "empty.ule") == 12);
    CHECK(back == c);
  }

  SUBCASE("100-user synthetic corpus re-serializes to identical bytes") {
    SynthSpec spec;
    spec.n_users = 100;
    spec.seed = 3;
    const Corpus c = generate(spec).corpus;
    const Corpus back = roundtrip(c, dir / "a.ule");
    CHECK(back == c);
    write_embeddings(back, dir / "b.ule");
    const std::hash<std::string> h;
    CHECK(h(testutil::slurp(dir / "a.ule")) == h(testutil::slurp(dir / "b.ule")));
    CHECK(testutil::slurp(dir / "a.ule") == testutil::slurp(dir / "b.ule"));
  }

  SUBCASE("manifest sidecar carries model name and notes") {
    Corpus c = testutil::small_corpus(3, 2, 2);
    c.manifest.model_name = "roberta-large";
    c.manifest.notes = "first line\nsecond line";
    const Corpus back = roundtrip(c, dir / "named.ule");
    CHECK(back.manifest.model_name == "roberta-large");
    CHECK(back.manifest.notes == c.manifest.notes);
  }
}

TEST_CASE("loader errors") {
  const auto dir = testutil::scratch("errors");
  Corpus c = testutil::small_corpus(3, 2, 2);
  write_embeddings(c, dir / "c.ule");
  write_outcomes(c.outcomes, dir / "c.csv");
  LoadOptions opts;
  opts.min_words = 0;

  SUBCASE("bad magic reports offset 0") {
    auto bytes = testutil::slurp(dir / "c.ule");
    bytes[0] = 'X';
    testutil::spit(dir / "bad.ule", bytes);
    try {
      load_corpus(dir / "bad.ule", dir / "c.csv", opts);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
      CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }
  }

  SUBCASE("truncated header names the byte offset") {
    testutil::spit(dir / "short.ule", testutil::slurp(dir / "c.ule").substr(0, 7));
    try {
      load_corpus(dir / "short.ule", dir / "c.csv", opts);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 6);
    }
  }

  SUBCASE("truncated record") {
    const auto bytes = testutil::slurp(dir / "c.ule");
    testutil::spit(dir / "cut.ule", bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_corpus(dir / "cut.ule", dir / "c.csv", opts), FormatError);
  }

  SUBCASE("user without an outcome row is rejected by id") {
    OutcomeTable partial = c.outcomes;
    partial.erase("user1");
    write_outcomes(partial, dir / "partial.csv");
    try {
      load_corpus(dir / "c.ule", dir / "partial.csv", opts);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("user1") != std::string::npos);
    }
  }

  SUBCASE("duplicate user id") {
    Corpus dup = c;
    dup.users.push_back(dup.users.front());
    write_embeddings(dup, dir / "dup.ule");
    CHECK_THROWS_AS(load_corpus(dir / "dup.ule", dir / "c.csv", opts), DataError);
  }

  SUBCASE("non-finite entry") {
    Corpus bad = c;
    bad.users[0].layer_sums[1] = std::numeric_limits<float>::infinity();
    write_embeddings(bad, dir / "inf.ule");
    CHECK_THROWS_AS(load_corpus(dir / "inf.ule", dir / "c.csv", opts), DataError);
  }

  SUBCASE("strict range") {
    OutcomeTable wide = c.outcomes;
    wide["user0"] = 7.5;
    write_outcomes(wide, dir / "wide.csv");
    CHECK_NOTHROW(load_corpus(dir / "c.ule", dir / "wide.csv", opts));
    LoadOptions strict = opts;
    strict.strict_range = true;
    CHECK_THROWS_AS(load_corpus(dir / "c.ule", dir / "wide.csv", strict), DataError);
  }

  SUBCASE("outcomes header is checked") {
    testutil::spit(dir / "nohdr.csv", "user0,1.0\n");
    CHECK_THROWS_AS(load_corpus(dir / "c.ule", dir / "nohdr.csv", opts), FormatError);
  }
}
