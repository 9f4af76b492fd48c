#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "test_util.hpp"

#ifndef LAYERFORGE_CLI_PATH
#error "LAYERFORGE_CLI_PATH must point at the layerforge binary"
#endif

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string output;
};

Run run(const std::string& args, const fs::path& dir) {
  const auto log = dir / "cli.log";
  const std::string cmd = std::string("\"") + LAYERFORGE_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, testutil::slurp(log)};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string value_of(const std::string& kv, const std::string& key) {
  for (const auto& l : lines(kv)) {
    if (l.rfind(key + "=", 0) == 0) return l.substr(key.size() + 1);
  }
  return {};
}

}  // namespace

TEST_CASE("cli: synth, validate and error exit codes") {
  const auto dir = testutil::scratch("cli_validate");
  const std::string emb = (dir / "s.ule").string();
  const std::string out = (dir / "s.outcomes.csv").string();
  REQUIRE(run("synth --out " + (dir / "s").string() + " --users 60 --layers 4 --hidden 4 --signal 2", dir).code == 0);
  CHECK(run("validate -e " + emb + " -y " + out, dir).code == 0);

  auto bytes = testutil::slurp(emb);
  bytes[0] = 'Z';
  testutil::spit(dir / "bad.ule", bytes);
  fs::copy_file(dir / "s.ule.manifest", dir / "bad.ule.manifest");
  const auto bad = run("validate -e " + (dir / "bad.ule").string() + " -y " + out, dir);
  CHECK(bad.code == 2);
  CHECK(bad.output.find("offset 0") != std::string::npos);

  auto rows = lines(testutil::slurp(out));
  const std::string dropped = rows[5].substr(0, rows[5].find(','));
  rows.erase(rows.begin() + 5);
  std::string csv;
  for (const auto& r : rows) csv += r + "\n";
  testutil::spit(dir / "missing.csv", csv);
  const auto missing = run("validate -e " + emb + " -y " + (dir / "missing.csv").string(), dir);
  CHECK(missing.code == 1);
  CHECK(missing.output.find(dropped) != std::string::npos);

  CHECK(run("sweep-layers -e " + emb, dir).code == 3);
  CHECK(run("no-such-command", dir).code == 3);
  CHECK(run("final --train-embeddings " + emb + " --train-outcomes " + out + " --test-embeddings " + emb +
                " --test-outcomes " + out + " --layers abc -o " + (dir / "f").string(),
            dir)
            .code == 3);
}

TEST_CASE("cli: sweep-layers and select") {
  const auto dir = testutil::scratch("cli_sweep");
  REQUIRE(run("synth --out " + (dir / "s").string() + " --users 200 --layers 12 --hidden 32 --signal 7 --seed 3", dir)
              .code == 0);
  const std::string data = " -e " + (dir / "s.ule").string() + " -y " + (dir / "s.outcomes.csv").string();

  REQUIRE(run("sweep-layers" + data + " -o " + (dir / "a").string(), dir).code == 0);
  REQUIRE(run("--threads 1 sweep-layers" + data + " -o " + (dir / "b").string(), dir).code == 0);
  const auto csv = testutil::slurp(dir / "a" / "sweep.csv");
  CHECK(csv == testutil::slurp(dir / "b" / "sweep.csv"));
  const auto rows = lines(csv);
  REQUIRE(rows.size() == 13);
  CHECK(rows[0] == "layer,mean_mse,std_err");
  std::size_t best = 1;
  double best_mse = 1e300;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto c1 = rows[i].find(',');
    const double m = std::stod(rows[i].substr(c1 + 1));
    if (m < best_mse) {
      best_mse = m;
      best = i;
    }
  }
  CHECK(rows[best].rfind("7,", 0) == 0);
  CHECK(fs::exists(dir / "a" / "config.txt"));
  CHECK(fs::exists(dir / "a" / "sweep_folds.csv"));

  REQUIRE(run("select" + data + " -o " + (dir / "sel").string(), dir).code == 0);
  for (const char* f : {"trace.csv", "trace.txt", "recommendation.txt", "summary.txt", "config.txt"}) {
    CHECK(fs::exists(dir / "sel" / f));
  }
  CHECK(value_of(testutil::slurp(dir / "sel" / "recommendation.txt"), "layers") == "7");
}

TEST_CASE("cli: final and roundtrip") {
  const auto dir = testutil::scratch("cli_final");
  REQUIRE(run("synth --out " + (dir / "s").string() + " --users 150 --layers 6 --hidden 8 --signal 3 --noise-sigma 0",
              dir)
              .code == 0);
  const std::string emb = (dir / "s.ule").string();
  const std::string out = (dir / "s.outcomes.csv").string();
  const std::string both = " --train-embeddings " + emb + " --train-outcomes " + out + " --test-embeddings " + emb +
                           " --test-outcomes " + out + " --layers 3";

  REQUIRE(run("final" + both + " --alpha-min 1e-8 --alpha-max 1e-4 -o " + (dir / "f").string(), dir).code == 0);
  const auto txt = testutil::slurp(dir / "f" / "final.txt");
  CHECK(std::stod(value_of(txt, "mse")) < 1e-6);
  CHECK(std::stod(value_of(txt, "pearson_r")) > 0.999);

  const auto base = (dir / "f" / "predictions.csv").string();
  REQUIRE(run("final" + both + " --alpha-min 1e-8 --alpha-max 1e-4 --baseline-predictions " + base + " -o " +
                  (dir / "g").string(),
              dir)
              .code == 0);
  const auto g = testutil::slurp(dir / "g" / "final.txt");
  CHECK(value_of(g, "t_vs_baseline") == "0");
  CHECK(value_of(g, "p_vs_baseline") == "1");

  const auto rt = run("roundtrip -e " + emb + " -y " + out + " -o " + (dir / "copy.ule").string(), dir);
  CHECK(rt.code == 0);
  CHECK(testutil::slurp(dir / "copy.ule") == testutil::slurp(emb));
}
