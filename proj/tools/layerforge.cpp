// layerforge: layer selection and evaluation for pooled transformer embeddings.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "layerforge/aggregate.hpp"
#include "layerforge/corpus.hpp"
#include "layerforge/cv.hpp"
#include "layerforge/error.hpp"
#include "layerforge/parallel.hpp"
#include "layerforge/report.hpp"
#include "layerforge/ridge.hpp"
#include "layerforge/select.hpp"
#include "layerforge/synth.hpp"

namespace fs = std::filesystem;
using namespace layerforge;

namespace {

struct RunConfig {
  std::string subcommand;
  std::string embeddings, outcomes;
  std::string train_embeddings, train_outcomes, test_embeddings, test_outcomes;
  std::string layers;
  std::string baseline;
  std::string out;
  int k = 10;
  std::uint64_t seed = 0;
  double alpha_min = 10.0, alpha_max = 1e6, alpha_step = 10.0;
  std::uint64_t min_words = 1000;
  bool strict_range = false;
  bool standardize = false;
  double reliability_x = 1.0, reliability_y = 1.0;
  double epsilon = 0.0;
  int max_layers = 0;  // 0: min(8, L)
  int top_k = 10;
  int threads = 0;

  // Key=value echo. Thread count is left out so outputs do not depend on it.
  std::string echo() const {
    std::string s = "# run configuration\n";
    s += "subcommand=" + subcommand + "\n";
    auto add = [&](const char* key, const std::string& v) {
      if (!v.empty()) s += fmt::format("{}={}\n", key, v);
    };
    add("embeddings", embeddings);
    add("outcomes", outcomes);
    add("train_embeddings", train_embeddings);
    add("train_outcomes", train_outcomes);
    add("test_embeddings", test_embeddings);
    add("test_outcomes", test_outcomes);
    add("layers", layers);
    add("baseline_predictions", baseline);
    s += fmt::format("k={}\nseed={}\n", k, seed);
    s += fmt::format("alpha_min={}\nalpha_max={}\nalpha_step={}\n", format_full(alpha_min), format_full(alpha_max),
                     format_full(alpha_step));
    s += fmt::format("min_words={}\nstrict_range={}\nstandardize={}\n", min_words, strict_range, standardize);
    s += fmt::format("reliability_x={}\nreliability_y={}\n", format_full(reliability_x), format_full(reliability_y));
    s += fmt::format("epsilon={}\nmax_layers={}\ntop_k={}\n", format_full(epsilon), max_layers, top_k);
    return s;
  }

  AlphaGrid grid() const { return AlphaGrid::geometric(alpha_min, alpha_max, alpha_step); }
};

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw DataError("write failed: " + path.string());
}

fs::path prepare_out(const RunConfig& cfg) {
  if (cfg.out.empty()) throw UsageError("--out is required");
  fs::path dir(cfg.out);
  fs::create_directories(dir);
  write_file(dir / "config.txt", cfg.echo());
  return dir;
}

Corpus load(const std::string& emb, const std::string& outcomes, const RunConfig& cfg, Split split) {
  LoadOptions opts;
  opts.min_words = cfg.min_words;
  opts.strict_range = cfg.strict_range;
  opts.split = split;
  return load_corpus(emb, outcomes, opts);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

// Accepts `user_id,y,yhat` (as written by `final`) or `user_id,<prediction>`.
OutcomeTable read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty predictions file", 0);
  const auto header = split_csv(line);
  std::size_t id_col = header.size(), pred_col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "user_id") id_col = i;
    if (header[i] == "yhat" || header[i] == "prediction" || header[i] == "score") pred_col = i;
  }
  if (id_col == header.size() || pred_col == header.size()) {
    throw FormatError(path.string() + ": header needs user_id and yhat/prediction/score columns", 0);
  }
  OutcomeTable t;
  std::uint64_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    const auto row_offset = offset;
    offset += line.size() + 1;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() <= std::max(id_col, pred_col)) throw FormatError(path.string() + ": short row", row_offset);
    try {
      t[cells[id_col]] = std::stod(cells[pred_col]);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": unparsable prediction", row_offset);
    }
  }
  return t;
}

int cmd_validate(const RunConfig& cfg) {
  const Corpus c = load(cfg.embeddings, cfg.outcomes, cfg, Split::train);
  const auto violations = validate_corpus(c);
  for (const auto& v : violations) std::cout << to_string(v) << '\n';
  std::cerr << fmt::format("{} users admitted (L={}, H={}), {} violation(s)\n", c.users.size(),
                           c.manifest.num_layers, c.manifest.hidden_dim, violations.size());
  return violations.empty() ? 0 : static_cast<int>(ExitCode::data);
}

int cmd_sweep(const RunConfig& cfg) {
  const Corpus c = load(cfg.embeddings, cfg.outcomes, cfg, Split::train);
  const auto grid = cfg.grid();
  const fs::path dir = prepare_out(cfg);
  std::vector<std::string> ids;
  for (const auto& u : c.users) ids.push_back(u.user_id);
  const FoldAssignment folds = make_folds(ids, cfg.k, cfg.seed);
  CvOptions opts;
  opts.standardize = cfg.standardize;
  const auto reports = sweep_layers(c, folds, grid, opts);
  write_file(dir / "sweep.csv", sweep_csv(reports));
  write_file(dir / "sweep.txt", sweep_text(reports) + "\n" + cfg.echo());
  std::string cells;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    auto csv = to_csv(reports[i]);
    if (i > 0) csv.erase(0, csv.find('\n') + 1);
    cells += csv;
  }
  write_file(dir / "sweep_folds.csv", cells);
  std::cout << sweep_text(reports);
  return 0;
}

int cmd_select(const RunConfig& cfg) {
  const Corpus c = load(cfg.embeddings, cfg.outcomes, cfg, Split::train);
  SelectionConfig sc;
  sc.max_layers = cfg.max_layers > 0 ? cfg.max_layers : std::min(8, static_cast<int>(c.manifest.num_layers));
  sc.epsilon = cfg.epsilon;
  sc.top_k_report = cfg.top_k;
  sc.k = cfg.k;
  sc.seed = cfg.seed;
  sc.grid = cfg.grid();
  sc.standardize = cfg.standardize;
  const fs::path dir = prepare_out(cfg);
  const SelectionTrace trace = greedy_select(c, sc);
  write_file(dir / "trace.csv", trace_csv(trace));
  write_file(dir / "trace.txt", trace_text(trace));
  write_file(dir / "recommendation.txt", recommendation_text(trace));
  write_file(dir / "summary.txt", recommendation_text(trace) + "\n" + cfg.echo());
  std::cout << trace_text(trace);
  return 0;
}

int cmd_final(const RunConfig& cfg) {
  if (cfg.layers.empty()) throw UsageError("--layers is required");
  const Corpus train = load(cfg.train_embeddings, cfg.train_outcomes, cfg, Split::train);
  const Corpus test = load(cfg.test_embeddings, cfg.test_outcomes, cfg, Split::test);
  FinalOptions opts;
  opts.grid = cfg.grid();
  opts.standardize = cfg.standardize;
  opts.k = cfg.k;
  opts.seed = cfg.seed;
  opts.rel_x = cfg.reliability_x;
  opts.rel_y = cfg.reliability_y;
  if (!cfg.baseline.empty()) opts.baseline = read_predictions(cfg.baseline);
  const LayerSet ls = LayerSet::parse(cfg.layers);
  const fs::path dir = prepare_out(cfg);
  const FinalResult r = evaluate_final(train, test, ls, opts);
  write_file(dir / "final.txt", final_text(r) + "\n" + cfg.echo());
  write_file(dir / "predictions.csv", predictions_csv(r));
  std::cout << final_text(r);
  if (r.r_dis_out_of_range) std::cerr << "warning: r_dis outside [-1, 1]\n";
  return 0;
}

struct SynthArgs {
  std::string out;
  std::vector<std::string> signals;
  std::string messages = "20:40";
  std::string tokens = "50:80";
  std::string distribution = "gaussian_iid";
  std::string granularity = "user";
  std::string split = "train";
  SynthSpec spec;
};

std::pair<int, int> parse_range(const std::string& s, const char* what) {
  auto colon = s.find(':');
  try {
    if (colon == std::string::npos) {
      int v = std::stoi(s);
      return {v, v};
    }
    return {std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))};
  } catch (const std::exception&) {
    throw UsageError(fmt::format("cannot parse {} range '{}'", what, s));
  }
}

int cmd_synth(SynthArgs a) {
  if (a.out.empty()) throw UsageError("--out is required");
  auto& spec = a.spec;
  std::tie(spec.messages_min, spec.messages_max) = parse_range(a.messages, "messages");
  std::tie(spec.tokens_min, spec.tokens_max) = parse_range(a.tokens, "tokens");
  if (a.distribution == "gaussian_iid") {
    spec.distribution = TokenDistribution::gaussian_iid;
  } else if (a.distribution == "layerwise_shift") {
    spec.distribution = TokenDistribution::layerwise_shift;
  } else {
    throw UsageError("unknown distribution " + a.distribution);
  }
  if (a.granularity == "user") {
    spec.granularity = Granularity::user;
  } else if (a.granularity == "message") {
    spec.granularity = Granularity::message;
  } else {
    throw UsageError("unknown granularity " + a.granularity);
  }
  spec.split = a.split == "test" ? Split::test : Split::train;
  if (!a.signals.empty()) {
    spec.signals.clear();
    for (const auto& s : a.signals) {
      auto colon = s.find(':');
      try {
        SignalTerm t;
        t.layer = std::stoi(s.substr(0, colon));
        t.weight = colon == std::string::npos ? 1.0 : std::stod(s.substr(colon + 1));
        spec.signals.push_back(t);
      } catch (const std::exception&) {
        throw UsageError("cannot parse --signal '" + s + "' (expected layer[:weight])");
      }
    }
  }
  const fs::path prefix(a.out);
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  const SynthOutput out = generate(spec);
  write_synth(out, spec, prefix);
  std::cout << fmt::format("wrote {} users (L={}, H={}) to {}.ule; Bayes MSE {}\n", out.corpus.users.size(),
                           spec.num_layers, spec.hidden_dim, prefix.string(), format_full(out.truth.bayes_mse));
  return 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cmd_roundtrip(const RunConfig& cfg) {
  if (cfg.out.empty()) throw UsageError("--out is required");
  const Corpus c = load(cfg.embeddings, cfg.outcomes, cfg, Split::train);
  const fs::path first(cfg.out);
  if (first.has_parent_path()) fs::create_directories(first.parent_path());
  const Corpus back = roundtrip(c, first);
  fs::path second = first;
  second += ".check";
  write_embeddings(back, second);
  const bool same_bytes = slurp(first) == slurp(second);
  fs::remove(second);
  const bool same_values = back.users == c.users && back.outcomes == c.outcomes;
  std::cout << fmt::format("users={}\nbyte_identical={}\nvalue_identical={}\n", back.users.size(), same_bytes,
                           same_values);
  return same_bytes && same_values ? 0 : static_cast<int>(ExitCode::data);
}

void add_common(CLI::App* sub, RunConfig& cfg, bool single_corpus) {
  if (single_corpus) {
    sub->add_option("--embeddings,-e", cfg.embeddings, "Embedding store (.ule)")->required();
    sub->add_option("--outcomes,-y", cfg.outcomes, "Outcomes CSV (user_id,score)")->required();
  }
  sub->add_option("--min-words", cfg.min_words, "Drop users with fewer stored tokens")->capture_default_str();
  sub->add_flag("--strict-range", cfg.strict_range, "Reject outcome scores outside [1, 5]");
}

void add_model_opts(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--k", cfg.k, "Number of CV folds")->capture_default_str();
  sub->add_option("--seed", cfg.seed, "Seed for fold assignment")->capture_default_str();
  sub->add_option("--alpha-min", cfg.alpha_min, "Smallest ridge penalty")->capture_default_str();
  sub->add_option("--alpha-max", cfg.alpha_max, "Largest ridge penalty")->capture_default_str();
  sub->add_option("--alpha-step", cfg.alpha_step, "Multiplicative grid step")->capture_default_str();
  sub->add_flag("--standardize", cfg.standardize, "Scale features to unit variance before ridge");
  sub->add_option("--out,-o", cfg.out, "Output directory")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layerforge: pooled-embedding layer selection with cross-validated ridge"};
  app.require_subcommand(1);
  RunConfig cfg;
  SynthArgs synth;
  app.add_option("--threads", cfg.threads, "Worker threads (default: LAYERFORGE_THREADS or all cores)");

  auto* validate = app.add_subcommand("validate", "Check an embedding store against its outcomes");
  add_common(validate, cfg, true);

  auto* sweep = app.add_subcommand("sweep-layers", "Cross-validate every single layer");
  add_common(sweep, cfg, true);
  add_model_opts(sweep, cfg);

  auto* select = app.add_subcommand("select", "Greedy forward layer selection");
  add_common(select, cfg, true);
  add_model_opts(select, cfg);
  select->add_option("--max-layers", cfg.max_layers, "Largest layer combination (default min(8, L))");
  select->add_option("--epsilon", cfg.epsilon, "Required MSE improvement per stage")->capture_default_str();
  select->add_option("--top-k", cfg.top_k, "Candidates shown per stage")->capture_default_str();

  auto* final_cmd = app.add_subcommand("final", "Fit on train, evaluate on held-out test");
  add_common(final_cmd, cfg, false);
  add_model_opts(final_cmd, cfg);
  final_cmd->add_option("--train-embeddings", cfg.train_embeddings)->required();
  final_cmd->add_option("--train-outcomes", cfg.train_outcomes)->required();
  final_cmd->add_option("--test-embeddings", cfg.test_embeddings)->required();
  final_cmd->add_option("--test-outcomes", cfg.test_outcomes)->required();
  final_cmd->add_option("--layers", cfg.layers, "Layer set, e.g. 19;16;24")->required();
  final_cmd->add_option("--baseline-predictions", cfg.baseline, "CSV with user_id and yhat columns");
  final_cmd->add_option("--reliability-x", cfg.reliability_x, "Reliability of predictions")->capture_default_str();
  final_cmd->add_option("--reliability-y", cfg.reliability_y, "Reliability of the outcome measure")
      ->capture_default_str();

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus with planted layer signals");
  synth_cmd->add_option("--out,-o", synth.out, "Output prefix (writes <prefix>.ule and sidecars)")->required();
  synth_cmd->add_option("--users", synth.spec.n_users)->capture_default_str();
  synth_cmd->add_option("--test-users", synth.spec.n_test_users,
                        "Held-out users sharing the ground truth, written to <prefix>.test.ule")
      ->capture_default_str();
  synth_cmd->add_option("--layers", synth.spec.num_layers)->capture_default_str();
  synth_cmd->add_option("--hidden", synth.spec.hidden_dim)->capture_default_str();
  synth_cmd->add_option("--signal", synth.signals, "layer[:weight], repeatable (default 7:1)");
  synth_cmd->add_option("--noise-sigma", synth.spec.noise_sigma)->capture_default_str();
  synth_cmd->add_option("--token-sigma", synth.spec.token_sigma)->capture_default_str();
  synth_cmd->add_option("--layer-correlation", synth.spec.layer_correlation)->capture_default_str();
  synth_cmd->add_option("--messages", synth.messages, "Messages per user, min:max")->capture_default_str();
  synth_cmd->add_option("--tokens", synth.tokens, "Tokens per message, min:max")->capture_default_str();
  synth_cmd->add_option("--distribution", synth.distribution, "gaussian_iid or layerwise_shift")
      ->capture_default_str();
  synth_cmd->add_option("--granularity", synth.granularity, "user or message")->capture_default_str();
  synth_cmd->add_option("--split", synth.split, "train or test")->capture_default_str();
  synth_cmd->add_option("--id-prefix", synth.spec.id_prefix)->capture_default_str();
  synth_cmd->add_flag("--nonlinear", synth.spec.nonlinear, "Add a quadratic distortion to the outcome");
  synth_cmd->add_option("--seed", synth.spec.seed)->capture_default_str();

  auto* rt = app.add_subcommand("roundtrip", "Rewrite a store and check it is byte-stable");
  add_common(rt, cfg, true);
  rt->add_option("--out,-o", cfg.out, "Output embeddings path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  int threads = cfg.threads > 0 ? cfg.threads : threads_from_env();
  set_num_threads(threads);

  try {
    if (*validate) {
      cfg.subcommand = "validate";
      return cmd_validate(cfg);
    }
    if (*sweep) {
      cfg.subcommand = "sweep-layers";
      return cmd_sweep(cfg);
    }
    if (*select) {
      cfg.subcommand = "select";
      return cmd_select(cfg);
    }
    if (*final_cmd) {
      cfg.subcommand = "final";
      return cmd_final(cfg);
    }
    if (*synth_cmd) return cmd_synth(synth);
    if (*rt) {
      cfg.subcommand = "roundtrip";
      return cmd_roundtrip(cfg);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::data);
  }
  return static_cast<int>(ExitCode::usage);
}
