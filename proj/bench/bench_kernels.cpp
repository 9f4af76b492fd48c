// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include "layerforge/aggregate.hpp"
#include "layerforge/cv.hpp"
#include "layerforge/ridge.hpp"
#include "layerforge/synth.hpp"

using namespace layerforge;

namespace {

const Corpus& corpus() {
  static const Corpus c = [] {
    SynthSpec spec;
    spec.n_users = 2000;
    spec.num_layers = 12;
    spec.hidden_dim = 64;
    return generate(spec).corpus;
  }();
  return c;
}

struct GridInputs {
  DesignMatrix d;
  std::vector<int> folds;
};

const GridInputs& grid_inputs() {
  static const GridInputs g = [] {
    GridInputs out;
    out.d = build_design(corpus(), LayerSet({7, 3}));
    out.folds = make_folds(out.d.user_ids, 10, 0).row_folds(out.d.user_ids);
    return out;
  }();
  return g;
}

void BM_EvaluateGrid(benchmark::State& state) {
  const auto& g = grid_inputs();
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate_grid(g.d.X, g.d.y, g.folds, 10, AlphaGrid::standard(), false));
  }
}

void BM_EvaluateGridSerial(benchmark::State& state) {
  const auto& g = grid_inputs();
  for (auto _ : state) {
    benchmark::DoNotOptimize(evaluate_grid_serial(g.d.X, g.d.y, g.folds, 10, AlphaGrid::standard(), false));
  }
}

void BM_BuildDesign(benchmark::State& state) {
  const LayerSet ls({1, 4, 7, 10});
  for (auto _ : state) benchmark::DoNotOptimize(build_design(corpus(), ls));
}

void BM_BuildDesignSerial(benchmark::State& state) {
  const LayerSet ls({1, 4, 7, 10});
  for (auto _ : state) benchmark::DoNotOptimize(build_design_serial(corpus(), ls));
}

}  // namespace

BENCHMARK(BM_EvaluateGrid)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateGridSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BuildDesign)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BuildDesignSerial)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
