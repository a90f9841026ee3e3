#include <benchmark/benchmark.h>

#include "bnmvr/likelihood.hpp"
#include "bnmvr/simharness.hpp"

using namespace bnmvr;

namespace {

ModelSpec model(std::size_t p, std::size_t covariates) {
  ModelSpec spec;
  for (std::size_t j = 0; j < p; ++j) spec.design.responses.push_back(j);
  for (std::size_t k = 0; k < covariates; ++k)
    spec.design.mean_terms.push_back({TermKind::parametric, sim_responses + k, 1, {}});
  return spec;
}

}  // namespace

// Marginal quantities for a state with every coefficient selected.
void BM_ComputeS(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto p = static_cast<std::size_t>(st.range(1));
  Rng rng(1);
  const Dataset data = gen_dataset(n, 0.5, rng);
  const ModelSpec spec = model(p, 3);
  const DesignMatrices designs = build_designs(data, spec.design);
  SamplerState s = initial_state(designs, spec);
  s.gamma.setConstant(true);
  for (auto _ : st) benchmark::DoNotOptimize(compute_S(s, designs).s);
  st.SetItemsProcessed(st.iterations());
}
BENCHMARK(BM_ComputeS)->Args({50, 2})->Args({150, 2})->Args({50, 10})->Args({150, 10});

void BM_Sweep(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto p = static_cast<std::size_t>(st.range(1));
  Rng rng(2);
  const Dataset data = gen_dataset(n, 0.5, rng);
  const ModelSpec spec = model(p, 1);
  Sampler sampler(build_designs(data, spec.design), spec, 3);
  for (auto _ : st) sampler.sweep();
  st.SetItemsProcessed(st.iterations());
}
BENCHMARK(BM_Sweep)->Args({50, 1})->Args({50, 2})->Args({50, 10})->Args({150, 2});

BENCHMARK_MAIN();
