#include "panelmc/kernels.hpp"
#include "panelmc/mcnnm.hpp"
#include "panelmc/synth.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace panelmc;

namespace {

struct Inputs {
  Matrix y, low_rank, target;
  BoolGrid mask;
  Vector row_effects, col_effects;
  kernels::MaskCounts counts;
};

Inputs make_inputs(Index n, Index c) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0.0, 1.0);
  std::bernoulli_distribution keep(0.8);
  Inputs in;
  in.y = Matrix::NullaryExpr(n, c, [&] { return z(rng); });
  in.low_rank = Matrix::NullaryExpr(n, c, [&] { return z(rng); });
  in.mask = BoolGrid::NullaryExpr(n, c, [&] { return keep(rng); });
  in.row_effects = Vector::Zero(n);
  in.col_effects = Vector::Zero(c);
  in.target.resize(n, c);
  in.counts = kernels::count_mask(in.mask);
  return in;
}

template <bool Parallel>
void BM_row_effects(benchmark::State& state) {
  auto in = make_inputs(state.range(0), state.range(1));
  for (auto _ : state) {
    const double d = Parallel ? kernels::parallel::update_row_effects(in.y, in.low_rank, in.mask, in.counts.rows,
                                                                      in.col_effects, in.row_effects)
                              : kernels::serial::update_row_effects(in.y, in.low_rank, in.mask, in.counts.rows,
                                                                    in.col_effects, in.row_effects);
    benchmark::DoNotOptimize(d);
  }
}

template <bool Parallel>
void BM_fill_target(benchmark::State& state) {
  auto in = make_inputs(state.range(0), state.range(1));
  for (auto _ : state) {
    if (Parallel)
      kernels::parallel::fill_target(in.y, in.low_rank, in.row_effects, in.col_effects, in.mask, in.target);
    else
      kernels::serial::fill_target(in.y, in.low_rank, in.row_effects, in.col_effects, in.mask, in.target);
    benchmark::DoNotOptimize(in.target.data());
  }
}

template <bool Parallel>
void BM_masked_sse(benchmark::State& state) {
  auto in = make_inputs(state.range(0), state.range(1));
  for (auto _ : state) {
    const double s = Parallel
                         ? kernels::parallel::masked_sse(in.y, in.low_rank, in.row_effects, in.col_effects, in.mask)
                         : kernels::serial::masked_sse(in.y, in.low_rank, in.row_effects, in.col_effects, in.mask);
    benchmark::DoNotOptimize(s);
  }
}

template <bool Parallel>
void BM_fit(benchmark::State& state) {
  DgpConfig c;
  c.rows = state.range(0);
  c.treated_fraction = 0.0;
  c.rule = EffectRule::zero;
  c.missing_fraction = 0.2;
  const auto p = generate(c);
  FitOptions o;
  o.parallel = Parallel;
  const double lambda = lambda_max(p.matrix.values, p.matrix.observed) * 0.01;
  for (auto _ : state) benchmark::DoNotOptimize(fit(p.matrix.values, p.matrix.observed, lambda, o).rank);
}

}  // namespace

BENCHMARK(BM_row_effects<false>)->Args({2000, 48})->Args({20000, 200});
BENCHMARK(BM_row_effects<true>)->Args({2000, 48})->Args({20000, 200});
BENCHMARK(BM_fill_target<false>)->Args({2000, 48})->Args({20000, 200});
BENCHMARK(BM_fill_target<true>)->Args({2000, 48})->Args({20000, 200});
BENCHMARK(BM_masked_sse<false>)->Args({2000, 48})->Args({20000, 200});
BENCHMARK(BM_masked_sse<true>)->Args({2000, 48})->Args({20000, 200});
BENCHMARK(BM_fit<false>)->Arg(300)->Arg(3000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_fit<true>)->Arg(300)->Arg(3000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
