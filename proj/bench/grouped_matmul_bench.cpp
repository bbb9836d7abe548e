#include <benchmark/benchmark.h>

#include "dgattn/attention.hpp"
#include "dgattn/verify.hpp"

using namespace dgattn;

namespace {

// Stage-2 DGT-T shape: L = 784, 48 groups, 98 keys each.
const GroupedInstance& instance() {
  static const GroupedInstance in = [] {
    Rng rng(0);
    InstanceShape s;
    s.tokens = 784;
    s.dim = 32;
    s.groups = 48;
    s.top_k = 98;
    return random_grouped_instance(rng, s);
  }();
  return in;
}

template <int Form>
Tensor run_tiled(const GroupedInstance& in, const TilePlan& plan) {
  if constexpr (Form == 1) return form1(in.q_sorted, in.keys, in.selection, in.layout, plan);
  if constexpr (Form == 2) return form2(in.probs, in.values, in.selection, in.layout, plan);
  if constexpr (Form == 3) return form3(in.q_sorted, in.grad_p, in.selection, in.layout, plan);
  return form4(in.probs, in.grad_y, in.selection, in.layout, plan);
}

template <int Form>
Tensor run_reference(const GroupedInstance& in) {
  if constexpr (Form == 1) return reference::form1(in.q_sorted, in.keys, in.selection, in.layout);
  if constexpr (Form == 2) return reference::form2(in.probs, in.values, in.selection, in.layout);
  if constexpr (Form == 3) return reference::form3(in.q_sorted, in.grad_p, in.selection, in.layout);
  return reference::form4(in.probs, in.grad_y, in.selection, in.layout);
}

template <int Form>
void BM_Tiled(benchmark::State& state) {
  const auto& in = instance();
  const TilePlan plan = make_tile_plan(in.layout, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(run_tiled<Form>(in, plan));
}

template <int Form>
void BM_Reference(benchmark::State& state) {
  const auto& in = instance();
  for (auto _ : state) benchmark::DoNotOptimize(run_reference<Form>(in));
}

void BM_Forward(benchmark::State& state) {
  Rng rng(1);
  DgAttentionConfig cfg;
  cfg.heads = 2;
  cfg.head_dim = 32;
  cfg.groups = 48;
  cfg.top_k = 98;
  const Tensor x = rng.normal_tensor({784, 64});
  HeadCentroids cents = init_head_centroids(cfg, rng);
  for (auto _ : state) benchmark::DoNotOptimize(dg_attention_forward(x, x, x, cfg, cents).y);
}

}  // namespace

BENCHMARK(BM_Tiled<1>)->Arg(8)->Arg(16)->Arg(32);
BENCHMARK(BM_Reference<1>);
BENCHMARK(BM_Tiled<2>)->Arg(8)->Arg(16)->Arg(32);
BENCHMARK(BM_Reference<2>);
BENCHMARK(BM_Tiled<3>)->Arg(8)->Arg(16)->Arg(32);
BENCHMARK(BM_Reference<3>);
BENCHMARK(BM_Tiled<4>)->Arg(8)->Arg(16)->Arg(32);
BENCHMARK(BM_Reference<4>);
BENCHMARK(BM_Forward);

BENCHMARK_MAIN();
