#include <benchmark/benchmark.h>

#include "jamba/config.hpp"
#include "jamba/mamba.hpp"
#include "jamba/model.hpp"
#include "jamba/ops.hpp"
#include "jamba/rng.hpp"
#include "jamba/runtime.hpp"
#include "jamba/tasks.hpp"

using namespace jamba;

namespace {

struct ScanInput {
  std::size_t L, D, N;
  std::vector<double> abar, bx, c, h0;
};

ScanInput make_scan(std::size_t L, std::size_t D, std::size_t N) {
  Rng rng(1);
  ScanInput s{L, D, N, std::vector<double>(L * D * N), std::vector<double>(L * D * N),
              std::vector<double>(L * N), std::vector<double>(D * N, 0.0)};
  for (auto& v : s.abar) v = 0.5 + 0.49 * rng.uniform();
  for (auto& v : s.bx) v = rng.normal(0.0, 1.0);
  for (auto& v : s.c) v = rng.normal(0.0, 1.0);
  return s;
}

void BM_ScanSequential(benchmark::State& state) {
  const auto s = make_scan(static_cast<std::size_t>(state.range(0)), 64, 16);
  for (auto _ : state) {
    auto r = selective_scan_sequential(s.abar, s.bx, s.c, s.h0, s.L, s.D, s.N);
    benchmark::DoNotOptimize(r.y.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ScanSequential)->Arg(256)->Arg(1024);

void BM_ScanChunked(benchmark::State& state) {
  const auto s = make_scan(static_cast<std::size_t>(state.range(0)), 64, 16);
  for (auto _ : state) {
    auto r = selective_scan_chunked(s.abar, s.bx, s.c, s.h0, s.L, s.D, s.N,
                                    static_cast<std::size_t>(state.range(1)));
    benchmark::DoNotOptimize(r.y.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ScanChunked)->Args({256, 16})->Args({1024, 16})->Args({1024, 64});

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  std::vector<double> va(n * n), vb(n * n);
  for (auto& v : va) v = rng.normal(0.0, 1.0);
  for (auto& v : vb) v = rng.normal(0.0, 1.0);
  const auto a = Tensor::from_vector({n, n}, va), b = Tensor::from_vector({n, n}, vb);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * 2 * state.range(0) * state.range(0) * state.range(0));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_DecodeStep(benchmark::State& state) {
  const auto model = JambaModel::init(preset("toy-1m").config, 3);
  auto cache = model.new_cache();
  const std::vector<std::int32_t> prompt = {5, 6, 7, 8};
  model.prefill(cache, prompt);
  std::int32_t tok = 9;
  for (auto _ : state) {
    auto logits = model.decode_step(cache, tok);
    tok = static_cast<std::int32_t>(argmax(logits));
  }
}
BENCHMARK(BM_DecodeStep)->Iterations(256);

void BM_TrainStep(benchmark::State& state) {
  const auto model = JambaModel::init(preset("toy-1m").config, 3);
  TaskSpec task;
  task.kind = TaskKind::kInduction;
  task.seq_len = 32;
  task.n_pairs = 6;
  const auto data = gen_task(task, 8, 0);
  for (auto _ : state) {
    auto loss = model.loss(data.inputs, data.targets, data.mask, 8, 32);
    backward(loss.total);
    for (auto& p : model.named_parameters()) p.tensor.zero_grad();
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  benchmark::Initialize(&argc, argv);
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
}
