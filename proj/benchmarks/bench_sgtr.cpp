// Microbenchmarks for the hot paths of the pipeline. Run with
//   build/benchmarks/sgtr_bench [--benchmark_filter=...]
// Times are per iteration on a single core.

#include <benchmark/benchmark.h>

#include <vector>

#include "sgtr/graphgen.hpp"
#include "sgtr/model.hpp"
#include "sgtr/rng.hpp"
#include "sgtr/synthdata.hpp"
#include "sgtr/tensor.hpp"
#include "sgtr/train.hpp"

using namespace sgtr;

namespace {

DiffValue random_matrix(int r, int c, Rng& rng) {
  std::vector<double> d(static_cast<std::int64_t>(r) * c);
  for (double& v : d) v = rng.uniform(-1.0, 1.0);
  return DiffValue::constant({r, c}, std::move(d));
}

void BM_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  DiffValue a = random_matrix(n, n, rng);
  DiffValue b = random_matrix(n, n, rng);
  for (auto _ : state) {
    DiffValue c = matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(256)->Arg(512);

void BM_conv2d(benchmark::State& state) {
  Rng rng(2);
  const int H = 32, W = 128, Cin = 16, Cout = 32, K = 3;
  std::vector<double> id(static_cast<size_t>(H) * W * Cin);
  for (double& v : id) v = rng.uniform(-1.0, 1.0);
  DiffValue img = DiffValue::constant({H, W, Cin}, std::move(id));
  std::vector<double> wd(static_cast<size_t>(K) * K * Cin * Cout);
  for (double& v : wd) v = rng.uniform(-0.1, 0.1);
  DiffValue w = DiffValue::constant({K, K, Cin, Cout}, std::move(wd));
  DiffValue b = DiffValue::zeros({Cout});
  for (auto _ : state) {
    DiffValue y = conv2d(img, w, b);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_conv2d);

void BM_build_adjacency(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(3);
  Matrix e(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const double v = i == j ? 1.0 : rng.uniform(0.0, 1.0);
      e[i][j] = e[j][i] = v;
    }
  for (auto _ : state) {
    Matrix a = build_adjacency(e, AdjacencyMode::kDiscrete);
    benchmark::DoNotOptimize(a.data());
  }
}
BENCHMARK(BM_build_adjacency)->Arg(16)->Arg(65);

void BM_model_forward(benchmark::State& state) {
  ModelConfig mc;
  SgtrModel model = SgtrModel::init(mc, 1);
  CorpusConfig cc;
  cc.corruption = 0.5;
  cc.seed = 4;
  std::vector<SegSample> samples = generate_corpus(cc, 4);
  model.fit_lm(samples);
  int i = 0;
  for (auto _ : state) {
    ForwardResult r = model.forward(samples[i % samples.size()], i);
    benchmark::DoNotOptimize(r.z.scores.data().data());
    ++i;
  }
}
BENCHMARK(BM_model_forward);

void BM_train_step(benchmark::State& state) {
  ModelConfig mc;
  SgtrModel model = SgtrModel::init(mc, 1);
  CorpusConfig cc;
  cc.corruption = 0.5;
  cc.seed = 5;
  std::vector<SegSample> samples = generate_corpus(cc, 4);
  model.fit_lm(samples);
  Adam opt(model.named_params(), 1e-3);
  LossConfig lc;
  int i = 0;
  for (auto _ : state) {
    const SegSample& s = samples[i % samples.size()];
    ForwardResult fwd = model.forward(s, i);
    LossBreakdown lb = model.loss(s, fwd, lc);
    backward(lb.total);
    opt.step();
    opt.zero_grad();
    ++i;
  }
}
BENCHMARK(BM_train_step);

}  // namespace

BENCHMARK_MAIN();
