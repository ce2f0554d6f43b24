#include <benchmark/benchmark.h>

#include <random>

#include "funmatch/augment.hpp"
#include "funmatch/linalg.hpp"
#include "funmatch/losses.hpp"
#include "funmatch/model.hpp"
#include "funmatch/optim.hpp"

namespace fm = funmatch;

namespace {

template <typename T>
fm::Tensor<T> uniform(fm::Shape shape, std::uint64_t seed) {
  fm::Tensor<T> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (T& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = uniform<float>({n, n}, 1), b = uniform<float>({n, n}, 2);
  for (auto _ : state) {
    fm::Tape<float> tape(false);
    benchmark::DoNotOptimize(tape.value(tape.matmul(tape.constant(a), tape.constant(b))).data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  const auto x = uniform<float>({32, 28, 28, channels}, 3);
  const auto k = uniform<float>({3, 3, channels, 2 * channels}, 4);
  for (auto _ : state) {
    fm::Tape<float> tape;
    const fm::Var kv = tape.variable(k);
    const fm::Var y = tape.reduce_mean(tape.conv2d(tape.constant(x), kv, 2, fm::Padding::same));
    benchmark::DoNotOptimize(tape.backward(y)[kv].data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(1)->Arg(16)->Arg(32);

void BM_InversePthRoot(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto g = uniform<double>({n, n}, 5);
  fm::Tensor<double> a({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < n; ++l) s += g[i * n + l] * g[j * n + l];
      a[i * n + j] = s;
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(fm::inverse_pth_root(a, 4, 1e-6).data());
}
BENCHMARK(BM_InversePthRoot)->Arg(32)->Arg(128);

void BM_OptimizerStep(benchmark::State& state) {
  fm::OptimConfig c;
  c.kind = static_cast<fm::OptimizerKind>(state.range(0));
  const fm::ModelConfig model = fm::ModelConfig::reference_teacher(3);
  fm::Parameters<float> params = fm::build<float>(model, 1);
  std::vector<fm::Tensor<float>> grads;
  std::uint64_t seed = 10;
  for (const auto& p : params) grads.push_back(uniform<float>(p.value.shape(), seed++));
  auto opt = fm::make_optimizer<float>(c);
  for (auto _ : state) opt->step(params, grads, 1e-3);
  state.SetLabel(std::string(fm::to_string(c.kind)));
}
BENCHMARK(BM_OptimizerStep)
    ->Arg(static_cast<int>(fm::OptimizerKind::sgd))
    ->Arg(static_cast<int>(fm::OptimizerKind::adam))
    ->Arg(static_cast<int>(fm::OptimizerKind::shampoo));

void BM_MakeViews(benchmark::State& state) {
  const auto mode = static_cast<fm::ConsistencyMode>(state.range(0));
  const auto batch = uniform<float>({32, 28, 28, 1}, 6);
  fm::AugmentConfig cfg;
  std::uint64_t step = 0;
  for (auto _ : state) {
    fm::Rng rng = fm::make_rng(7, fm::Stream::views, {step++});
    benchmark::DoNotOptimize(fm::make_views(batch, mode, cfg, rng).student.data());
  }
  state.SetLabel(std::string(fm::to_string(mode)));
}
BENCHMARK(BM_MakeViews)
    ->Arg(static_cast<int>(fm::ConsistencyMode::fixed_teacher))
    ->Arg(static_cast<int>(fm::ConsistencyMode::function_matching));

// One distillation step of the reference student: forward, KL loss, backward.
void BM_StudentTrainStep(benchmark::State& state) {
  const fm::ModelConfig model = fm::ModelConfig::reference_student(3);
  const fm::Parameters<float> params = fm::build<float>(model, 2);
  const auto x = uniform<float>({32, 28, 28, 1}, 8);
  const fm::Tensor<float> teacher = fm::tempered_log_probs(uniform<float>({32, 3}, 9), 1.0);
  for (auto _ : state) {
    fm::Tape<float> tape;
    const auto vars = fm::bind(tape, params, true);
    const fm::Var logits = fm::forward(tape, model, vars, tape.constant(x));
    const fm::Var loss = fm::kl_distill_log_probs(tape, logits, teacher, 1.0);
    benchmark::DoNotOptimize(tape.backward(loss)[vars.front()].data());
  }
}
BENCHMARK(BM_StudentTrainStep);

}  // namespace

BENCHMARK_MAIN();
