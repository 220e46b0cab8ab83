#include <benchmark/benchmark.h>

#include "hlstmat/nn.hpp"
#include "hlstmat/rng.hpp"
#include "hlstmat/tensor.hpp"

using namespace hlstmat;

namespace {

Tensor gaussian(Shape shape, Rng& rng, bool grad) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = gaussian({n, n}, rng, false), b = gaussian({n, n}, rng, false);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(512);

void BM_LstmStepForwardBackward(benchmark::State& state) {
  const auto H = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  LstmCell cell = LstmCell::create(H, H, rng);
  const Tensor y = gaussian({H}, rng, false), h = gaussian({H}, rng, false), m = gaussian({H}, rng, false);
  for (auto _ : state) {
    Tape::current().clear();
    backward(sum(lstm_step(cell, y, h, m).h));
  }
  Tape::current().clear();
}
BENCHMARK(BM_LstmStepForwardBackward)->Arg(64)->Arg(256)->Arg(512);

}  // namespace
