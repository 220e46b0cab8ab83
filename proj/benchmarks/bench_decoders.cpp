#include <benchmark/benchmark.h>

#include "hlstmat/gradcheck.hpp"
#include "hlstmat/inference.hpp"

using namespace hlstmat;

namespace {

DecoderConfig bench_config(DecoderKind kind, std::size_t hidden) {
  DecoderConfig c = tiny_decoder_config(kind, hidden, 1000, 1);
  c.embed_dim = c.attn_dim = hidden;
  c.feature_dim = 2 * hidden;
  c.motion_dim = hidden;
  return c;
}

void BM_DecoderStep(benchmark::State& state) {
  const auto kind = static_cast<DecoderKind>(state.range(0));
  const DecoderConfig c = bench_config(kind, 128);
  auto dec = build_variant(c);
  Rng rng(3);
  const FeatureSet f = random_features(c, 28, rng);
  NoGradGuard no_grad;
  const DecoderState s = dec->init_state(f);
  for (auto _ : state) benchmark::DoNotOptimize(dec->step(s, kBos, f));
  state.SetLabel(to_string(kind));
}
BENCHMARK(BM_DecoderStep)->DenseRange(0, 6);

void BM_CaptionObjectiveWithBackward(benchmark::State& state) {
  const DecoderConfig c = bench_config(DecoderKind::hlstmat_temporal, 64);
  auto dec = build_variant(c);
  Rng rng(4);
  const FeatureSet f = random_features(c, 28, rng);
  std::vector<int> caption = {kBos};
  for (int t = 0; t < 12; ++t) caption.push_back(kNumReserved + t);
  caption.push_back(kEos);
  for (auto _ : state) {
    Tape::current().clear();
    backward(dec->caption_objective(f, caption));
  }
  Tape::current().clear();
}
BENCHMARK(BM_CaptionObjectiveWithBackward)->Unit(benchmark::kMillisecond);

void BM_BeamSearch(benchmark::State& state) {
  const DecoderConfig c = bench_config(DecoderKind::hlstmat_temporal, 64);
  auto dec = build_variant(c);
  Rng rng(5);
  const FeatureSet f = random_features(c, 28, rng);
  DecodeOptions o;
  o.beam_size = static_cast<std::size_t>(state.range(0));
  o.max_len = 16;
  for (auto _ : state) benchmark::DoNotOptimize(beam_search(*dec, f, o));
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace
