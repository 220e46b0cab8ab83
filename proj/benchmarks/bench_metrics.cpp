#include <benchmark/benchmark.h>

#include "hlstmat/metrics.hpp"
#include "hlstmat/rng.hpp"

using namespace hlstmat;

namespace {

TokenizedCorpus random_corpus(std::size_t n) {
  Rng rng(6);
  auto sentence = [&] {
    Tokens t(5 + rng.below(10));
    for (auto& w : t) w = "w" + std::to_string(rng.below(500));
    return t;
  };
  TokenizedCorpus c(n);
  for (auto& s : c) {
    s.candidate = sentence();
    for (int r = 0; r < 5; ++r) s.references.push_back(sentence());
  }
  return c;
}

void BM_EvaluateCorpus(benchmark::State& state) {
  const TokenizedCorpus c = random_corpus(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_corpus(c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EvaluateCorpus)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_CiderRewardScore(benchmark::State& state) {
  const TokenizedCorpus c = random_corpus(500);
  std::vector<std::vector<Tokens>> refs;
  for (const auto& s : c) refs.push_back(s.references);
  const CiderScorer scorer(refs);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(scorer.score(i % c.size(), c[i % c.size()].candidate));
    ++i;
  }
}
BENCHMARK(BM_CiderRewardScore);

}  // namespace
