#include "hlstmat/rng.hpp"

#include "hlstmat/errors.hpp"

namespace hlstmat {

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw DomainError("categorical: negative weight");
    total += w;
  }
  if (weights.empty() || !(total > 0.0)) throw DomainError("categorical: weights sum to zero");
  double u = uniform(0.0, total);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  // Rounding can leave u marginally above the last bucket.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return weights.size() - 1;
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t s = splitmix(base);
  s = splitmix(s ^ a);
  s = splitmix(s ^ b);
  return splitmix(s ^ c);
}

}  // namespace hlstmat
