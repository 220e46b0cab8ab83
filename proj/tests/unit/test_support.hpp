#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hlstmat/decoders.hpp"
#include "hlstmat/parameters.hpp"
#include "hlstmat/rng.hpp"
#include "hlstmat/tensor.hpp"

namespace hlstmat::test {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double stddev = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Fill rule shared with tests/oracles/decoder_hand_eval.py:
/// entry j of parameter `name` is 0.5 sin(0.7 j + 0.13 S) with S the byte sum of the name.
inline void fill_by_name(const ParameterList& params) {
  for (const auto& p : params) {
    double s = 0;
    for (unsigned char ch : p.name) s += ch;
    Tensor t = p.tensor;
    auto data = t.mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) data[j] = 0.5 * std::sin(0.7 * double(j) + 0.13 * s);
  }
}

/// cos(0.9 r + 0.4 c + 0.3), same rule as the oracle script.
inline Tensor formula_frames(std::size_t rows, std::size_t cols) {
  std::vector<double> v;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) v.push_back(std::cos(0.9 * double(r) + 0.4 * double(c) + 0.3));
  }
  return Tensor::matrix(rows, cols, std::move(v));
}

/// Decoder whose next-token distribution is an arbitrary function of the
/// tokens emitted so far. No parameters; used to test search procedures.
class ScriptedDecoder : public Decoder {
 public:
  using Script = std::function<std::vector<double>(const std::vector<int>& prefix)>;

  ScriptedDecoder(std::size_t vocab, Script script)
      : Decoder(make_config(vocab)), script_(std::move(script)) {}

  DecoderState init_state(const FeatureSet&) const override {
    DecoderState s;
    s.cache = {Tensor::zeros({0})};
    return s;
  }

  StepResult step(const DecoderState& state, int token, const FeatureSet&) const override {
    std::vector<double> prefix = state.cache.at(0).to_vector();
    if (state.step > 0) prefix.push_back(token);
    std::vector<int> ids(prefix.begin(), prefix.end());
    StepResult r;
    r.log_probs = log(Tensor::vector(script_(ids)));
    r.state = state;
    r.state.step = state.step + 1;
    r.state.cache = {Tensor::vector(prefix)};
    r.trace.token = token;
    return r;
  }

  ParameterList parameters() const override { return {}; }
  std::vector<std::string> trace_groups() const override { return {}; }

 private:
  static DecoderConfig make_config(std::size_t vocab) {
    DecoderConfig c;
    c.vocab_size = vocab;
    return c;
  }
  Script script_;
};

/// Context-free two-arm policy over words A = kNumReserved and
/// B = kNumReserved + 1: every step emits softmax(theta) over the two arms,
/// the reserved ids get log-probability -1e9.
class BanditDecoder : public Decoder {
 public:
  static constexpr int kArmA = kNumReserved;
  static constexpr int kArmB = kNumReserved + 1;

  BanditDecoder()
      : Decoder(make_config()), theta(Tensor::from({2}, {0.0, 0.0}, true)) {}

  DecoderState init_state(const FeatureSet&) const override { return {}; }

  StepResult step(const DecoderState& state, int token, const FeatureSet&) const override {
    StepResult r;
    r.log_probs = concat({Tensor::full({std::size_t(kNumReserved)}, -1e9), log_softmax(theta)});
    r.state = state;
    r.state.step = state.step + 1;
    r.trace.token = token;
    return r;
  }

  ParameterList parameters() const override { return {{"theta", theta}}; }
  std::vector<std::string> trace_groups() const override { return {}; }

  double p_a() const { return softmax(theta).to_vector()[0]; }

  Tensor theta;

 private:
  static DecoderConfig make_config() {
    DecoderConfig c;
    c.vocab_size = kNumReserved + 2;
    return c;
  }
};

/// Random distribution per prefix, reproducible from (seed, prefix).
inline ScriptedDecoder::Script random_script(std::uint64_t seed, std::size_t vocab) {
  return [seed, vocab](const std::vector<int>& prefix) {
    std::uint64_t key = seed;
    for (int t : prefix) key = derive_seed(key, static_cast<std::uint64_t>(t) + 1);
    Rng rng(derive_seed(key, prefix.size()));
    std::vector<double> p(vocab);
    double z = 0;
    for (double& x : p) z += (x = std::exp(2.0 * rng.normal()));
    for (double& x : p) x /= z;
    return p;
  };
}

}  // namespace hlstmat::test
