#pragma once

// Neural building blocks: the gated LSTM cell, affine projections, word
// embeddings and inverted dropout.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "hlstmat/parameters.hpp"
#include "hlstmat/rng.hpp"
#include "hlstmat/tensor.hpp"

namespace hlstmat {

/// Uniform(-a, a) matrix with a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);

struct Linear {
  Tensor weight;                // [out x in]
  std::optional<Tensor> bias;   // [out]

  static Linear create(std::size_t in, std::size_t out, bool with_bias, Rng& rng);

  std::size_t in_dim() const { return weight.dim(1); }
  std::size_t out_dim() const { return weight.dim(0); }

  Tensor forward(const Tensor& x) const;
  ParameterList parameters() const;
};

/// Input, forget, output and candidate blocks, each with its own input (W),
/// recurrent (U) and bias (b) parameters.
struct LstmCell {
  Tensor W_i, W_f, W_o, W_g;  // [hidden x input]
  Tensor U_i, U_f, U_o, U_g;  // [hidden x hidden]
  Tensor b_i, b_f, b_o, b_g;  // [hidden]

  /// Xavier weights, zero biases except the forget gate (1.0).
  static LstmCell create(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

  std::size_t input_dim() const { return W_i.dim(1); }
  std::size_t hidden_dim() const { return W_i.dim(0); }

  ParameterList parameters() const;
};

struct LstmGates {
  Tensor input, forget, output, candidate;
};

struct LstmStep {
  Tensor h;
  Tensor m;
  LstmGates gates;
};

/// h_t, m_t = LSTM(y_t, h_{t-1}, m_{t-1}).
LstmStep lstm_step(const LstmCell& cell, const Tensor& y, const Tensor& h_prev, const Tensor& m_prev);

struct Embedding {
  Tensor table;  // [vocab x dim]

  static Embedding create(std::size_t vocab_size, std::size_t dim, Rng& rng);

  std::size_t vocab_size() const { return table.dim(0); }
  std::size_t dim() const { return table.dim(1); }

  ParameterList parameters() const { return {{"E", table}}; }
};

/// Row gather, [ids.size() x dim]. Throws VocabularyError on a bad id.
Tensor embed(const Embedding& E, std::span<const int> ids);
/// Single row, [dim].
Tensor embed_one(const Embedding& E, int id);

/// Inverted dropout. At inference (training == false) or rate == 0 the input
/// tensor itself is returned.
Tensor dropout(const Tensor& x, double rate, bool training, std::uint64_t seed);

}  // namespace hlstmat
