#include "hlstmat/nn.hpp"

#include <cmath>
#include <vector>

#include "hlstmat/errors.hpp"

namespace hlstmat {

Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> values(rows * cols);
  for (double& v : values) v = rng.uniform(-a, a);
  return Tensor::matrix(rows, cols, std::move(values), true);
}

// ---------------------------------------------------------------------------

Linear Linear::create(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  Linear l;
  l.weight = xavier_uniform(out, in, rng);
  if (with_bias) l.bias = Tensor::zeros({out}, true);
  return l;
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() != 1 || x.dim(0) != in_dim()) {
    throw DimensionError("linear: expected input [" + std::to_string(in_dim()) + "], got " +
                         shape_to_string(x.shape()));
  }
  Tensor y = matmul(weight, x);
  return bias ? add(y, *bias) : y;
}

ParameterList Linear::parameters() const {
  ParameterList out{{"W", weight}};
  if (bias) out.push_back({"b", *bias});
  return out;
}

// ---------------------------------------------------------------------------

LstmCell LstmCell::create(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  LstmCell c;
  c.W_i = xavier_uniform(hidden_dim, input_dim, rng);
  c.W_f = xavier_uniform(hidden_dim, input_dim, rng);
  c.W_o = xavier_uniform(hidden_dim, input_dim, rng);
  c.W_g = xavier_uniform(hidden_dim, input_dim, rng);
  c.U_i = xavier_uniform(hidden_dim, hidden_dim, rng);
  c.U_f = xavier_uniform(hidden_dim, hidden_dim, rng);
  c.U_o = xavier_uniform(hidden_dim, hidden_dim, rng);
  c.U_g = xavier_uniform(hidden_dim, hidden_dim, rng);
  c.b_i = Tensor::zeros({hidden_dim}, true);
  c.b_f = Tensor::full({hidden_dim}, 1.0, true);
  c.b_o = Tensor::zeros({hidden_dim}, true);
  c.b_g = Tensor::zeros({hidden_dim}, true);
  return c;
}

ParameterList LstmCell::parameters() const {
  return {{"W_i", W_i}, {"W_f", W_f}, {"W_o", W_o}, {"W_g", W_g},
          {"U_i", U_i}, {"U_f", U_f}, {"U_o", U_o}, {"U_g", U_g},
          {"b_i", b_i}, {"b_f", b_f}, {"b_o", b_o}, {"b_g", b_g}};
}

namespace {

Tensor gate_preactivation(const char* gate, const Tensor& W, const Tensor& U, const Tensor& b,
                          const Tensor& y, const Tensor& h_prev) {
  if (W.dim(1) != y.numel() || y.rank() != 1) {
    throw DimensionError(std::string("lstm_step: gate ") + gate + " expects input [" +
                         std::to_string(W.dim(1)) + "], got " + shape_to_string(y.shape()));
  }
  if (U.dim(1) != h_prev.numel() || h_prev.rank() != 1) {
    throw DimensionError(std::string("lstm_step: gate ") + gate + " expects hidden [" +
                         std::to_string(U.dim(1)) + "], got " + shape_to_string(h_prev.shape()));
  }
  return add(add(matmul(W, y), matmul(U, h_prev)), b);
}

}  // namespace

LstmStep lstm_step(const LstmCell& cell, const Tensor& y, const Tensor& h_prev, const Tensor& m_prev) {
  if (m_prev.rank() != 1 || m_prev.dim(0) != cell.hidden_dim()) {
    throw DimensionError("lstm_step: memory expects [" + std::to_string(cell.hidden_dim()) +
                         "], got " + shape_to_string(m_prev.shape()));
  }
  LstmGates gates;
  gates.input = sigmoid(gate_preactivation("i", cell.W_i, cell.U_i, cell.b_i, y, h_prev));
  gates.forget = sigmoid(gate_preactivation("f", cell.W_f, cell.U_f, cell.b_f, y, h_prev));
  gates.output = sigmoid(gate_preactivation("o", cell.W_o, cell.U_o, cell.b_o, y, h_prev));
  gates.candidate = tanh(gate_preactivation("g", cell.W_g, cell.U_g, cell.b_g, y, h_prev));
  Tensor m = add(mul(gates.forget, m_prev), mul(gates.input, gates.candidate));
  Tensor h = mul(gates.output, tanh(m));
  return {std::move(h), std::move(m), std::move(gates)};
}

// ---------------------------------------------------------------------------

Embedding Embedding::create(std::size_t vocab_size, std::size_t dim, Rng& rng) {
  return Embedding{xavier_uniform(vocab_size, dim, rng)};
}

Tensor embed(const Embedding& E, std::span<const int> ids) {
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= E.vocab_size()) {
      throw VocabularyError("embed: token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(E.vocab_size()));
    }
  }
  return gather_rows(E.table, ids);
}

Tensor embed_one(const Embedding& E, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= E.vocab_size()) {
    throw VocabularyError("embed: token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(E.vocab_size()));
  }
  return row(E.table, static_cast<std::size_t>(id));
}

Tensor dropout(const Tensor& x, double rate, bool training, std::uint64_t seed) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw ContractError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.uniform(0.0, 1.0) < rate ? 0.0 : keep_scale;
  return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

}  // namespace hlstmat
