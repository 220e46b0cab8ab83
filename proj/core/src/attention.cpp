#include "hlstmat/attention.hpp"

#include <algorithm>
#include <ostream>

#include "hlstmat/errors.hpp"
#include "hlstmat/nn.hpp"

namespace hlstmat {

Tensor mean_pool(const Tensor& V) {
  if (V.rank() != 2) {
    throw DimensionError("mean_pool: expected [L x d], got " + shape_to_string(V.shape()));
  }
  if (V.dim(0) == 0) throw EmptyInputError("mean_pool: no feature rows");
  return mean_rows(V);
}

TemporalAttention TemporalAttention::create(std::size_t hidden_dim, std::size_t feature_dim,
                                            std::size_t attn_dim, Rng& rng) {
  TemporalAttention a;
  a.W_a = xavier_uniform(attn_dim, hidden_dim, rng);
  a.U_a = xavier_uniform(attn_dim, feature_dim, rng);
  a.b_a = Tensor::zeros({attn_dim}, true);
  // Stored as a single-row matrix draw so the scale matches the other blocks.
  a.w = Tensor::vector(xavier_uniform(1, attn_dim, rng).to_vector(), true);
  return a;
}

TemporalAttention TemporalAttention::zeros(std::size_t hidden_dim, std::size_t feature_dim,
                                           std::size_t attn_dim) {
  TemporalAttention a;
  a.W_a = Tensor::zeros({attn_dim, hidden_dim}, true);
  a.U_a = Tensor::zeros({attn_dim, feature_dim}, true);
  a.b_a = Tensor::zeros({attn_dim}, true);
  a.w = Tensor::zeros({attn_dim}, true);
  return a;
}

ParameterList TemporalAttention::parameters() const {
  return {{"W_a", W_a}, {"U_a", U_a}, {"b_a", b_a}, {"w", w}};
}

Tensor project_features(const TemporalAttention& att, const Tensor& V) {
  if (V.rank() != 2) {
    throw DimensionError("attend: expected feature matrix, got " + shape_to_string(V.shape()));
  }
  if (V.dim(1) != att.feature_dim()) {
    throw DimensionError("attend: features are " + shape_to_string(V.shape()) +
                         " but attention expects dimension " + std::to_string(att.feature_dim()));
  }
  return matmul(V, transpose(att.U_a));
}

Attended temporal_attend(const TemporalAttention& att, const Tensor& h, const Tensor& V) {
  if (V.rank() == 2 && V.dim(0) == 0) throw EmptyInputError("attend: zero feature rows");
  return temporal_attend(att, h, V, project_features(att, V));
}

Attended temporal_attend(const TemporalAttention& att, const Tensor& h, const Tensor& V,
                         const Tensor& projected) {
  if (V.rank() != 2) {
    throw DimensionError("attend: expected feature matrix, got " + shape_to_string(V.shape()));
  }
  if (V.dim(0) == 0) throw EmptyInputError("attend: zero feature rows");
  if (h.rank() != 1 || h.dim(0) != att.hidden_dim()) {
    throw DimensionError("attend: hidden state " + shape_to_string(h.shape()) +
                         " does not match attention hidden dimension " +
                         std::to_string(att.hidden_dim()));
  }
  if (projected.rank() != 2 || projected.dim(0) != V.dim(0) || projected.dim(1) != att.attn_dim()) {
    throw DimensionError("attend: projected features " + shape_to_string(projected.shape()) +
                         " inconsistent with " + shape_to_string(V.shape()));
  }
  Tensor query = add(matmul(att.W_a, h), att.b_a);
  Tensor scores = matmul(tanh(add_row_broadcast(projected, query)), att.w);
  Tensor alpha = softmax(scores);
  Tensor context = matmul(alpha, V);
  return {std::move(context), std::move(alpha)};
}

Attended spatial_attend(const TemporalAttention& att, const Tensor& h, const Tensor& R) {
  return temporal_attend(att, h, R);
}

AdaptiveGate AdaptiveGate::create(std::size_t hidden_dim, std::size_t arity, Rng& rng) {
  if (arity != 1 && arity != 3) {
    throw ConfigError("adaptive gate: arity must be 1 or 3, got " + std::to_string(arity));
  }
  return AdaptiveGate{xavier_uniform(arity, hidden_dim, rng)};
}

namespace {

void check_same(const char* what, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 1) {
    throw DimensionError(std::string(what) + ": context " + shape_to_string(a.shape()) +
                         " and language state " + shape_to_string(b.shape()) + " differ");
  }
}

}  // namespace

Blend adaptive_blend(const AdaptiveGate& gate, const Tensor& h, const Tensor& c, const Tensor& h_bar,
                     std::optional<double> forced_beta) {
  check_same("adaptive_blend", c, h_bar);
  Tensor beta;
  if (forced_beta) {
    beta = Tensor::scalar(*forced_beta);
  } else {
    if (gate.arity() != 1) {
      throw DimensionError("adaptive_blend: gate arity is " + std::to_string(gate.arity()) +
                           ", expected 1");
    }
    if (h.rank() != 1 || h.dim(0) != gate.hidden_dim()) {
      throw DimensionError("adaptive_blend: hidden state " + shape_to_string(h.shape()) +
                           " does not match gate input " + std::to_string(gate.hidden_dim()));
    }
    beta = reshape(sigmoid(matmul(gate.W_s, h)), {});
  }
  Tensor keep_language = add_scalar(neg(beta), 1.0);
  Tensor context = add(mul(beta, c), mul(keep_language, h_bar));
  return {std::move(context), std::move(beta)};
}

Blend parallel_adaptive_blend(const AdaptiveGate& gate, const Tensor& h, const Tensor& c1,
                              const Tensor& c2, const Tensor& h_bar) {
  check_same("parallel_adaptive_blend", c1, h_bar);
  check_same("parallel_adaptive_blend", c2, h_bar);
  if (gate.arity() != 3) {
    throw DimensionError("parallel_adaptive_blend: gate arity is " + std::to_string(gate.arity()) +
                         ", expected 3");
  }
  if (h.rank() != 1 || h.dim(0) != gate.hidden_dim()) {
    throw DimensionError("parallel_adaptive_blend: hidden state " + shape_to_string(h.shape()) +
                         " does not match gate input " + std::to_string(gate.hidden_dim()));
  }
  Tensor beta = softmax(matmul(gate.W_s, h));
  Tensor context = add(add(mul(index(beta, 0), c1), mul(index(beta, 1), c2)),
                       mul(index(beta, 2), h_bar));
  return {std::move(context), std::move(beta)};
}

void AttentionTrace::write_csv(std::ostream& os, const std::vector<std::string>* words) const {
  os << "step,token";
  std::size_t beta_width = 0;
  std::vector<std::size_t> widths(alpha_groups.size(), 0);
  for (const auto& s : steps) {
    beta_width = std::max(beta_width, s.beta.size());
    for (std::size_t g = 0; g < s.alphas.size() && g < widths.size(); ++g)
      widths[g] = std::max(widths[g], s.alphas[g].size());
  }
  for (std::size_t g = 0; g < widths.size(); ++g) {
    for (std::size_t i = 1; i <= widths[g]; ++i) os << ',' << alpha_groups[g] << '_' << i;
  }
  if (beta_width == 1) {
    os << ",beta";
  } else {
    for (std::size_t i = 1; i <= beta_width; ++i) os << ",beta" << i;
  }
  os << '\n';
  const auto old_precision = os.precision(17);
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const auto& s = steps[t];
    os << t << ',';
    if (words && s.token >= 0 && static_cast<std::size_t>(s.token) < words->size()) {
      os << (*words)[static_cast<std::size_t>(s.token)];
    } else {
      os << s.token;
    }
    for (std::size_t g = 0; g < widths.size(); ++g) {
      for (std::size_t i = 0; i < widths[g]; ++i) {
        os << ',';
        if (g < s.alphas.size() && i < s.alphas[g].size()) os << s.alphas[g][i];
      }
    }
    for (std::size_t i = 0; i < beta_width; ++i) {
      os << ',';
      if (i < s.beta.size()) os << s.beta[i];
    }
    os << '\n';
  }
  os.precision(old_precision);
}

}  // namespace hlstmat
