#pragma once

// Soft attention over frame or region features, the scalar adaptive gate
// that mixes visual context with the top-layer language state, and its
// three-way generalisation over appearance, motion and language.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hlstmat/parameters.hpp"
#include "hlstmat/rng.hpp"
#include "hlstmat/tensor.hpp"

namespace hlstmat {

/// Arithmetic mean over the rows of V [L x d]. Throws EmptyInputError for L == 0.
Tensor mean_pool(const Tensor& V);

/// Additive scorer: score_l = w^T tanh(W_a h + U_a v_l + b_a).
struct TemporalAttention {
  Tensor W_a;  // [attn x hidden]
  Tensor U_a;  // [attn x feature]
  Tensor b_a;  // [attn]
  Tensor w;    // [attn]

  static TemporalAttention create(std::size_t hidden_dim, std::size_t feature_dim,
                                  std::size_t attn_dim, Rng& rng);
  /// All-zero parameters (uniform attention), still tracked for gradients.
  static TemporalAttention zeros(std::size_t hidden_dim, std::size_t feature_dim,
                                 std::size_t attn_dim);

  std::size_t hidden_dim() const { return W_a.dim(1); }
  std::size_t feature_dim() const { return U_a.dim(1); }
  std::size_t attn_dim() const { return W_a.dim(0); }

  ParameterList parameters() const;
};

struct Attended {
  Tensor context;  // [feature]
  Tensor weights;  // [L], sums to one
};

/// U_a applied to every feature row: [L x attn]. Constant across decoding
/// steps, so decoders compute it once per sample.
Tensor project_features(const TemporalAttention& att, const Tensor& V);

Attended temporal_attend(const TemporalAttention& att, const Tensor& h, const Tensor& V);
/// Same as above with `projected == project_features(att, V)` supplied.
Attended temporal_attend(const TemporalAttention& att, const Tensor& h, const Tensor& V,
                         const Tensor& projected);
/// Region attention; identical scoring with R [N x d] in place of frames.
Attended spatial_attend(const TemporalAttention& att, const Tensor& h, const Tensor& R);

/// Gate logits W_s h. Arity 1 yields a sigmoid gate, arity 3 a softmax over
/// (appearance, motion, language).
struct AdaptiveGate {
  Tensor W_s;  // [arity x hidden]

  static AdaptiveGate create(std::size_t hidden_dim, std::size_t arity, Rng& rng);

  std::size_t arity() const { return W_s.dim(0); }
  std::size_t hidden_dim() const { return W_s.dim(1); }

  ParameterList parameters() const { return {{"W_s", W_s}}; }
};

struct Blend {
  Tensor context;  // mixed context vector
  Tensor beta;     // rank-0 for the scalar gate, [3] for the parallel gate
};

/// c_bar = beta c + (1 - beta) h_bar with beta = sigmoid(W_s h).
/// `forced_beta` pins the gate to a constant and bypasses W_s.
Blend adaptive_blend(const AdaptiveGate& gate, const Tensor& h, const Tensor& c, const Tensor& h_bar,
                     std::optional<double> forced_beta = std::nullopt);

/// c_bar = b1 c1 + b2 c2 + b3 h_bar with [b1, b2, b3] = softmax(W_s h).
Blend parallel_adaptive_blend(const AdaptiveGate& gate, const Tensor& h, const Tensor& c1,
                              const Tensor& c2, const Tensor& h_bar);

/// Attention weights and gate values recorded per decoding step.
struct AttentionTrace {
  struct Step {
    int token = 0;
    // One entry per attention module; the first is the primary map.
    std::vector<std::vector<double>> alphas;
    std::vector<double> beta;
  };

  std::vector<std::string> alpha_groups;  // column prefixes, e.g. {"alpha"}
  std::vector<Step> steps;

  /// CSV with columns step, token, alpha_1..alpha_L[, <group>_1..], beta or
  /// beta1..betaK.
  void write_csv(std::ostream& os, const std::vector<std::string>* words = nullptr) const;
};

}  // namespace hlstmat
