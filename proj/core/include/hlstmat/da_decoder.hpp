#pragma once

// Two-pass image caption decoder with deliberate attention.
//
// Pass one: LSTM1 reads [v_g; h2_prev; w], a residual shortcut mixes the
// word back in, and region attention produces v1. Pass two: LSTM2 reads
// [v_g; h1~; v1] and attends over the regions plus a visual sentinel taken
// from its own memory. The output layer fuses both passes.

#include <optional>

#include "hlstmat/decoders.hpp"

namespace hlstmat {

class DaDecoder : public Decoder {
 public:
  DaDecoder(DecoderConfig config, Rng& rng);

  DecoderState init_state(const FeatureSet& features) const override;
  StepResult step(const DecoderState& state, int token, const FeatureSet& features) const override;
  ParameterList parameters() const override;
  std::vector<std::string> trace_groups() const override;
  /// Second-pass NLL plus the weighted first-pass NLL when the head exists.
  Tensor caption_objective(const FeatureSet& features, std::span<const int> caption) const override;

  bool second_pass() const { return config_.da_second_pass; }
  bool first_pass_head() const { return first_head.has_value(); }

  Embedding embedding;
  LstmCell lstm1;
  Linear W_rd;                      // [w; h1] -> h1~
  TemporalAttention attn1;          // W_h1, W_v1, w_e1
  // Second pass; absent in the single-pass ablation.
  std::optional<LstmCell> lstm2;
  std::optional<TemporalAttention> attn2;  // W_h2, W_v2, w_z2
  std::optional<Linear> W_x, W_h;          // sentinel gate
  std::optional<Linear> sentinel_proj;     // hidden -> region dim when they differ
  std::optional<Linear> W_s, W_h3;         // sentinel score
  Tensor w_a;
  std::optional<Linear> W_sd;              // [h1~; h2; v2] -> hidden
  std::optional<Linear> out;
  std::optional<Linear> first_head;        // [h1~; v1] -> vocab
};

/// Distribution of the first-pass head for the step that produced `state`.
/// Throws ConfigError when the head is disabled.
Tensor da_first_pass_distribution(const DaDecoder& decoder, const DecoderState& state);

}  // namespace hlstmat
