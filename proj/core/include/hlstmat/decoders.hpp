#pragma once

// Caption decoders. Each variant maps (state, previous token, features) to a
// log-probability vector over the vocabulary and the next state.
//
//   basic             single LSTM fed the mean-pooled feature every step
//   hlstmat_temporal  bottom/top LSTMs, attention over frames, adaptive gate
//   hlstmat_spatial   as above with attention over regions
//   conf              hlstmat over per-frame [appearance; motion] features
//   para              two attention modules and a three-way gate
//   two_stream        two hlstmat decoders with averaged distributions
//   da                two-pass decoder with sentinel attention (da_decoder.hpp)

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hlstmat/attention.hpp"
#include "hlstmat/nn.hpp"
#include "hlstmat/parameters.hpp"
#include "hlstmat/tensor.hpp"
#include "hlstmat/tokens.hpp"

namespace hlstmat {

enum class DecoderKind { basic, hlstmat_temporal, hlstmat_spatial, conf, para, two_stream, da };

std::string to_string(DecoderKind kind);
/// Throws ConfigError for an unknown name.
DecoderKind parse_decoder_kind(const std::string& name);

enum class OutputHidden { bottom, top };

struct DecoderConfig {
  DecoderKind kind = DecoderKind::hlstmat_temporal;
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 512;
  std::size_t hidden_dim = 512;
  std::size_t attn_dim = 512;
  std::size_t feature_dim = 2048;  // frames, regions, global vector
  std::size_t motion_dim = 4096;
  bool adaptive = true;            // false gives the gate-free hLSTMt variant
  OutputHidden output_hidden = OutputHidden::bottom;
  double dropout = 0.5;
  std::uint64_t seed = 1;
  bool joint_two_stream = false;
  // Deliberate-attention options.
  bool da_second_pass = true;
  bool da_first_pass_head = false;
  double da_aux_weight = 0.5;

  void validate() const;
  /// key = value lines, readable by parse().
  std::string to_text() const;
  static DecoderConfig parse(const std::map<std::string, std::string>& values);
};

/// Precomputed visual features of one sample. Unused members stay undefined.
struct FeatureSet {
  Tensor global;   // [d]
  Tensor frames;   // [L x d]
  Tensor regions;  // [N x d]
  Tensor motion;   // [S x d_m]
};

struct LayerState {
  Tensor h;
  Tensor m;
};

struct DecoderState {
  std::vector<LayerState> layers;
  std::size_t step = 0;
  // Per-sample tensors computed once at init (feature matrices, projections).
  std::vector<Tensor> cache;
  // Intermediate values of the last step some variants expose (DA first pass).
  std::vector<Tensor> aux;
  std::vector<DecoderState> substates;
};

struct StepResult {
  Tensor log_probs;  // [vocab]
  DecoderState state;
  AttentionTrace::Step trace;
};

class Decoder {
 public:
  explicit Decoder(DecoderConfig config);
  virtual ~Decoder() = default;
  Decoder(const Decoder&) = delete;
  Decoder& operator=(const Decoder&) = delete;

  const DecoderConfig& config() const { return config_; }
  DecoderKind kind() const { return config_.kind; }
  std::size_t vocab_size() const { return config_.vocab_size; }

  virtual DecoderState init_state(const FeatureSet& features) const = 0;
  virtual StepResult step(const DecoderState& state, int token, const FeatureSet& features) const = 0;
  virtual ParameterList parameters() const = 0;
  /// Column prefixes for trace CSVs.
  virtual std::vector<std::string> trace_groups() const { return {"alpha"}; }

  /// Training objective for one caption (BOS ... EOS). Defaults to the
  /// teacher-forced negative log-likelihood.
  virtual Tensor caption_objective(const FeatureSet& features, std::span<const int> caption) const;

  virtual void set_training(bool training, std::uint64_t dropout_seed = 0);
  bool training() const { return training_; }
  void set_trace(bool enabled) { trace_ = enabled; }
  bool trace_enabled() const { return trace_; }

 protected:
  void check_token(int token) const;
  Tensor apply_dropout(const Tensor& x, const DecoderState& state, unsigned site) const;

  DecoderConfig config_;
  bool training_ = false;
  std::uint64_t dropout_seed_ = 0;
  bool trace_ = true;
};

/// Word distribution from a log-probability vector.
Tensor word_distribution(const StepResult& result);

/// Elementwise average of two distributions over the same vocabulary.
Tensor two_stream_fuse(const Tensor& p1, const Tensor& p2);

/// Log-probabilities [T x vocab] with T = padded_length - 1 (or
/// caption.size() - 1 when padded_length is 0). Row t is the distribution
/// after feeding caption[t]; rows at or beyond caption.size() - 1 are zero.
Tensor forward_teacher_forced(const Decoder& decoder, const FeatureSet& features,
                              std::span<const int> caption, std::size_t padded_length = 0);

/// Negative log-likelihood of caption[1..] given caption[..-1], summed.
Tensor caption_nll(const Decoder& decoder, const FeatureSet& features, std::span<const int> caption);

// ---------------------------------------------------------------------------

class BasicLstmDecoder : public Decoder {
 public:
  BasicLstmDecoder(DecoderConfig config, Rng& rng);

  DecoderState init_state(const FeatureSet& features) const override;
  StepResult step(const DecoderState& state, int token, const FeatureSet& features) const override;
  ParameterList parameters() const override;
  std::vector<std::string> trace_groups() const override { return {}; }

  Embedding embedding;
  LstmCell lstm;
  Linear init_h, init_m;
  Linear out_hidden, out_vocab;
};

/// Which FeatureSet member an hLSTMat decoder attends over.
enum class FeatureSource { frames, regions, motion, frames_with_motion };

/// Per-frame [appearance; motion] rows, pairing frame l of L with motion
/// segment floor((l + 0.5) S / L).
Tensor concat_frames_with_motion(const Tensor& frames, const Tensor& motion);

class HlstmatDecoder : public Decoder {
 public:
  HlstmatDecoder(DecoderConfig config, FeatureSource source, Rng& rng);

  DecoderState init_state(const FeatureSet& features) const override;
  StepResult step(const DecoderState& state, int token, const FeatureSet& features) const override;
  ParameterList parameters() const override;

  FeatureSource source() const { return source_; }
  std::size_t source_dim() const;
  /// Selected (and for frames_with_motion, assembled) feature matrix.
  Tensor source_features(const FeatureSet& features) const;

  Embedding embedding;
  LstmCell bottom, top;
  TemporalAttention attention;
  std::optional<AdaptiveGate> gate;
  Linear init_h, init_m;                // W^ih, W^ic
  std::optional<Linear> context_proj;   // present when feature dim != hidden dim
  Linear out_hidden;                    // W_p, b_p
  Linear out_vocab;                     // U_p, d
  std::optional<double> forced_beta;    // pins the adaptive gate when set

 private:
  FeatureSource source_;
};

class ParaDecoder : public Decoder {
 public:
  ParaDecoder(DecoderConfig config, Rng& rng);

  DecoderState init_state(const FeatureSet& features) const override;
  StepResult step(const DecoderState& state, int token, const FeatureSet& features) const override;
  ParameterList parameters() const override;
  std::vector<std::string> trace_groups() const override { return {"alpha", "motion_alpha"}; }

  Embedding embedding;
  LstmCell bottom, top;
  TemporalAttention appearance_attention, motion_attention;
  AdaptiveGate gate;  // arity 3
  Linear init_h, init_m;
  std::optional<Linear> appearance_proj, motion_proj;
  Linear out_hidden, out_vocab;
};

class TwoStreamDecoder : public Decoder {
 public:
  TwoStreamDecoder(DecoderConfig config, Rng& rng);

  DecoderState init_state(const FeatureSet& features) const override;
  StepResult step(const DecoderState& state, int token, const FeatureSet& features) const override;
  ParameterList parameters() const override;
  std::vector<std::string> trace_groups() const override { return {"alpha", "motion_alpha"}; }
  /// Sum of per-stream likelihoods unless joint training is configured.
  Tensor caption_objective(const FeatureSet& features, std::span<const int> caption) const override;
  void set_training(bool training, std::uint64_t dropout_seed = 0) override;

  HlstmatDecoder& appearance() { return *appearance_; }
  HlstmatDecoder& motion() { return *motion_; }
  const HlstmatDecoder& appearance() const { return *appearance_; }
  const HlstmatDecoder& motion() const { return *motion_; }

 private:
  std::unique_ptr<HlstmatDecoder> appearance_;
  std::unique_ptr<HlstmatDecoder> motion_;
};

/// Constructs any variant, DA included. Throws ConfigError on inconsistent
/// dimensions.
std::unique_ptr<Decoder> build_variant(DecoderKind kind, const DecoderConfig& config);
std::unique_ptr<Decoder> build_variant(const DecoderConfig& config);

}  // namespace hlstmat
