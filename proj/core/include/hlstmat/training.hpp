#pragma once

// Losses, optimizers and the training driver.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hlstmat/data_io.hpp"
#include "hlstmat/decoders.hpp"
#include "hlstmat/inference.hpp"
#include "hlstmat/key_value.hpp"
#include "hlstmat/metrics.hpp"
#include "hlstmat/nn.hpp"
#include "hlstmat/parameters.hpp"
#include "hlstmat/rng.hpp"

namespace hlstmat {

// ---------------------------------------------------------------------------
// Maximum likelihood

/// Target ids aligned with the rows of per-sample log-probabilities; entries
/// equal to `pad` are masked out.
struct CaptionBatch {
  std::vector<std::vector<int>> targets;
  int pad = kPad;

  /// Targets caption[1..] of each BOS ... EOS caption, padded to `steps`
  /// (0: the longest caption).
  static CaptionBatch from_captions(const std::vector<std::vector<int>>& captions, std::size_t steps = 0);
};

/// -(1/B) sum_b sum_t log_probs[b][t, targets[b][t]] over unmasked steps.
Tensor mle_loss(const std::vector<Tensor>& log_probs, const CaptionBatch& batch);

// ---------------------------------------------------------------------------
// Contrastive image-caption embedding

Tensor cosine_similarity(const Tensor& a, const Tensor& b);

struct ContrastiveEncoder {
  Embedding embedding;
  LstmCell lstm;
  Linear W_v;  // image -> joint space
  Linear W_c;  // caption state -> joint space
  double margin = 0.2;

  static ContrastiveEncoder create(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim,
                                   std::size_t image_dim, std::size_t joint_dim, Rng& rng,
                                   double margin = 0.2);

  /// Final LSTM hidden state over the caption ids.
  Tensor encode_caption(const std::vector<int>& ids) const;
  Tensor similarity(const Tensor& image, const std::vector<int>& caption) const;
  ParameterList parameters() const;
};

/// Hinge loss with hardest in-batch negatives from a similarity matrix
/// S[i][j] = s(image_i, caption_j), averaged over the batch.
Tensor contrastive_loss_from_similarities(const std::vector<std::vector<Tensor>>& S, double margin);

/// Throws ContractError for fewer than two pairs.
Tensor contrastive_loss(const ContrastiveEncoder& encoder, const std::vector<Tensor>& images,
                        const std::vector<std::vector<int>>& captions);

// ---------------------------------------------------------------------------
// Reward fine-tuning

using RewardFn = std::function<double(const std::vector<int>& tokens)>;

/// CIDEr of generated ids against each sample's references, with document
/// frequencies from the whole reference set. Ids are scored as opaque
/// symbols, so no vocabulary is needed.
class CiderReward {
 public:
  explicit CiderReward(const std::vector<std::vector<std::vector<int>>>& references);
  double operator()(std::size_t sample, const std::vector<int>& tokens) const;

 private:
  std::shared_ptr<CiderScorer> scorer_;
};

struct RewardStep {
  double advantage = 0;
  double sample_reward = 0;
  double baseline_reward = 0;
  std::vector<int> sample;    // without EOS
  std::vector<int> baseline;  // greedy, without EOS
};

/// Samples a caption, decodes the greedy baseline and accumulates the
/// gradient of -scale * (R(sample) - R(greedy)) * sum log p(sample) into the
/// decoder's parameters. The EOS token counts towards the sampled caption.
RewardStep reward_gradient_step(const Decoder& decoder, const FeatureSet& features, const RewardFn& reward,
                                Rng& rng, const DecodeOptions& options = {}, double scale = 1.0);

// ---------------------------------------------------------------------------
// Optimizers

void clip_gradients(const ParameterList& params, double threshold = 10.0);
void sgd_update(const ParameterList& params, double lr);

struct AdadeltaState {
  std::vector<std::vector<double>> mean_sq_grad, mean_sq_update;
};

/// Throws DimensionError when a non-empty state does not match params.
void adadelta_update(const ParameterList& params, AdadeltaState& state, double rho = 0.95, double eps = 1e-6,
                     double lr = 1.0);

struct AdamOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay = 0.8;             // learning-rate factor ...
  std::size_t decay_every = 15;   // ... applied every this many epochs
};

/// lr * decay^floor(epoch / decay_every).
double scheduled_lr(const AdamOptions& options, std::size_t epoch);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;
};

void adam_update(const ParameterList& params, AdamState& state, double lr, const AdamOptions& options = {});

enum class OptimizerKind { adadelta, adam, sgd };
OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, AdamOptions adam = {});

  OptimizerKind kind() const { return kind_; }
  double learning_rate(std::size_t epoch) const;
  void step(const ParameterList& params, std::size_t epoch);

  /// Buffers as checkpoint records named "state/optim/...".
  ParameterList state_records(const ParameterList& params) const;
  void load_state(const ParameterList& records, const ParameterList& params);

 private:
  OptimizerKind kind_;
  double lr_;
  AdamOptions adam_;
  AdadeltaState adadelta_state_;
  AdamState adam_state_;
};

// ---------------------------------------------------------------------------
// Driver

struct TrainConfig {
  DecoderConfig model;
  std::filesystem::path dataset;
  std::filesystem::path output_dir = "run";
  std::optional<std::filesystem::path> vocab;  // default: <dataset>/vocab.txt
  std::string train_split = "train";
  std::string val_split = "val";  // falls back to the training split when absent
  std::size_t epochs = 500;
  std::size_t patience = 20;
  std::size_t batch_size = 64;
  OptimizerKind optimizer = OptimizerKind::adadelta;
  double lr = 1.0;
  AdamOptions adam;
  double clip = 10.0;
  std::uint64_t seed = 1;
  std::size_t max_caption_words = 0;
  std::size_t max_len = 0;  // decoding limit, 0: variant default
  std::string early_stop_metric = "cider";  // cider, bleu4, rougeL or loss
  std::size_t rl_epochs = 0;
  double rl_lr = 5e-5;
  std::size_t contrastive_epochs = 0;  // DA reward encoder pre-training
  std::size_t contrastive_dim = 1024;
  bool resume = false;
  TokenizerMode tokenizer = TokenizerMode::strip_punctuation;

  static TrainConfig from_key_values(const KeyValues& values);
  std::string to_text() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::string stage;  // "mle" or "rl"
  double loss = 0;
  double val_metric = 0;
  double lr = 0;
  double wall_time = 0;
  bool improved = false;

  std::string to_json(const std::string& metric_name) const;
};

/// Mean objective per caption over one pass; items are shuffled and
/// dropout-seeded from (seed, epoch) so a pass is reproducible.
double train_mle_epoch(Decoder& decoder, Optimizer& optimizer, const std::vector<Sample>& samples,
                       std::size_t batch_size, double clip, std::uint64_t seed, std::size_t epoch);

/// Greedy captions of every sample scored against their references.
MetricScores evaluate_samples(const Decoder& decoder, const std::vector<Sample>& samples,
                              const Vocabulary& vocab, std::size_t max_len);

/// Patience-based early stopping on a higher-is-better score.
struct EarlyStopping {
  std::size_t patience = 20;
  double best = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t stagnant = 0;
  bool seen = false;

  /// Returns true when `score` improves on the best so far.
  bool update(double score, std::size_t epoch);
  bool should_stop() const { return stagnant >= patience; }
};

/// Contrastive encoder trained with Adam on (global feature, caption) pairs.
ContrastiveEncoder train_contrastive_encoder(const std::vector<Sample>& samples, std::size_t vocab_size,
                                             std::size_t image_dim, std::size_t joint_dim, std::size_t epochs,
                                             std::size_t batch_size, std::uint64_t seed);

struct TrainResult {
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
  double best_metric = 0;
  bool early_stopped = false;
  std::filesystem::path best_checkpoint;
};

class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<Sample> train, std::vector<Sample> val, Vocabulary vocab);

  /// Loads dataset and vocabulary from the config paths.
  static Trainer from_config(const TrainConfig& config);

  TrainResult run();

  Decoder& decoder() { return *decoder_; }
  const TrainConfig& config() const { return config_; }

  /// Validation score used for early stopping; higher is better.
  double validation_score();
  /// Called after every logged epoch.
  void set_epoch_callback(std::function<void(const EpochLog&)> callback) { on_epoch_ = std::move(callback); }

 private:
  void save_last(std::size_t next_epoch, const EarlyStopping& stopping) const;
  std::size_t resume(EarlyStopping& stopping);
  double run_rl_epoch(std::size_t epoch, Optimizer& optimizer, const CiderReward& reward,
                      const ContrastiveEncoder* encoder);

  TrainConfig config_;
  std::vector<Sample> train_, val_;
  Vocabulary vocab_;
  std::unique_ptr<Decoder> decoder_;
  Optimizer optimizer_;
  std::function<void(const EpochLog&)> on_epoch_;
};

}  // namespace hlstmat
