#include "hlstmat/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "hlstmat/attention.hpp"
#include "hlstmat/checkpoint.hpp"
#include "hlstmat/errors.hpp"

namespace hlstmat {

namespace fs = std::filesystem;

namespace {

Tensor vector_of(const std::vector<Tensor>& scalars) {
  std::vector<Tensor> parts;
  parts.reserve(scalars.size());
  for (const auto& s : scalars) parts.push_back(reshape(s, {1}));
  return concat(parts);
}

std::span<const double> grad_or_empty(const Tensor& t) {
  if (!t.has_grad()) return {};
  return t.grad();
}

template <typename Fn>
void for_each_entry(const ParameterList& params, std::vector<std::vector<double>>& a,
                    std::vector<std::vector<double>>& b, const char* who, Fn fn) {
  if (a.empty()) {
    for (const auto& p : params) {
      a.emplace_back(p.tensor.numel(), 0.0);
      b.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (a.size() != params.size() || b.size() != params.size()) {
    throw DimensionError(std::string(who) + ": state holds " + std::to_string(a.size()) + " buffers for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    if (a[k].size() != t.numel() || b[k].size() != t.numel()) {
      throw DimensionError(std::string(who) + ": state for '" + params[k].name + "' has " +
                           std::to_string(a[k].size()) + " entries, parameter has " + std::to_string(t.numel()));
    }
    auto g = grad_or_empty(t);
    auto x = t.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) fn(x[i], g.empty() ? 0.0 : g[i], a[k][i], b[k][i]);
  }
}

Tensor image_feature(const FeatureSet& f) {
  if (f.global.defined()) return f.global;
  if (f.regions.defined()) return mean_pool(f.regions);
  if (f.frames.defined()) return mean_pool(f.frames);
  throw EmptyInputError("no image feature for the contrastive encoder");
}

std::vector<int> strip_special(const std::vector<int>& ids) {
  std::vector<int> out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id != kBos && id != kPad) out.push_back(id);
  }
  return out;
}

Tokens ids_as_tokens(const std::vector<int>& ids) {
  Tokens out;
  for (int id : strip_special(ids)) out.push_back(std::to_string(id));
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------

CaptionBatch CaptionBatch::from_captions(const std::vector<std::vector<int>>& captions, std::size_t steps) {
  CaptionBatch b;
  std::size_t longest = 0;
  for (const auto& c : captions) {
    if (c.size() < 2) throw ContractError("CaptionBatch: caption needs BOS and at least one target");
    longest = std::max(longest, c.size() - 1);
  }
  const std::size_t T = steps == 0 ? longest : steps;
  for (const auto& c : captions) {
    if (c.size() - 1 > T) {
      throw DimensionError("CaptionBatch: caption of " + std::to_string(c.size() - 1) + " targets exceeds " +
                           std::to_string(T) + " steps");
    }
    std::vector<int> t(c.begin() + 1, c.end());
    t.resize(T, b.pad);
    b.targets.push_back(std::move(t));
  }
  return b;
}

Tensor mle_loss(const std::vector<Tensor>& log_probs, const CaptionBatch& batch) {
  if (log_probs.size() != batch.targets.size()) {
    throw DimensionError("mle_loss: " + std::to_string(log_probs.size()) + " predictions for " +
                         std::to_string(batch.targets.size()) + " targets");
  }
  if (log_probs.empty()) throw EmptyInputError("mle_loss: empty batch");
  Tensor total;
  for (std::size_t b = 0; b < log_probs.size(); ++b) {
    const Tensor& lp = log_probs[b];
    const auto& y = batch.targets[b];
    if (lp.rank() != 2 || lp.dim(0) != y.size()) {
      throw DimensionError("mle_loss: sample " + std::to_string(b) + " has log-probs " +
                           shape_to_string(lp.shape()) + " for " + std::to_string(y.size()) + " targets");
    }
    for (std::size_t t = 0; t < y.size(); ++t) {
      if (y[t] == batch.pad) continue;
      if (y[t] < 0 || static_cast<std::size_t>(y[t]) >= lp.dim(1)) {
        throw VocabularyError("mle_loss: target id " + std::to_string(y[t]) + " outside vocabulary");
      }
      Tensor term = index(row(lp, t), static_cast<std::size_t>(y[t]));
      total = total.defined() ? add(total, term) : term;
    }
  }
  if (!total.defined()) return Tensor::scalar(0.0);
  return scale(total, -1.0 / static_cast<double>(log_probs.size()));
}

// ---------------------------------------------------------------------------

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 1) {
    throw DimensionError("cosine_similarity: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  Tensor norms = mul(sqrt(sum(mul(a, a))), sqrt(sum(mul(b, b))));
  return div(sum(mul(a, b)), norms);
}

ContrastiveEncoder ContrastiveEncoder::create(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim,
                                              std::size_t image_dim, std::size_t joint_dim, Rng& rng,
                                              double margin) {
  ContrastiveEncoder e;
  e.embedding = Embedding::create(vocab_size, embed_dim, rng);
  e.lstm = LstmCell::create(embed_dim, hidden_dim, rng);
  e.W_v = Linear::create(image_dim, joint_dim, false, rng);
  e.W_c = Linear::create(hidden_dim, joint_dim, false, rng);
  e.margin = margin;
  return e;
}

Tensor ContrastiveEncoder::encode_caption(const std::vector<int>& ids) const {
  if (ids.empty()) throw ContractError("contrastive encoder: empty caption");
  Tensor h = Tensor::zeros({lstm.hidden_dim()});
  Tensor m = Tensor::zeros({lstm.hidden_dim()});
  for (int id : ids) {
    LstmStep s = lstm_step(lstm, embed_one(embedding, id), h, m);
    h = s.h;
    m = s.m;
  }
  return h;
}

Tensor ContrastiveEncoder::similarity(const Tensor& image, const std::vector<int>& caption) const {
  return cosine_similarity(W_v.forward(image), W_c.forward(encode_caption(caption)));
}

ParameterList ContrastiveEncoder::parameters() const {
  ParameterList p;
  append_prefixed(p, "embed/", embedding.parameters());
  append_prefixed(p, "lstm/", lstm.parameters());
  append_prefixed(p, "W_v/", W_v.parameters());
  append_prefixed(p, "W_c/", W_c.parameters());
  return p;
}

Tensor contrastive_loss_from_similarities(const std::vector<std::vector<Tensor>>& S, double margin) {
  const std::size_t B = S.size();
  if (B < 2) throw ContractError("contrastive_loss: need at least two pairs for in-batch negatives");
  for (const auto& row_i : S) {
    if (row_i.size() != B) throw DimensionError("contrastive_loss: similarity matrix is not square");
  }
  Tensor total;
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<Tensor> neg_captions, neg_images;
    for (std::size_t j = 0; j < B; ++j) {
      if (j == i) continue;
      neg_captions.push_back(S[i][j]);
      neg_images.push_back(S[j][i]);
    }
    Tensor hinge_c = relu(add_scalar(sub(max_all(vector_of(neg_captions)), S[i][i]), margin));
    Tensor hinge_x = relu(add_scalar(sub(max_all(vector_of(neg_images)), S[i][i]), margin));
    Tensor pair = add(hinge_c, hinge_x);
    total = total.defined() ? add(total, pair) : pair;
  }
  return scale(total, 1.0 / static_cast<double>(B));
}

Tensor contrastive_loss(const ContrastiveEncoder& encoder, const std::vector<Tensor>& images,
                        const std::vector<std::vector<int>>& captions) {
  if (images.size() != captions.size()) {
    throw DimensionError("contrastive_loss: " + std::to_string(images.size()) + " images for " +
                         std::to_string(captions.size()) + " captions");
  }
  if (images.size() < 2) throw ContractError("contrastive_loss: need at least two pairs for in-batch negatives");
  std::vector<Tensor> v, c;
  for (const auto& x : images) v.push_back(encoder.W_v.forward(x));
  for (const auto& ids : captions) c.push_back(encoder.W_c.forward(encoder.encode_caption(ids)));
  std::vector<std::vector<Tensor>> S(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t j = 0; j < captions.size(); ++j) S[i].push_back(cosine_similarity(v[i], c[j]));
  }
  return contrastive_loss_from_similarities(S, encoder.margin);
}

// ---------------------------------------------------------------------------

CiderReward::CiderReward(const std::vector<std::vector<std::vector<int>>>& references) {
  std::vector<std::vector<Tokens>> refs;
  refs.reserve(references.size());
  for (const auto& sample : references) {
    std::vector<Tokens> r;
    for (const auto& ids : sample) r.push_back(ids_as_tokens(ids));
    refs.push_back(std::move(r));
  }
  scorer_ = std::make_shared<CiderScorer>(std::move(refs));
}

double CiderReward::operator()(std::size_t sample, const std::vector<int>& tokens) const {
  return scorer_->score(sample, ids_as_tokens(tokens));
}

RewardStep reward_gradient_step(const Decoder& decoder, const FeatureSet& features, const RewardFn& reward,
                                Rng& rng, const DecodeOptions& options, double scale_factor) {
  if (!reward) throw ContractError("reward_gradient_step: no reward function");
  if (options.max_len == 0) throw ContractError("reward_gradient_step: max_len must be at least 1");
  RewardStep out;
  std::vector<int> sampled;
  Tensor log_prob_sum;
  DecoderState state = decoder.init_state(features);
  int prev = options.bos;
  for (std::size_t t = 0; t < options.max_len; ++t) {
    StepResult r = decoder.step(state, prev, features);
    std::vector<double> weights = r.log_probs.to_vector();
    for (std::size_t w = 0; w < weights.size(); ++w) {
      const bool banned =
          std::find(options.banned.begin(), options.banned.end(), static_cast<int>(w)) != options.banned.end();
      weights[w] = banned ? 0.0 : std::exp(weights[w]);
    }
    const int token = static_cast<int>(rng.categorical(weights));
    Tensor term = index(r.log_probs, static_cast<std::size_t>(token));
    log_prob_sum = log_prob_sum.defined() ? add(log_prob_sum, term) : term;
    sampled.push_back(token);
    if (token == options.eos) break;
    state = std::move(r.state);
    prev = token;
  }
  Generation greedy = greedy_decode(decoder, features, options);

  out.sample = sampled;
  if (!out.sample.empty() && out.sample.back() == options.eos) out.sample.pop_back();
  out.baseline = greedy.tokens;
  out.sample_reward = reward(out.sample);
  out.baseline_reward = reward(out.baseline);
  out.advantage = out.sample_reward - out.baseline_reward;
  if (out.advantage != 0.0 && log_prob_sum.on_tape()) {
    backward(scale(log_prob_sum, -out.advantage * scale_factor));
  }
  Tape::current().clear();
  return out;
}

// ---------------------------------------------------------------------------

void clip_gradients(const ParameterList& params, double threshold) {
  if (!(threshold > 0)) throw ContractError("clip_gradients: threshold must be positive");
  for (const auto& p : params) {
    Tensor t = p.tensor;
    if (!t.has_grad()) continue;
    for (double& g : t.mutable_grad()) g = std::clamp(g, -threshold, threshold);
  }
}

void sgd_update(const ParameterList& params, double lr) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto x = t.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr * g[i];
  }
}

void adadelta_update(const ParameterList& params, AdadeltaState& state, double rho, double eps, double lr) {
  for_each_entry(params, state.mean_sq_grad, state.mean_sq_update, "adadelta",
                 [&](double& x, double g, double& eg, double& ex) {
                   eg = rho * eg + (1 - rho) * g * g;
                   const double delta = -std::sqrt(ex + eps) / std::sqrt(eg + eps) * g;
                   ex = rho * ex + (1 - rho) * delta * delta;
                   x += lr * delta;
                 });
}

double scheduled_lr(const AdamOptions& o, std::size_t epoch) {
  const std::size_t every = std::max<std::size_t>(o.decay_every, 1);
  return o.lr * std::pow(o.decay, static_cast<double>(epoch / every));
}

void adam_update(const ParameterList& params, AdamState& state, double lr, const AdamOptions& o) {
  ++state.t;
  const double c1 = 1 - std::pow(o.beta1, static_cast<double>(state.t));
  const double c2 = 1 - std::pow(o.beta2, static_cast<double>(state.t));
  for_each_entry(params, state.m, state.v, "adam", [&](double& x, double g, double& m, double& v) {
    m = o.beta1 * m + (1 - o.beta1) * g;
    v = o.beta2 * v + (1 - o.beta2) * g * g;
    x -= lr * (m / c1) / (std::sqrt(v / c2) + o.eps);
  });
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adadelta") return OptimizerKind::adadelta;
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::adadelta: return "adadelta";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::sgd: return "sgd";
  }
  return "unknown";
}

Optimizer::Optimizer(OptimizerKind kind, double lr, AdamOptions adam) : kind_(kind), lr_(lr), adam_(adam) {
  adam_.lr = lr;
}

double Optimizer::learning_rate(std::size_t epoch) const {
  return kind_ == OptimizerKind::adam ? scheduled_lr(adam_, epoch) : lr_;
}

void Optimizer::step(const ParameterList& params, std::size_t epoch) {
  switch (kind_) {
    case OptimizerKind::adadelta: adadelta_update(params, adadelta_state_, 0.95, 1e-6, lr_); break;
    case OptimizerKind::adam: adam_update(params, adam_state_, learning_rate(epoch), adam_); break;
    case OptimizerKind::sgd: sgd_update(params, lr_); break;
  }
}

ParameterList Optimizer::state_records(const ParameterList& params) const {
  ParameterList out;
  auto dump = [&](const std::string& prefix, const std::vector<std::vector<double>>& buffers) {
    for (std::size_t k = 0; k < buffers.size() && k < params.size(); ++k) {
      out.push_back({prefix + params[k].name, Tensor::from(params[k].tensor.shape(), buffers[k])});
    }
  };
  if (kind_ == OptimizerKind::adadelta) {
    dump("state/optim/adadelta/g/", adadelta_state_.mean_sq_grad);
    dump("state/optim/adadelta/u/", adadelta_state_.mean_sq_update);
  } else if (kind_ == OptimizerKind::adam) {
    dump("state/optim/adam/m/", adam_state_.m);
    dump("state/optim/adam/v/", adam_state_.v);
    out.push_back({"state/optim/adam/t", Tensor::scalar(static_cast<double>(adam_state_.t))});
  }
  return out;
}

void Optimizer::load_state(const ParameterList& records, const ParameterList& params) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& r : records) by_name[r.name] = &r.tensor;
  auto load = [&](const std::string& prefix, std::vector<std::vector<double>>& buffers) {
    buffers.clear();
    for (const auto& p : params) {
      auto it = by_name.find(prefix + p.name);
      if (it == by_name.end()) {
        buffers.clear();
        return;
      }
      if (it->second->numel() != p.tensor.numel()) {
        throw FormatError("optimizer state '" + prefix + p.name + "' does not match the parameter shape");
      }
      buffers.push_back(it->second->to_vector());
    }
  };
  if (kind_ == OptimizerKind::adadelta) {
    load("state/optim/adadelta/g/", adadelta_state_.mean_sq_grad);
    load("state/optim/adadelta/u/", adadelta_state_.mean_sq_update);
  } else if (kind_ == OptimizerKind::adam) {
    load("state/optim/adam/m/", adam_state_.m);
    load("state/optim/adam/v/", adam_state_.v);
    auto it = by_name.find("state/optim/adam/t");
    adam_state_.t = it == by_name.end() ? 0 : static_cast<std::uint64_t>(it->second->item());
  }
}

// ---------------------------------------------------------------------------

TrainConfig TrainConfig::from_key_values(const KeyValues& values) {
  TrainConfig c;
  c.model = DecoderConfig::parse(values);
  auto get = [&](const char* key) -> const std::string* {
    auto it = values.find(key);
    return it == values.end() ? nullptr : &it->second;
  };
  auto as_size = [](const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const long long n = std::stoll(v, &pos);
      if (pos != v.size() || n < 0) throw std::invalid_argument(v);
      return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
  };
  auto as_double = [](const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
  };
  if (auto v = get("dataset")) c.dataset = *v;
  if (auto v = get("output_dir")) c.output_dir = *v;
  if (auto v = get("vocab")) c.vocab = fs::path(*v);
  if (auto v = get("train_split")) c.train_split = *v;
  if (auto v = get("val_split")) c.val_split = *v;
  if (auto v = get("epochs")) c.epochs = as_size("epochs", *v);
  if (auto v = get("patience")) c.patience = as_size("patience", *v);
  if (auto v = get("batch_size")) c.batch_size = as_size("batch_size", *v);
  if (auto v = get("optimizer")) {
    c.optimizer = parse_optimizer_kind(*v);
    if (c.optimizer == OptimizerKind::adam && !get("lr")) c.lr = 5e-4;
    if (c.optimizer == OptimizerKind::sgd && !get("lr")) c.lr = 0.1;
  }
  if (auto v = get("lr")) c.lr = as_double("lr", *v);
  if (auto v = get("lr_decay")) c.adam.decay = as_double("lr_decay", *v);
  if (auto v = get("lr_decay_every")) c.adam.decay_every = as_size("lr_decay_every", *v);
  if (auto v = get("clip")) c.clip = as_double("clip", *v);
  if (auto v = get("train_seed")) c.seed = as_size("train_seed", *v);
  if (auto v = get("max_caption_words")) c.max_caption_words = as_size("max_caption_words", *v);
  if (auto v = get("max_len")) c.max_len = as_size("max_len", *v);
  if (auto v = get("early_stop_metric")) {
    if (*v != "cider" && *v != "bleu4" && *v != "rougeL" && *v != "loss") {
      throw ConfigError("config: early_stop_metric must be cider, bleu4, rougeL or loss");
    }
    c.early_stop_metric = *v;
  }
  if (auto v = get("rl_epochs")) c.rl_epochs = as_size("rl_epochs", *v);
  if (auto v = get("rl_lr")) c.rl_lr = as_double("rl_lr", *v);
  if (auto v = get("contrastive_epochs")) c.contrastive_epochs = as_size("contrastive_epochs", *v);
  if (auto v = get("contrastive_dim")) c.contrastive_dim = as_size("contrastive_dim", *v);
  if (auto v = get("resume")) c.resume = *v == "true" || *v == "1" || *v == "yes";
  if (auto v = get("tokenizer")) c.tokenizer = parse_tokenizer_mode(*v);
  if (c.batch_size == 0) throw ConfigError("config: batch_size must be positive");
  return c;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << model.to_text() << "dataset = " << dataset.string() << '\n'
     << "output_dir = " << output_dir.string() << '\n';
  if (vocab) os << "vocab = " << vocab->string() << '\n';
  os << "train_split = " << train_split << '\n'
     << "val_split = " << val_split << '\n'
     << "epochs = " << epochs << '\n'
     << "patience = " << patience << '\n'
     << "batch_size = " << batch_size << '\n'
     << "optimizer = " << to_string(optimizer) << '\n'
     << "lr = " << format_double(lr) << '\n'
     << "lr_decay = " << format_double(adam.decay) << '\n'
     << "lr_decay_every = " << adam.decay_every << '\n'
     << "clip = " << format_double(clip) << '\n'
     << "train_seed = " << seed << '\n'
     << "max_caption_words = " << max_caption_words << '\n'
     << "max_len = " << max_len << '\n'
     << "early_stop_metric = " << early_stop_metric << '\n'
     << "rl_epochs = " << rl_epochs << '\n'
     << "rl_lr = " << format_double(rl_lr) << '\n'
     << "contrastive_epochs = " << contrastive_epochs << '\n'
     << "contrastive_dim = " << contrastive_dim << '\n'
     << "tokenizer = " << (tokenizer == TokenizerMode::whitespace ? "whitespace" : "strip_punctuation") << '\n';
  return os.str();
}

std::string EpochLog::to_json(const std::string& metric_name) const {
  nlohmann::json j{{"epoch", epoch},     {"stage", stage},         {"loss", loss},
                   {"val_metric", val_metric}, {"metric", metric_name}, {"lr", lr},
                   {"wall_time", wall_time},   {"improved", improved}};
  return j.dump();
}

bool EarlyStopping::update(double score, std::size_t epoch) {
  if (!seen || score > best) {
    seen = true;
    best = score;
    best_epoch = epoch;
    stagnant = 0;
    return true;
  }
  ++stagnant;
  return false;
}

// ---------------------------------------------------------------------------

double train_mle_epoch(Decoder& decoder, Optimizer& optimizer, const std::vector<Sample>& samples,
                       std::size_t batch_size, double clip, std::uint64_t seed, std::size_t epoch) {
  if (batch_size == 0) throw ContractError("train: batch size must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> items;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    for (std::size_t c = 0; c < samples[s].captions.size(); ++c) items.emplace_back(s, c);
  }
  if (items.empty()) throw EmptyInputError("train: no training captions");
  Rng shuffle_rng(derive_seed(seed, epoch, 1));
  std::shuffle(items.begin(), items.end(), shuffle_rng.engine());

  const ParameterList params = decoder.parameters();
  double total = 0;
  for (std::size_t begin = 0; begin < items.size(); begin += batch_size) {
    const std::size_t end = std::min(items.size(), begin + batch_size);
    zero_grads(params);
    for (std::size_t k = begin; k < end; ++k) {
      const auto& [s, c] = items[k];
      decoder.set_training(true, derive_seed(seed, epoch, 2, k));
      Tape::current().clear();
      Tensor objective = decoder.caption_objective(samples[s].features, samples[s].captions[c]);
      total += objective.item();
      backward(objective);
      Tape::current().clear();
    }
    const double inv = 1.0 / static_cast<double>(end - begin);
    for (const auto& p : params) {
      Tensor t = p.tensor;
      if (!t.has_grad()) continue;
      for (double& g : t.mutable_grad()) g *= inv;
    }
    if (clip > 0) clip_gradients(params, clip);
    optimizer.step(params, epoch);
  }
  decoder.set_training(false);
  return total / static_cast<double>(items.size());
}

MetricScores evaluate_samples(const Decoder& decoder, const std::vector<Sample>& samples, const Vocabulary& vocab,
                              std::size_t max_len) {
  DecodeOptions options;
  options.max_len = max_len == 0 ? default_max_len(decoder.kind()) : max_len;
  TokenizedCorpus corpus;
  for (const auto& s : samples) {
    Generation g = greedy_decode(decoder, s.features, options);
    corpus.push_back({vocab.decode(g.tokens), s.references});
  }
  return evaluate_corpus(corpus);
}

ContrastiveEncoder train_contrastive_encoder(const std::vector<Sample>& samples, std::size_t vocab_size,
                                             std::size_t image_dim, std::size_t joint_dim, std::size_t epochs,
                                             std::size_t batch_size, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xC0, 1));
  ContrastiveEncoder enc = ContrastiveEncoder::create(vocab_size, 64, 64, image_dim, joint_dim, rng);
  if (samples.size() < 2) return enc;
  const ParameterList params = enc.parameters();
  AdamState state;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(seed, 0xC0, 2, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    for (std::size_t begin = 0; begin + 1 < order.size(); begin += batch_size) {
      const std::size_t end = std::min(order.size(), begin + std::max<std::size_t>(batch_size, 2));
      if (end - begin < 2) break;
      std::vector<Tensor> images;
      std::vector<std::vector<int>> captions;
      for (std::size_t k = begin; k < end; ++k) {
        const Sample& s = samples[order[k]];
        images.push_back(image_feature(s.features));
        captions.push_back(s.captions.front());
      }
      zero_grads(params);
      Tape::current().clear();
      backward(contrastive_loss(enc, images, captions));
      Tape::current().clear();
      adam_update(params, state, 5e-4);
    }
  }
  return enc;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig config, std::vector<Sample> train, std::vector<Sample> val, Vocabulary vocab)
    : config_(std::move(config)),
      train_(std::move(train)),
      val_(std::move(val)),
      vocab_(std::move(vocab)),
      optimizer_(config_.optimizer, config_.lr, config_.adam) {
  if (train_.empty()) throw EmptyInputError("train: the training split is empty");
  if (val_.empty()) val_ = train_;
  if (config_.model.vocab_size == 0) config_.model.vocab_size = vocab_.size();
  if (config_.model.vocab_size != vocab_.size()) {
    throw ConfigError("train: vocab_size " + std::to_string(config_.model.vocab_size) + " disagrees with the " +
                      std::to_string(vocab_.size()) + "-word vocabulary");
  }
  decoder_ = build_variant(config_.model);
}

Trainer Trainer::from_config(const TrainConfig& config) {
  if (config.dataset.empty()) throw ConfigError("train: no dataset path configured");
  Dataset data = load_dataset(config.dataset);
  const fs::path vocab_path = config.vocab.value_or(config.dataset / "vocab.txt");
  if (!fs::exists(vocab_path)) throw ConfigError("train: vocabulary " + vocab_path.string() + " does not exist");
  Vocabulary vocab = Vocabulary::load(vocab_path);
  LoadOptions load;
  load.max_caption_words = config.max_caption_words;
  load.tokenizer = config.tokenizer;
  auto train = load_split(data, config.train_split, vocab, load);
  std::vector<Sample> val;
  if (data.has_split(config.val_split)) val = load_split(data, config.val_split, vocab, load);
  return Trainer(config, std::move(train), std::move(val), std::move(vocab));
}

double Trainer::validation_score() {
  if (config_.early_stop_metric == "loss") {
    NoGradGuard no_grad;
    double total = 0;
    std::size_t n = 0;
    for (const auto& s : val_) {
      for (const auto& c : s.captions) {
        total += decoder_->caption_objective(s.features, c).item();
        ++n;
      }
    }
    return n ? -total / static_cast<double>(n) : 0.0;
  }
  const MetricScores m = evaluate_samples(*decoder_, val_, vocab_, config_.max_len);
  if (config_.early_stop_metric == "bleu4") return m.bleu[3];
  if (config_.early_stop_metric == "rougeL") return m.rouge_l;
  return m.cider;
}

void Trainer::save_last(std::size_t next_epoch, const EarlyStopping& stopping) const {
  std::ostringstream header;
  header << "state.next_epoch = " << next_epoch << '\n'
         << "state.best = " << format_double(stopping.best) << '\n'
         << "state.best_epoch = " << stopping.best_epoch << '\n'
         << "state.stagnant = " << stopping.stagnant << '\n'
         << "state.seen = " << (stopping.seen ? 1 : 0) << '\n';
  save_checkpoint(config_.output_dir / "last.ckpt",
                  make_checkpoint(*decoder_, optimizer_.state_records(decoder_->parameters()), header.str()));
}

std::size_t Trainer::resume(EarlyStopping& stopping) {
  const fs::path path = config_.output_dir / "last.ckpt";
  if (!fs::exists(path)) return 0;
  Checkpoint c = load_checkpoint(path);
  ParameterList params = decoder_->parameters();
  copy_matching(c.records, params);
  optimizer_.load_state(c.records, params);
  const KeyValues kv = parse_key_values(c.header);
  auto num = [&](const char* key) { return kv.count(key) ? std::stod(kv.at(key)) : 0.0; };
  stopping.best = num("state.best");
  stopping.best_epoch = static_cast<std::size_t>(num("state.best_epoch"));
  stopping.stagnant = static_cast<std::size_t>(num("state.stagnant"));
  stopping.seen = num("state.seen") != 0;
  return static_cast<std::size_t>(num("state.next_epoch"));
}

double Trainer::run_rl_epoch(std::size_t epoch, Optimizer& optimizer, const CiderReward& reward,
                             const ContrastiveEncoder* encoder) {
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(config_.seed, epoch, 11));
  std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
  DecodeOptions options;
  options.max_len = config_.max_len == 0 ? default_max_len(decoder_->kind()) : config_.max_len;
  const ParameterList params = decoder_->parameters();
  double total_reward = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_size) {
    const std::size_t end = std::min(order.size(), begin + config_.batch_size);
    zero_grads(params);
    for (std::size_t k = begin; k < end; ++k) {
      const std::size_t i = order[k];
      RewardFn fn = [&](const std::vector<int>& tokens) {
        double r = reward(i, tokens);
        if (encoder && end - begin >= 2 && !tokens.empty()) {
          NoGradGuard no_grad;
          const Tensor x = image_feature(train_[i].features);
          std::vector<std::vector<Tensor>> S(end - begin, std::vector<Tensor>(end - begin));
          // Row/column of the sampled caption against in-batch negatives.
          std::vector<int> candidate{kBos};
          candidate.insert(candidate.end(), tokens.begin(), tokens.end());
          for (std::size_t a = begin; a < end; ++a) {
            for (std::size_t b = begin; b < end; ++b) {
              const Tensor& img = a == k ? x : image_feature(train_[order[a]].features);
              const auto& cap = b == k ? candidate : train_[order[b]].captions.front();
              S[a - begin][b - begin] = encoder->similarity(img, cap);
            }
          }
          // Only the sampled pair's hinges enter its reward.
          const std::size_t self = k - begin;
          double worst_c = -2, worst_x = -2;
          for (std::size_t j = 0; j < S.size(); ++j) {
            if (j == self) continue;
            worst_c = std::max(worst_c, S[self][j].item());
            worst_x = std::max(worst_x, S[j][self].item());
          }
          const double pos = S[self][self].item();
          r -= std::max(0.0, encoder->margin + worst_c - pos) + std::max(0.0, encoder->margin + worst_x - pos);
        }
        return r;
      };
      decoder_->set_training(true, derive_seed(config_.seed, epoch, 12, k));
      Rng rng(derive_seed(config_.seed, epoch, 13, k));
      RewardStep step = reward_gradient_step(*decoder_, train_[i].features, fn, rng, options,
                                             1.0 / static_cast<double>(end - begin));
      total_reward += step.sample_reward;
    }
    if (config_.clip > 0) clip_gradients(params, config_.clip);
    optimizer.step(params, epoch);
  }
  decoder_->set_training(false);
  return total_reward / static_cast<double>(order.size());
}

TrainResult Trainer::run() {
  fs::create_directories(config_.output_dir);
  {
    std::ofstream cfg(config_.output_dir / "config.txt");
    cfg << config_.to_text();
  }
  EarlyStopping stopping;
  stopping.patience = config_.patience;
  std::size_t start = config_.resume ? resume(stopping) : 0;

  TrainResult result;
  result.best_checkpoint = config_.output_dir / "best.ckpt";
  std::ofstream log(config_.output_dir / "train_log.jsonl", start > 0 ? std::ios::app : std::ios::trunc);
  const std::string metric = config_.early_stop_metric;

  auto record = [&](EpochLog e, double score) {
    e.val_metric = score;
    e.improved = stopping.update(score, e.epoch);
    if (e.improved) save_checkpoint(result.best_checkpoint, make_checkpoint(*decoder_));
    log << e.to_json(metric) << '\n';
    log.flush();
    result.history.push_back(e);
    if (on_epoch_) on_epoch_(e);
  };

  if (stopping.should_stop()) start = config_.epochs;
  for (std::size_t epoch = start; epoch < config_.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochLog e;
    e.epoch = epoch;
    e.stage = "mle";
    e.lr = optimizer_.learning_rate(epoch);
    e.loss = train_mle_epoch(*decoder_, optimizer_, train_, config_.batch_size, config_.clip, config_.seed, epoch);
    const double score = validation_score();
    e.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record(e, score);
    save_last(epoch + 1, stopping);
    if (stopping.should_stop()) {
      result.early_stopped = true;
      break;
    }
  }

  if (config_.rl_epochs > 0) {
    if (fs::exists(result.best_checkpoint)) {
      ParameterList params = decoder_->parameters();
      copy_matching(load_checkpoint(result.best_checkpoint).records, params);
    }
    std::vector<std::vector<std::vector<int>>> refs;
    for (const auto& s : train_) refs.push_back(s.captions);
    CiderReward reward(refs);
    std::optional<ContrastiveEncoder> encoder;
    if (decoder_->kind() == DecoderKind::da && config_.contrastive_epochs > 0) {
      encoder = train_contrastive_encoder(train_, vocab_.size(), config_.model.feature_dim, config_.contrastive_dim,
                                          config_.contrastive_epochs, config_.batch_size, config_.seed);
    }
    Optimizer rl_optimizer(OptimizerKind::adam, config_.rl_lr, AdamOptions{});
    stopping.stagnant = 0;
    for (std::size_t k = 0; k < config_.rl_epochs; ++k) {
      const std::size_t epoch = config_.epochs + k;
      const auto t0 = std::chrono::steady_clock::now();
      EpochLog e;
      e.epoch = epoch;
      e.stage = "rl";
      e.lr = rl_optimizer.learning_rate(k);
      e.loss = -run_rl_epoch(epoch, rl_optimizer, reward, encoder ? &*encoder : nullptr);
      const double score = validation_score();
      e.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      record(e, score);
      if (stopping.should_stop()) break;
    }
  }
  result.best_epoch = stopping.best_epoch;
  result.best_metric = stopping.best;
  return result;
}

}  // namespace hlstmat
