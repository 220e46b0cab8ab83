#include "hlstmat/decoders.hpp"

#include <sstream>

#include "hlstmat/da_decoder.hpp"
#include "hlstmat/errors.hpp"

namespace hlstmat {

namespace {

constexpr std::pair<DecoderKind, const char*> kKindNames[] = {
    {DecoderKind::basic, "basic"},
    {DecoderKind::hlstmat_temporal, "hlstmat_temporal"},
    {DecoderKind::hlstmat_spatial, "hlstmat_spatial"},
    {DecoderKind::conf, "conf"},
    {DecoderKind::para, "para"},
    {DecoderKind::two_stream, "two_stream"},
    {DecoderKind::da, "da"},
};

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

Tensor output_log_probs(const Linear& out_hidden, const Linear& out_vocab, const Tensor& h,
                        const Tensor& context) {
  return log_softmax(out_vocab.forward(tanh(out_hidden.forward(concat({h, context})))));
}

const Tensor& require_matrix(const Tensor& t, const char* what, std::size_t dim) {
  if (!t.defined() || t.numel() == 0) {
    throw EmptyInputError(std::string("decoder: no ") + what + " features");
  }
  if (t.rank() != 2 || t.dim(0) == 0) {
    throw EmptyInputError(std::string("decoder: ") + what + " features must be a non-empty matrix, got " +
                          shape_to_string(t.shape()));
  }
  if (t.dim(1) != dim) {
    throw DimensionError(std::string("decoder: ") + what + " features have dimension " +
                         std::to_string(t.dim(1)) + ", expected " + std::to_string(dim));
  }
  return t;
}

}  // namespace

std::string to_string(DecoderKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

DecoderKind parse_decoder_kind(const std::string& name) {
  for (const auto& [k, n] : kKindNames) {
    if (name == n) return k;
  }
  if (name == "hlstmat" || name == "temporal") return DecoderKind::hlstmat_temporal;
  if (name == "spatial") return DecoderKind::hlstmat_spatial;
  throw ConfigError("unknown decoder variant '" + name + "'");
}

void DecoderConfig::validate() const {
  auto positive = [](const char* key, std::size_t v) {
    if (v == 0) throw ConfigError(std::string("config: ") + key + " must be positive");
  };
  positive("vocab_size", vocab_size);
  positive("embed_dim", embed_dim);
  positive("hidden_dim", hidden_dim);
  positive("attn_dim", attn_dim);
  positive("feature_dim", feature_dim);
  if (kind == DecoderKind::conf || kind == DecoderKind::para || kind == DecoderKind::two_stream) {
    positive("motion_dim", motion_dim);
  }
  if (!(dropout >= 0.0) || dropout >= 1.0) throw ConfigError("config: dropout must lie in [0, 1)");
  if (da_aux_weight < 0.0) throw ConfigError("config: da_aux_weight must be non-negative");
  if (kind == DecoderKind::da && !da_second_pass && !da_first_pass_head) {
    throw ConfigError("config: a DA decoder without the second pass needs the first-pass head");
  }
}

std::string DecoderConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "variant = " << to_string(kind) << '\n'
     << "vocab_size = " << vocab_size << '\n'
     << "embed_dim = " << embed_dim << '\n'
     << "hidden_dim = " << hidden_dim << '\n'
     << "attn_dim = " << attn_dim << '\n'
     << "feature_dim = " << feature_dim << '\n'
     << "motion_dim = " << motion_dim << '\n'
     << "adaptive = " << (adaptive ? "true" : "false") << '\n'
     << "output_hidden = " << (output_hidden == OutputHidden::bottom ? "bottom" : "top") << '\n'
     << "dropout = " << dropout << '\n'
     << "seed = " << seed << '\n'
     << "joint_two_stream = " << (joint_two_stream ? "true" : "false") << '\n'
     << "da_second_pass = " << (da_second_pass ? "true" : "false") << '\n'
     << "da_first_pass_head = " << (da_first_pass_head ? "true" : "false") << '\n'
     << "da_aux_weight = " << da_aux_weight << '\n';
  return os.str();
}

DecoderConfig DecoderConfig::parse(const std::map<std::string, std::string>& values) {
  DecoderConfig c;
  for (const auto& [key, v] : values) {
    if (key == "variant") c.kind = parse_decoder_kind(v);
    else if (key == "vocab_size") c.vocab_size = parse_size(key, v);
    else if (key == "embed_dim") c.embed_dim = parse_size(key, v);
    else if (key == "hidden_dim") c.hidden_dim = parse_size(key, v);
    else if (key == "attn_dim") c.attn_dim = parse_size(key, v);
    else if (key == "feature_dim") c.feature_dim = parse_size(key, v);
    else if (key == "motion_dim") c.motion_dim = parse_size(key, v);
    else if (key == "adaptive") c.adaptive = parse_bool(key, v);
    else if (key == "output_hidden") {
      if (v == "bottom") c.output_hidden = OutputHidden::bottom;
      else if (v == "top") c.output_hidden = OutputHidden::top;
      else throw ConfigError("config: output_hidden must be bottom or top, got '" + v + "'");
    } else if (key == "dropout") c.dropout = parse_double(key, v);
    else if (key == "seed") c.seed = parse_size(key, v);
    else if (key == "joint_two_stream") c.joint_two_stream = parse_bool(key, v);
    else if (key == "da_second_pass") c.da_second_pass = parse_bool(key, v);
    else if (key == "da_first_pass_head") c.da_first_pass_head = parse_bool(key, v);
    else if (key == "da_aux_weight") c.da_aux_weight = parse_double(key, v);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Decoder base

Decoder::Decoder(DecoderConfig config) : config_(std::move(config)) {}

void Decoder::set_training(bool training, std::uint64_t dropout_seed) {
  training_ = training;
  dropout_seed_ = dropout_seed;
}

void Decoder::check_token(int token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= config_.vocab_size) {
    throw VocabularyError("decoder: token id " + std::to_string(token) +
                          " outside vocabulary of " + std::to_string(config_.vocab_size));
  }
}

Tensor Decoder::apply_dropout(const Tensor& x, const DecoderState& state, unsigned site) const {
  return dropout(x, config_.dropout, training_, derive_seed(dropout_seed_, state.step, site));
}

Tensor Decoder::caption_objective(const FeatureSet& features, std::span<const int> caption) const {
  return caption_nll(*this, features, caption);
}

Tensor word_distribution(const StepResult& result) { return exp(result.log_probs); }

Tensor two_stream_fuse(const Tensor& p1, const Tensor& p2) {
  if (p1.shape() != p2.shape() || p1.rank() != 1) {
    throw DimensionError("two_stream_fuse: vocabulary mismatch " + shape_to_string(p1.shape()) +
                         " vs " + shape_to_string(p2.shape()));
  }
  return scale(add(p1, p2), 0.5);
}

namespace {

void check_caption(std::span<const int> caption) {
  if (caption.empty() || caption.front() != kBos) {
    throw ContractError("caption must start with BOS");
  }
  if (caption.size() < 2) throw ContractError("caption must contain at least one target token");
}

}  // namespace

Tensor forward_teacher_forced(const Decoder& decoder, const FeatureSet& features,
                              std::span<const int> caption, std::size_t padded_length) {
  check_caption(caption);
  const std::size_t steps = caption.size() - 1;
  const std::size_t rows = padded_length == 0 ? steps : padded_length - 1;
  if (rows < steps) {
    throw DimensionError("forward_teacher_forced: padded length " + std::to_string(padded_length) +
                         " shorter than caption of " + std::to_string(caption.size()));
  }
  std::vector<Tensor> out;
  out.reserve(rows);
  DecoderState state = decoder.init_state(features);
  for (std::size_t t = 0; t < steps; ++t) {
    StepResult r = decoder.step(state, caption[t], features);
    out.push_back(r.log_probs);
    state = std::move(r.state);
  }
  for (std::size_t t = steps; t < rows; ++t) out.push_back(Tensor::zeros({decoder.vocab_size()}));
  return stack_rows(out);
}

Tensor caption_nll(const Decoder& decoder, const FeatureSet& features, std::span<const int> caption) {
  check_caption(caption);
  DecoderState state = decoder.init_state(features);
  Tensor total;
  for (std::size_t t = 0; t + 1 < caption.size(); ++t) {
    StepResult r = decoder.step(state, caption[t], features);
    const int target = caption[t + 1];
    if (target < 0 || static_cast<std::size_t>(target) >= decoder.vocab_size()) {
      throw VocabularyError("caption_nll: target id " + std::to_string(target) + " outside vocabulary");
    }
    Tensor term = index(r.log_probs, static_cast<std::size_t>(target));
    total = total.defined() ? add(total, term) : term;
    state = std::move(r.state);
  }
  return neg(total);
}

// ---------------------------------------------------------------------------
// Basic LSTM

BasicLstmDecoder::BasicLstmDecoder(DecoderConfig config, Rng& rng) : Decoder(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  embedding = Embedding::create(c.vocab_size, c.embed_dim, rng);
  lstm = LstmCell::create(c.embed_dim + c.feature_dim, c.hidden_dim, rng);
  init_h = Linear::create(c.feature_dim, c.hidden_dim, false, rng);
  init_m = Linear::create(c.feature_dim, c.hidden_dim, false, rng);
  out_hidden = Linear::create(c.hidden_dim, c.hidden_dim, true, rng);
  out_vocab = Linear::create(c.hidden_dim, c.vocab_size, true, rng);
}

DecoderState BasicLstmDecoder::init_state(const FeatureSet& features) const {
  const Tensor& V = require_matrix(features.frames, "frame", config_.feature_dim);
  Tensor pooled = mean_pool(V);
  DecoderState s;
  s.layers.push_back({init_h.forward(pooled), init_m.forward(pooled)});
  s.cache.push_back(pooled);
  return s;
}

StepResult BasicLstmDecoder::step(const DecoderState& state, int token, const FeatureSet&) const {
  check_token(token);
  const Tensor y = concat({embed_one(embedding, token), state.cache.at(0)});
  LstmStep cell = lstm_step(lstm, y, state.layers.at(0).h, state.layers.at(0).m);
  const Tensor h = apply_dropout(cell.h, state, 0);
  StepResult r;
  r.log_probs = log_softmax(out_vocab.forward(tanh(out_hidden.forward(h))));
  r.state = state;
  r.state.layers[0] = {cell.h, cell.m};
  r.state.step = state.step + 1;
  r.trace.token = token;
  return r;
}

ParameterList BasicLstmDecoder::parameters() const {
  ParameterList out;
  append_prefixed(out, "embed/", embedding.parameters());
  append_prefixed(out, "lstm/", lstm.parameters());
  append_prefixed(out, "init_h/", init_h.parameters());
  append_prefixed(out, "init_m/", init_m.parameters());
  append_prefixed(out, "out_hidden/", out_hidden.parameters());
  append_prefixed(out, "out_vocab/", out_vocab.parameters());
  return out;
}

// ---------------------------------------------------------------------------
// hLSTMat

Tensor concat_frames_with_motion(const Tensor& frames, const Tensor& motion) {
  if (frames.rank() != 2 || motion.rank() != 2 || frames.dim(0) == 0 || motion.dim(0) == 0) {
    throw EmptyInputError("concat_frames_with_motion: need non-empty frame and motion matrices");
  }
  const std::size_t L = frames.dim(0), S = motion.dim(0);
  std::vector<Tensor> rows;
  rows.reserve(L);
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t seg = std::min(S - 1, (2 * l + 1) * S / (2 * L));
    rows.push_back(concat({row(frames, l), row(motion, seg)}));
  }
  return stack_rows(rows);
}

HlstmatDecoder::HlstmatDecoder(DecoderConfig config, FeatureSource source, Rng& rng)
    : Decoder(std::move(config)), source_(source) {
  config_.validate();
  const auto& c = config_;
  const std::size_t fd = source_dim();
  embedding = Embedding::create(c.vocab_size, c.embed_dim, rng);
  bottom = LstmCell::create(c.embed_dim, c.hidden_dim, rng);
  top = LstmCell::create(c.hidden_dim, c.hidden_dim, rng);
  attention = TemporalAttention::create(c.hidden_dim, fd, c.attn_dim, rng);
  if (c.adaptive) gate = AdaptiveGate::create(c.hidden_dim, 1, rng);
  init_h = Linear::create(fd, c.hidden_dim, false, rng);
  init_m = Linear::create(fd, c.hidden_dim, false, rng);
  if (fd != c.hidden_dim) context_proj = Linear::create(fd, c.hidden_dim, false, rng);
  out_hidden = Linear::create(2 * c.hidden_dim, c.hidden_dim, true, rng);
  out_vocab = Linear::create(c.hidden_dim, c.vocab_size, true, rng);
}

std::size_t HlstmatDecoder::source_dim() const {
  switch (source_) {
    case FeatureSource::frames:
    case FeatureSource::regions: return config_.feature_dim;
    case FeatureSource::motion: return config_.motion_dim;
    case FeatureSource::frames_with_motion: return config_.feature_dim + config_.motion_dim;
  }
  return config_.feature_dim;
}

Tensor HlstmatDecoder::source_features(const FeatureSet& features) const {
  switch (source_) {
    case FeatureSource::frames: return require_matrix(features.frames, "frame", config_.feature_dim);
    case FeatureSource::regions:
      return require_matrix(features.regions, "region", config_.feature_dim);
    case FeatureSource::motion: return require_matrix(features.motion, "motion", config_.motion_dim);
    case FeatureSource::frames_with_motion:
      return concat_frames_with_motion(
          require_matrix(features.frames, "frame", config_.feature_dim),
          require_matrix(features.motion, "motion", config_.motion_dim));
  }
  throw ConfigError("hlstmat: unknown feature source");
}

DecoderState HlstmatDecoder::init_state(const FeatureSet& features) const {
  Tensor V = source_features(features);
  Tensor pooled = mean_pool(V);
  DecoderState s;
  s.layers.push_back({init_h.forward(pooled), init_m.forward(pooled)});
  s.layers.push_back({Tensor::zeros({config_.hidden_dim}), Tensor::zeros({config_.hidden_dim})});
  s.cache.push_back(V);
  s.cache.push_back(project_features(attention, V));
  return s;
}

StepResult HlstmatDecoder::step(const DecoderState& state, int token, const FeatureSet&) const {
  check_token(token);
  const LayerState& lower = state.layers.at(0);
  const LayerState& upper = state.layers.at(1);
  LstmStep b = lstm_step(bottom, embed_one(embedding, token), lower.h, lower.m);
  const Tensor h_drop = apply_dropout(b.h, state, 0);
  LstmStep t = lstm_step(top, h_drop, upper.h, upper.m);
  const Tensor top_drop = apply_dropout(t.h, state, 1);

  Attended att = temporal_attend(attention, b.h, state.cache.at(0), state.cache.at(1));
  Tensor c = context_proj ? context_proj->forward(att.context) : att.context;
  StepResult r;
  Tensor mixed = c;
  if (gate || forced_beta) {
    Blend blend = adaptive_blend(gate ? *gate : AdaptiveGate{}, b.h, c, t.h, forced_beta);
    mixed = blend.context;
    if (trace_) r.trace.beta = {blend.beta.item()};
  }
  const Tensor& out_h = config_.output_hidden == OutputHidden::bottom ? h_drop : top_drop;
  r.log_probs = output_log_probs(out_hidden, out_vocab, out_h, mixed);
  r.state = state;
  r.state.layers[0] = {b.h, b.m};
  r.state.layers[1] = {t.h, t.m};
  r.state.step = state.step + 1;
  r.trace.token = token;
  if (trace_) r.trace.alphas.push_back(att.weights.to_vector());
  return r;
}

ParameterList HlstmatDecoder::parameters() const {
  ParameterList out;
  append_prefixed(out, "embed/", embedding.parameters());
  append_prefixed(out, "bottom/", bottom.parameters());
  append_prefixed(out, "top/", top.parameters());
  append_prefixed(out, "attention/", attention.parameters());
  if (gate) append_prefixed(out, "gate/", gate->parameters());
  append_prefixed(out, "init_h/", init_h.parameters());
  append_prefixed(out, "init_m/", init_m.parameters());
  if (context_proj) append_prefixed(out, "context_proj/", context_proj->parameters());
  append_prefixed(out, "out_hidden/", out_hidden.parameters());
  append_prefixed(out, "out_vocab/", out_vocab.parameters());
  return out;
}

// ---------------------------------------------------------------------------
// ParA

ParaDecoder::ParaDecoder(DecoderConfig config, Rng& rng) : Decoder(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  embedding = Embedding::create(c.vocab_size, c.embed_dim, rng);
  bottom = LstmCell::create(c.embed_dim, c.hidden_dim, rng);
  top = LstmCell::create(c.hidden_dim, c.hidden_dim, rng);
  appearance_attention = TemporalAttention::create(c.hidden_dim, c.feature_dim, c.attn_dim, rng);
  motion_attention = TemporalAttention::create(c.hidden_dim, c.motion_dim, c.attn_dim, rng);
  gate = AdaptiveGate::create(c.hidden_dim, 3, rng);
  init_h = Linear::create(c.feature_dim + c.motion_dim, c.hidden_dim, false, rng);
  init_m = Linear::create(c.feature_dim + c.motion_dim, c.hidden_dim, false, rng);
  if (c.feature_dim != c.hidden_dim) appearance_proj = Linear::create(c.feature_dim, c.hidden_dim, false, rng);
  if (c.motion_dim != c.hidden_dim) motion_proj = Linear::create(c.motion_dim, c.hidden_dim, false, rng);
  out_hidden = Linear::create(2 * c.hidden_dim, c.hidden_dim, true, rng);
  out_vocab = Linear::create(c.hidden_dim, c.vocab_size, true, rng);
}

DecoderState ParaDecoder::init_state(const FeatureSet& features) const {
  const Tensor& Vs = require_matrix(features.frames, "frame", config_.feature_dim);
  const Tensor& Vm = require_matrix(features.motion, "motion", config_.motion_dim);
  Tensor pooled = concat({mean_pool(Vs), mean_pool(Vm)});
  DecoderState s;
  s.layers.push_back({init_h.forward(pooled), init_m.forward(pooled)});
  s.layers.push_back({Tensor::zeros({config_.hidden_dim}), Tensor::zeros({config_.hidden_dim})});
  s.cache = {Vs, project_features(appearance_attention, Vs), Vm, project_features(motion_attention, Vm)};
  return s;
}

StepResult ParaDecoder::step(const DecoderState& state, int token, const FeatureSet&) const {
  check_token(token);
  const LayerState& lower = state.layers.at(0);
  const LayerState& upper = state.layers.at(1);
  LstmStep b = lstm_step(bottom, embed_one(embedding, token), lower.h, lower.m);
  const Tensor h_drop = apply_dropout(b.h, state, 0);
  LstmStep t = lstm_step(top, h_drop, upper.h, upper.m);
  const Tensor top_drop = apply_dropout(t.h, state, 1);

  Attended a1 = temporal_attend(appearance_attention, b.h, state.cache.at(0), state.cache.at(1));
  Attended a2 = temporal_attend(motion_attention, b.h, state.cache.at(2), state.cache.at(3));
  Tensor c1 = appearance_proj ? appearance_proj->forward(a1.context) : a1.context;
  Tensor c2 = motion_proj ? motion_proj->forward(a2.context) : a2.context;
  Blend blend = parallel_adaptive_blend(gate, b.h, c1, c2, t.h);

  StepResult r;
  const Tensor& out_h = config_.output_hidden == OutputHidden::bottom ? h_drop : top_drop;
  r.log_probs = output_log_probs(out_hidden, out_vocab, out_h, blend.context);
  r.state = state;
  r.state.layers[0] = {b.h, b.m};
  r.state.layers[1] = {t.h, t.m};
  r.state.step = state.step + 1;
  r.trace.token = token;
  if (trace_) {
    r.trace.alphas = {a1.weights.to_vector(), a2.weights.to_vector()};
    r.trace.beta = blend.beta.to_vector();
  }
  return r;
}

ParameterList ParaDecoder::parameters() const {
  ParameterList out;
  append_prefixed(out, "embed/", embedding.parameters());
  append_prefixed(out, "bottom/", bottom.parameters());
  append_prefixed(out, "top/", top.parameters());
  append_prefixed(out, "appearance_attention/", appearance_attention.parameters());
  append_prefixed(out, "motion_attention/", motion_attention.parameters());
  append_prefixed(out, "gate/", gate.parameters());
  append_prefixed(out, "init_h/", init_h.parameters());
  append_prefixed(out, "init_m/", init_m.parameters());
  if (appearance_proj) append_prefixed(out, "appearance_proj/", appearance_proj->parameters());
  if (motion_proj) append_prefixed(out, "motion_proj/", motion_proj->parameters());
  append_prefixed(out, "out_hidden/", out_hidden.parameters());
  append_prefixed(out, "out_vocab/", out_vocab.parameters());
  return out;
}

// ---------------------------------------------------------------------------
// Two-stream

TwoStreamDecoder::TwoStreamDecoder(DecoderConfig config, Rng& rng) : Decoder(std::move(config)) {
  config_.validate();
  DecoderConfig stream = config_;
  stream.kind = DecoderKind::hlstmat_temporal;
  appearance_ = std::make_unique<HlstmatDecoder>(stream, FeatureSource::frames, rng);
  motion_ = std::make_unique<HlstmatDecoder>(stream, FeatureSource::motion, rng);
}

DecoderState TwoStreamDecoder::init_state(const FeatureSet& features) const {
  DecoderState s;
  s.substates.push_back(appearance_->init_state(features));
  s.substates.push_back(motion_->init_state(features));
  return s;
}

StepResult TwoStreamDecoder::step(const DecoderState& state, int token, const FeatureSet& features) const {
  check_token(token);
  StepResult r1 = appearance_->step(state.substates.at(0), token, features);
  StepResult r2 = motion_->step(state.substates.at(1), token, features);
  StepResult r;
  r.log_probs = log(two_stream_fuse(exp(r1.log_probs), exp(r2.log_probs)));
  r.state.step = state.step + 1;
  r.state.substates = {std::move(r1.state), std::move(r2.state)};
  r.trace.token = token;
  if (trace_) {
    for (auto& a : r1.trace.alphas) r.trace.alphas.push_back(std::move(a));
    for (auto& a : r2.trace.alphas) r.trace.alphas.push_back(std::move(a));
    r.trace.beta = r1.trace.beta;
    r.trace.beta.insert(r.trace.beta.end(), r2.trace.beta.begin(), r2.trace.beta.end());
  }
  return r;
}

ParameterList TwoStreamDecoder::parameters() const {
  ParameterList out;
  append_prefixed(out, "appearance/", appearance_->parameters());
  append_prefixed(out, "motion/", motion_->parameters());
  return out;
}

Tensor TwoStreamDecoder::caption_objective(const FeatureSet& features, std::span<const int> caption) const {
  if (config_.joint_two_stream) return caption_nll(*this, features, caption);
  return add(appearance_->caption_objective(features, caption),
             motion_->caption_objective(features, caption));
}

void TwoStreamDecoder::set_training(bool training, std::uint64_t dropout_seed) {
  Decoder::set_training(training, dropout_seed);
  appearance_->set_training(training, derive_seed(dropout_seed, 1));
  motion_->set_training(training, derive_seed(dropout_seed, 2));
}

// ---------------------------------------------------------------------------

std::unique_ptr<Decoder> build_variant(DecoderKind kind, const DecoderConfig& config) {
  DecoderConfig c = config;
  c.kind = kind;
  c.validate();
  Rng rng(c.seed);
  switch (kind) {
    case DecoderKind::basic: return std::make_unique<BasicLstmDecoder>(c, rng);
    case DecoderKind::hlstmat_temporal:
      return std::make_unique<HlstmatDecoder>(c, FeatureSource::frames, rng);
    case DecoderKind::hlstmat_spatial:
      return std::make_unique<HlstmatDecoder>(c, FeatureSource::regions, rng);
    case DecoderKind::conf:
      return std::make_unique<HlstmatDecoder>(c, FeatureSource::frames_with_motion, rng);
    case DecoderKind::para: return std::make_unique<ParaDecoder>(c, rng);
    case DecoderKind::two_stream: return std::make_unique<TwoStreamDecoder>(c, rng);
    case DecoderKind::da: return std::make_unique<DaDecoder>(c, rng);
  }
  throw ConfigError("build_variant: unknown decoder kind");
}

std::unique_ptr<Decoder> build_variant(const DecoderConfig& config) {
  return build_variant(config.kind, config);
}

}  // namespace hlstmat
