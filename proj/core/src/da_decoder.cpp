#include "hlstmat/da_decoder.hpp"

#include "hlstmat/errors.hpp"

namespace hlstmat {

namespace {

// aux holds {h1~, v1} and, with the first-pass head, its log-probabilities.
constexpr std::size_t kAuxFirstLogProbs = 2;

// [1]-shaped score of the sentinel slot.
Tensor score_sentinel(const Linear& W_s, const Linear& W_h3, const Tensor& w_a, const Tensor& s,
                      const Tensor& h2) {
  return matmul(reshape(w_a, {1, w_a.numel()}), tanh(add(W_s.forward(s), W_h3.forward(h2))));
}

}  // namespace

DaDecoder::DaDecoder(DecoderConfig config, Rng& rng) : Decoder(std::move(config)) {
  config_.kind = DecoderKind::da;
  config_.validate();
  const auto& c = config_;
  const std::size_t E = c.embed_dim, H = c.hidden_dim, d = c.feature_dim, A = c.attn_dim;
  embedding = Embedding::create(c.vocab_size, E, rng);
  lstm1 = LstmCell::create(d + (c.da_second_pass ? H : 0) + E, H, rng);
  W_rd = Linear::create(E + H, H, false, rng);
  attn1 = TemporalAttention::create(H, d, A, rng);
  if (c.da_second_pass) {
    lstm2 = LstmCell::create(d + H + d, H, rng);
    attn2 = TemporalAttention::create(H, d, A, rng);
    W_x = Linear::create(d + H + d, H, false, rng);
    W_h = Linear::create(H, H, false, rng);
    if (H != d) sentinel_proj = Linear::create(H, d, false, rng);
    W_s = Linear::create(H, A, false, rng);
    W_h3 = Linear::create(H, A, false, rng);
    w_a = Tensor::vector(xavier_uniform(1, A, rng).to_vector(), true);
    W_sd = Linear::create(H + H + d, H, false, rng);
    out = Linear::create(H, c.vocab_size, true, rng);
  }
  if (c.da_first_pass_head) first_head = Linear::create(H + d, c.vocab_size, true, rng);
}

std::vector<std::string> DaDecoder::trace_groups() const {
  if (config_.da_second_pass) return {"alpha1", "alpha2"};
  return {"alpha1"};
}

DecoderState DaDecoder::init_state(const FeatureSet& features) const {
  const std::size_t d = config_.feature_dim, H = config_.hidden_dim;
  const Tensor& V = features.regions;
  if (!V.defined() || V.rank() != 2 || V.dim(0) == 0) {
    throw EmptyInputError("da: need at least one region feature row");
  }
  if (V.dim(1) != d) {
    throw DimensionError("da: region features have dimension " + std::to_string(V.dim(1)) +
                         ", expected " + std::to_string(d));
  }
  Tensor v_g = features.global.defined() ? features.global : mean_pool(V);
  if (v_g.rank() != 1 || v_g.dim(0) != d) {
    throw DimensionError("da: global feature " + shape_to_string(v_g.shape()) + ", expected [" +
                         std::to_string(d) + "]");
  }
  DecoderState s;
  s.layers.push_back({Tensor::zeros({H}), Tensor::zeros({H})});
  if (config_.da_second_pass) s.layers.push_back({Tensor::zeros({H}), Tensor::zeros({H})});
  s.cache = {V, v_g, project_features(attn1, V)};
  if (attn2) s.cache.push_back(project_features(*attn2, V));
  return s;
}

StepResult DaDecoder::step(const DecoderState& state, int token, const FeatureSet&) const {
  check_token(token);
  const Tensor& V = state.cache.at(0);
  const Tensor& v_g = state.cache.at(1);
  const Tensor w = embed_one(embedding, token);
  const LayerState& l1 = state.layers.at(0);

  // First pass.
  Tensor y1 = second_pass() ? concat({v_g, state.layers.at(1).h, w}) : concat({v_g, w});
  LstmStep first = lstm_step(lstm1, y1, l1.h, l1.m);
  Tensor shortcut = W_rd.forward(concat({w, first.h}));
  Attended a1 = temporal_attend(attn1, shortcut, V, state.cache.at(2));

  StepResult r;
  r.state = state;
  r.state.step = state.step + 1;
  r.state.layers[0] = {first.h, first.m};
  r.state.aux = {shortcut, a1.context};
  r.trace.token = token;
  if (trace_) r.trace.alphas.push_back(a1.weights.to_vector());

  Tensor first_log_probs;
  if (first_head) {
    first_log_probs =
        log_softmax(first_head->forward(apply_dropout(concat({shortcut, a1.context}), state, 1)));
    r.state.aux.push_back(first_log_probs);
  }
  if (!second_pass()) {
    r.log_probs = first_log_probs;
    return r;
  }

  // Second pass with the visual sentinel.
  const LayerState& l2 = state.layers.at(1);
  Tensor y2 = concat({v_g, shortcut, a1.context});
  LstmStep second = lstm_step(*lstm2, y2, l2.h, l2.m);
  Tensor g = sigmoid(add(W_x->forward(y2), W_h->forward(l2.h)));
  Tensor s = mul(g, tanh(second.m));
  Tensor s_region = sentinel_proj ? sentinel_proj->forward(s) : s;

  Tensor query = add(matmul(attn2->W_a, second.h), attn2->b_a);
  Tensor e2 = matmul(tanh(add_row_broadcast(state.cache.at(3), query)), attn2->w);
  Tensor e_sentinel = score_sentinel(*W_s, *W_h3, w_a, s, second.h);
  Tensor alpha2 = softmax(concat({e2, e_sentinel}));
  Tensor slots = concat({V, reshape(s_region, {1, s_region.numel()})}, 0);
  Tensor v2 = matmul(alpha2, slots);

  Tensor fused = W_sd->forward(concat({shortcut, second.h, v2}));
  r.log_probs = log_softmax(out->forward(apply_dropout(fused, state, 0)));
  r.state.layers[1] = {second.h, second.m};
  if (trace_) {
    r.trace.alphas.push_back(alpha2.to_vector());
    r.trace.beta = {alpha2.at(alpha2.numel() - 1)};
  }
  return r;
}

ParameterList DaDecoder::parameters() const {
  ParameterList p;
  append_prefixed(p, "embed/", embedding.parameters());
  append_prefixed(p, "lstm1/", lstm1.parameters());
  append_prefixed(p, "W_rd/", W_rd.parameters());
  append_prefixed(p, "attn1/", attn1.parameters());
  if (second_pass()) {
    append_prefixed(p, "lstm2/", lstm2->parameters());
    append_prefixed(p, "attn2/", attn2->parameters());
    append_prefixed(p, "W_x/", W_x->parameters());
    append_prefixed(p, "W_h/", W_h->parameters());
    if (sentinel_proj) append_prefixed(p, "sentinel_proj/", sentinel_proj->parameters());
    append_prefixed(p, "W_s/", W_s->parameters());
    append_prefixed(p, "W_h3/", W_h3->parameters());
    p.push_back({"w_a", w_a});
    append_prefixed(p, "W_sd/", W_sd->parameters());
    append_prefixed(p, "out/", out->parameters());
  }
  if (first_head) append_prefixed(p, "first_head/", first_head->parameters());
  return p;
}

Tensor DaDecoder::caption_objective(const FeatureSet& features, std::span<const int> caption) const {
  if (!first_head || !second_pass()) return caption_nll(*this, features, caption);
  if (caption.size() < 2 || caption.front() != kBos) {
    throw ContractError("caption must start with BOS and contain a target token");
  }
  DecoderState state = init_state(features);
  Tensor main, aux;
  for (std::size_t t = 0; t + 1 < caption.size(); ++t) {
    StepResult r = step(state, caption[t], features);
    const int target = caption[t + 1];
    check_token(target);
    const auto k = static_cast<std::size_t>(target);
    Tensor m = index(r.log_probs, k);
    Tensor a = index(r.state.aux.at(kAuxFirstLogProbs), k);
    main = main.defined() ? add(main, m) : m;
    aux = aux.defined() ? add(aux, a) : a;
    state = std::move(r.state);
  }
  return neg(add(main, scale(aux, config_.da_aux_weight)));
}

Tensor da_first_pass_distribution(const DaDecoder& decoder, const DecoderState& state) {
  if (!decoder.first_pass_head()) {
    throw ConfigError("da: first-pass head is disabled (set da_first_pass_head = true)");
  }
  if (state.aux.size() <= kAuxFirstLogProbs) {
    throw ContractError("da: state has no first-pass output; call step() first");
  }
  return exp(state.aux[kAuxFirstLogProbs]);
}

}  // namespace hlstmat
