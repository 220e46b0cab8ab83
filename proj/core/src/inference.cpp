#include "hlstmat/inference.hpp"

#include <algorithm>
#include <limits>

#include "hlstmat/errors.hpp"

namespace hlstmat {

namespace {

struct Live {
  std::vector<int> tokens;
  double log_prob = 0;
  DecoderState state;
  std::vector<AttentionTrace::Step> trace;
};

bool is_banned(const DecodeOptions& o, int token) {
  return std::find(o.banned.begin(), o.banned.end(), token) != o.banned.end();
}

void check_options(const DecodeOptions& o) {
  if (o.beam_size == 0) throw ContractError("decode: beam size must be at least 1");
  if (o.max_len == 0) throw ContractError("decode: max_len must be at least 1");
}

double rank_score(const DecodeOptions& o, double log_prob, std::size_t length) {
  return o.length_normalize && length > 0 ? log_prob / static_cast<double>(length) : log_prob;
}

Generation finish(const Live& h, bool complete, const Decoder& decoder) {
  Generation g;
  g.tokens = h.tokens;
  if (complete) g.tokens.pop_back();
  g.log_prob = h.log_prob;
  g.complete = complete;
  g.trace.alpha_groups = decoder.trace_groups();
  g.trace.steps = h.trace;
  return g;
}

}  // namespace

std::size_t default_max_len(DecoderKind kind) { return kind == DecoderKind::da ? 16 : 30; }

Generation beam_search(const Decoder& decoder, const FeatureSet& features, const DecodeOptions& options) {
  check_options(options);
  NoGradGuard no_grad;
  const std::size_t k = options.beam_size;
  std::vector<Live> live(1);
  live[0].state = decoder.init_state(features);
  std::vector<Live> done;  // sorted best first, at most k

  struct Candidate {
    double score;
    std::size_t parent;
    int token;
  };

  for (std::size_t t = 0; t < options.max_len && !live.empty(); ++t) {
    std::vector<Candidate> candidates;
    std::vector<StepResult> results;
    results.reserve(live.size());
    for (std::size_t b = 0; b < live.size(); ++b) {
      const int prev = live[b].tokens.empty() ? options.bos : live[b].tokens.back();
      results.push_back(decoder.step(live[b].state, prev, features));
      const auto lp = results.back().log_probs.data();
      for (std::size_t w = 0; w < lp.size(); ++w) {
        const int token = static_cast<int>(w);
        if (is_banned(options, token)) continue;
        candidates.push_back({live[b].log_prob + lp[w], b, token});
      }
    }
    // Live hypotheses are kept best first, so ties resolve to the older
    // parent and then the lower token id.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    if (candidates.size() > k) candidates.resize(k);

    std::vector<Live> next;
    for (const auto& c : candidates) {
      Live h;
      h.tokens = live[c.parent].tokens;
      h.tokens.push_back(c.token);
      h.log_prob = c.score;
      h.trace = live[c.parent].trace;
      AttentionTrace::Step s = results[c.parent].trace;
      s.token = c.token;
      h.trace.push_back(std::move(s));
      if (c.token == options.eos) {
        done.push_back(std::move(h));
      } else {
        h.state = results[c.parent].state;
        next.push_back(std::move(h));
      }
    }
    std::stable_sort(done.begin(), done.end(), [&](const Live& a, const Live& b) {
      return rank_score(options, a.log_prob, a.tokens.size()) > rank_score(options, b.log_prob, b.tokens.size());
    });
    if (done.size() > k) done.resize(k);
    live = std::move(next);
    // Scores only fall as captions grow, so a full pool whose worst member
    // beats every live hypothesis is final. Normalised ranking lacks that
    // monotonicity and runs to max_len.
    if (!options.length_normalize && done.size() == k && !live.empty() &&
        live.front().log_prob <= done.back().log_prob) {
      live.clear();
    }
  }
  if (!done.empty()) return finish(done.front(), true, decoder);
  if (live.empty()) throw ContractError("beam_search: no hypothesis survived (all tokens banned?)");
  auto best = std::max_element(live.begin(), live.end(), [&](const Live& a, const Live& b) {
    return rank_score(options, a.log_prob, a.tokens.size()) < rank_score(options, b.log_prob, b.tokens.size());
  });
  return finish(*best, false, decoder);
}

Generation greedy_decode(const Decoder& decoder, const FeatureSet& features, const DecodeOptions& options) {
  check_options(options);
  NoGradGuard no_grad;
  Live h;
  h.state = decoder.init_state(features);
  for (std::size_t t = 0; t < options.max_len; ++t) {
    const int prev = h.tokens.empty() ? options.bos : h.tokens.back();
    StepResult r = decoder.step(h.state, prev, features);
    const auto lp = r.log_probs.data();
    int best = -1;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < lp.size(); ++w) {
      const int token = static_cast<int>(w);
      if (is_banned(options, token)) continue;
      if (best < 0 || lp[w] > best_lp) {
        best = token;
        best_lp = lp[w];
      }
    }
    if (best < 0) throw ContractError("greedy_decode: every token is banned");
    h.tokens.push_back(best);
    h.log_prob += best_lp;
    r.trace.token = best;
    h.trace.push_back(std::move(r.trace));
    if (best == options.eos) return finish(h, true, decoder);
    h.state = std::move(r.state);
  }
  return finish(h, false, decoder);
}

double sequence_log_prob(const Decoder& decoder, const FeatureSet& features, const std::vector<int>& tokens,
                         int bos) {
  NoGradGuard no_grad;
  DecoderState state = decoder.init_state(features);
  double total = 0;
  int prev = bos;
  for (int token : tokens) {
    StepResult r = decoder.step(state, prev, features);
    if (token < 0 || static_cast<std::size_t>(token) >= r.log_probs.numel()) {
      throw VocabularyError("sequence_log_prob: token id " + std::to_string(token) + " outside vocabulary");
    }
    total += r.log_probs.at(static_cast<std::size_t>(token));
    state = std::move(r.state);
    prev = token;
  }
  return total;
}

}  // namespace hlstmat
