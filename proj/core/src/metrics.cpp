#include "hlstmat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "hlstmat/errors.hpp"

namespace hlstmat {

namespace {

constexpr int kMaxOrder = 4;

std::string ngram_key(const Tokens& t, std::size_t begin, std::size_t n) {
  std::string key;
  for (std::size_t i = begin; i < begin + n; ++i) {
    if (i > begin) key.push_back('\x1f');
    key += t[i];
  }
  return key;
}

/// Counts of every n-gram, orders 1..max_order, keyed with the order prefix.
std::array<std::map<std::string, int>, kMaxOrder> ngram_counts(const Tokens& t) {
  std::array<std::map<std::string, int>, kMaxOrder> out;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[n - 1][ngram_key(t, i, n)];
  }
  return out;
}

void check_corpus(const TokenizedCorpus& corpus, const char* metric) {
  if (corpus.empty()) throw EmptyInputError(std::string(metric) + ": empty corpus");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].references.empty()) {
      throw EmptyInputError(std::string(metric) + ": sample " + std::to_string(i) + " has no references");
    }
  }
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

std::array<double, 4> bleu_all(const TokenizedCorpus& corpus, const BleuOptions& options) {
  check_corpus(corpus, "bleu");
  std::array<double, kMaxOrder> correct{}, guess{};
  double test_len = 0, ref_len = 0;
  for (const auto& sample : corpus) {
    std::array<std::map<std::string, int>, kMaxOrder> max_ref;
    // Closest reference length; ties go to the shorter reference.
    const auto c = static_cast<long>(sample.candidate.size());
    long best = -1;
    for (const auto& ref : sample.references) {
      const auto r = static_cast<long>(ref.size());
      if (best < 0 || std::labs(r - c) < std::labs(best - c) || (std::labs(r - c) == std::labs(best - c) && r < best)) {
        best = r;
      }
      const auto counts = ngram_counts(ref);
      for (int k = 0; k < kMaxOrder; ++k) {
        for (const auto& [g, n] : counts[k]) max_ref[k][g] = std::max(max_ref[k][g], n);
      }
    }
    test_len += static_cast<double>(c);
    ref_len += static_cast<double>(best);
    const auto counts = ngram_counts(sample.candidate);
    for (int k = 0; k < kMaxOrder; ++k) {
      guess[k] += static_cast<double>(std::max<long>(0, c - k));
      for (const auto& [g, n] : counts[k]) {
        auto it = max_ref[k].find(g);
        if (it != max_ref[k].end()) correct[k] += std::min(n, it->second);
      }
    }
  }
  const double tiny = options.reference_epsilons ? 1e-15 : 0.0;
  const double small = options.reference_epsilons ? 1e-9 : 0.0;
  std::array<double, kMaxOrder> out{};
  double product = 1.0;
  for (int k = 0; k < kMaxOrder; ++k) {
    const double denom = guess[k] + small;
    product *= denom > 0 ? (correct[k] + tiny) / denom : 0.0;
    out[k] = std::pow(product, 1.0 / (k + 1));
  }
  const double ratio = ref_len + small > 0 ? (test_len + tiny) / (ref_len + small) : 1.0;
  if (ratio < 1.0) {
    const double bp = ratio > 0 ? std::exp(1.0 - 1.0 / ratio) : 0.0;
    for (double& v : out) v *= bp;
  }
  return out;
}

double bleu(const TokenizedCorpus& corpus, int n, const BleuOptions& options) {
  if (n < 1 || n > kMaxOrder) throw ContractError("bleu: order must be in 1..4, got " + std::to_string(n));
  return bleu_all(corpus, options)[static_cast<std::size_t>(n - 1)];
}

double rouge_l_sentence(const Tokens& candidate, const std::vector<Tokens>& references) {
  if (references.empty()) throw EmptyInputError("rouge_l: no references");
  constexpr double beta = 1.2;
  double p_max = 0, r_max = 0;
  for (const auto& ref : references) {
    const auto lcs = static_cast<double>(lcs_length(ref, candidate));
    if (!candidate.empty()) p_max = std::max(p_max, lcs / static_cast<double>(candidate.size()));
    if (!ref.empty()) r_max = std::max(r_max, lcs / static_cast<double>(ref.size()));
  }
  if (p_max == 0 || r_max == 0) return 0.0;
  return (1 + beta * beta) * p_max * r_max / (r_max + beta * beta * p_max);
}

double rouge_l(const TokenizedCorpus& corpus) {
  check_corpus(corpus, "rouge_l");
  double total = 0;
  for (const auto& s : corpus) total += rouge_l_sentence(s.candidate, s.references);
  return total / static_cast<double>(corpus.size());
}

// ---------------------------------------------------------------------------

CiderScorer::CiderScorer(std::vector<std::vector<Tokens>> references, double sigma)
    : refs_(std::move(references)), sigma_(sigma) {
  if (refs_.empty()) throw EmptyInputError("cider: empty reference set");
  for (std::size_t i = 0; i < refs_.size(); ++i) {
    if (refs_[i].empty()) {
      throw EmptyInputError("cider: sample " + std::to_string(i) + " has no references");
    }
    std::map<std::string, bool> seen;
    for (const auto& ref : refs_[i]) {
      const auto counts = ngram_counts(ref);
      for (int k = 0; k < kMaxOrder; ++k) {
        for (const auto& [g, n] : counts[k]) seen[std::to_string(k) + g] = true;
      }
    }
    for (const auto& [g, unused] : seen) document_frequency_[g] += 1.0;
  }
  ref_len_ = std::log(static_cast<double>(refs_.size()));
  ref_vecs_.reserve(refs_.size());
  for (const auto& refs : refs_) {
    std::vector<Vec> vecs;
    for (const auto& ref : refs) vecs.push_back(vectorize(ref));
    ref_vecs_.push_back(std::move(vecs));
  }
}

CiderScorer::Vec CiderScorer::vectorize(const Tokens& tokens) const {
  Vec v;
  const auto counts = ngram_counts(tokens);
  for (int k = 0; k < kMaxOrder; ++k) {
    for (const auto& [g, tf] : counts[k]) {
      auto it = document_frequency_.find(std::to_string(k) + g);
      const double df = std::log(std::max(1.0, it == document_frequency_.end() ? 0.0 : it->second));
      const double w = tf * (ref_len_ - df);
      v.weights[k][g] = w;
      v.norm[k] += w * w;
    }
  }
  for (double& n : v.norm) n = std::sqrt(n);
  // Length as the reference scorer measures it: the number of bigrams.
  for (const auto& [g, tf] : counts[1]) v.length += tf;
  return v;
}

double CiderScorer::score(std::size_t i, const Tokens& candidate) const {
  if (i >= refs_.size()) throw ContractError("cider: sample index out of range");
  const Vec hyp = vectorize(candidate);
  std::array<double, kMaxOrder> total{};
  for (const Vec& ref : ref_vecs_[i]) {
    const double delta = hyp.length - ref.length;
    const double penalty = std::exp(-(delta * delta) / (2 * sigma_ * sigma_));
    for (int k = 0; k < kMaxOrder; ++k) {
      double val = 0;
      for (const auto& [g, w] : hyp.weights[k]) {
        auto it = ref.weights[k].find(g);
        if (it != ref.weights[k].end()) val += std::min(w, it->second) * it->second;
      }
      if (hyp.norm[k] != 0 && ref.norm[k] != 0) val /= hyp.norm[k] * ref.norm[k];
      total[k] += val * penalty;
    }
  }
  double mean = std::accumulate(total.begin(), total.end(), 0.0) / kMaxOrder;
  mean /= static_cast<double>(ref_vecs_[i].size());
  return mean * 10.0;
}

std::vector<double> cider_per_sample(const TokenizedCorpus& corpus) {
  check_corpus(corpus, "cider");
  std::vector<std::vector<Tokens>> refs;
  refs.reserve(corpus.size());
  for (const auto& s : corpus) refs.push_back(s.references);
  CiderScorer scorer(std::move(refs));
  std::vector<double> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) out.push_back(scorer.score(i, corpus[i].candidate));
  return out;
}

double cider(const TokenizedCorpus& corpus) {
  const auto scores = cider_per_sample(corpus);
  return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

MetricScores evaluate_corpus(const TokenizedCorpus& corpus) {
  MetricScores m;
  m.bleu = bleu_all(corpus);
  m.rouge_l = rouge_l(corpus);
  m.cider = cider(corpus);
  return m;
}

}  // namespace hlstmat
