#pragma once

// Caption metrics over tokenized corpora: corpus BLEU-1..4, ROUGE-L and
// CIDEr-D, following the COCO caption evaluation conventions.

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace hlstmat {

using Tokens = std::vector<std::string>;

struct CorpusSample {
  Tokens candidate;
  std::vector<Tokens> references;  // at least one
};

using TokenizedCorpus = std::vector<CorpusSample>;

struct BleuOptions {
  // Adds the COCO scorer's 1e-15 / 1e-9 guards to every ratio. Off gives
  // the pure geometric mean, so a missing order yields exactly zero.
  bool reference_epsilons = false;
};

/// BLEU-1..BLEU-4 at once. Throws EmptyInputError on an empty corpus or a
/// sample without references.
std::array<double, 4> bleu_all(const TokenizedCorpus& corpus, const BleuOptions& options = {});
/// BLEU-n for n in 1..4.
double bleu(const TokenizedCorpus& corpus, int n, const BleuOptions& options = {});

double rouge_l_sentence(const Tokens& candidate, const std::vector<Tokens>& references);
double rouge_l(const TokenizedCorpus& corpus);

/// CIDEr-D with document frequencies taken from a fixed reference set, so
/// individual candidates can be scored (e.g. as rewards) without rebuilding
/// the statistics.
class CiderScorer {
 public:
  explicit CiderScorer(std::vector<std::vector<Tokens>> references, double sigma = 6.0);

  std::size_t size() const { return refs_.size(); }
  /// Score of `candidate` against the references of sample `i`.
  double score(std::size_t i, const Tokens& candidate) const;

 private:
  struct Vec {
    std::array<std::map<std::string, double>, 4> weights;
    std::array<double, 4> norm{};
    double length = 0;
  };
  Vec vectorize(const Tokens& tokens) const;

  std::vector<std::vector<Tokens>> refs_;
  std::vector<std::vector<Vec>> ref_vecs_;
  std::map<std::string, double> document_frequency_;
  double ref_len_ = 0;
  double sigma_;
};

std::vector<double> cider_per_sample(const TokenizedCorpus& corpus);
double cider(const TokenizedCorpus& corpus);

struct MetricScores {
  std::array<double, 4> bleu{};
  double rouge_l = 0;
  double cider = 0;
};

MetricScores evaluate_corpus(const TokenizedCorpus& corpus);

}  // namespace hlstmat
