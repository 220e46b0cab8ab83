#pragma once

// On-disk formats and dataset plumbing: tokenizer, vocabulary, feature
// files, caption / generation JSONL, dataset manifests and the synthetic
// dataset generator.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hlstmat/decoders.hpp"
#include "hlstmat/metrics.hpp"
#include "hlstmat/tensor.hpp"
#include "hlstmat/tokens.hpp"

namespace hlstmat {

// ---------------------------------------------------------------------------
// Tokens and vocabulary

enum class TokenizerMode {
  strip_punctuation,  // lowercase, punctuation becomes a separator
  whitespace,         // lowercase, split on blanks only
};

TokenizerMode parse_tokenizer_mode(const std::string& name);
Tokens tokenize(const std::string& text, TokenizerMode mode = TokenizerMode::strip_punctuation);
std::string join_tokens(const Tokens& tokens);

class Vocabulary {
 public:
  /// Only the four reserved entries.
  Vocabulary();

  std::size_t size() const { return words_.size(); }
  /// UNK for unknown words.
  int id(const std::string& word) const;
  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  /// Throws VocabularyError for an id out of range.
  const std::string& word(int id) const;
  const std::vector<std::string>& words() const { return words_; }

  /// [BOS, ids..., EOS], keeping at most max_words words when max_words > 0.
  std::vector<int> encode(const Tokens& tokens, std::size_t max_words = 0) const;
  /// Words up to the first EOS, skipping PAD and BOS.
  Tokens decode(const std::vector<int>& ids) const;

  /// One word per line in id order.
  void save(std::ostream& os) const;
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(std::istream& in);
  static Vocabulary load(const std::filesystem::path& path);

  friend Vocabulary build_vocab(const std::vector<Tokens>&, std::size_t);

 private:
  void add(const std::string& word);

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

/// Words by frequency (descending) then lexicographically; words seen fewer
/// than min_count times are left out and encode as UNK.
Vocabulary build_vocab(const std::vector<Tokens>& captions, std::size_t min_count = 1);

/// Each caption clipped to its first max_len tokens.
std::vector<Tokens> truncate_captions(const std::vector<Tokens>& captions, std::size_t max_len = 16);

// ---------------------------------------------------------------------------
// Feature files: "HLFEAT01", u32 kind, u32 count, u32 dim, float32 payload.

enum class FeatureKind : std::uint32_t { temporal = 0, spatial = 1, motion = 2, global = 3 };

std::string to_string(FeatureKind kind);
FeatureKind parse_feature_kind(const std::string& name);

struct FeatureFile {
  FeatureKind kind = FeatureKind::temporal;
  Tensor values;  // [count x dim]
};

void write_features(std::ostream& os, FeatureKind kind, const Tensor& values);
void write_features(const std::filesystem::path& path, FeatureKind kind, const Tensor& values);
/// Throws FormatError naming the byte offset, and expected versus actual
/// byte length for a truncated payload.
FeatureFile read_features(std::istream& in, const std::string& source = "features");
FeatureFile read_features(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// JSON documents

struct CaptionRecord {
  std::string id;
  std::vector<std::string> refs;
};

struct GenerationRecord {
  std::string id;
  std::string caption;
  double logprob = 0;
  std::optional<std::string> trace_path;
};

std::vector<CaptionRecord> read_captions_jsonl(const std::filesystem::path& path);
void write_captions_jsonl(const std::filesystem::path& path, const std::vector<CaptionRecord>& records);
std::vector<GenerationRecord> read_generations_jsonl(const std::filesystem::path& path);
void write_generations_jsonl(const std::filesystem::path& path, const std::vector<GenerationRecord>& records);
std::string metrics_to_json(const MetricScores& scores);
void write_metrics_json(const std::filesystem::path& path, const MetricScores& scores);

/// Pairs generations with references by id. Throws FormatError for a
/// generation whose id has no references.
TokenizedCorpus align_corpus(const std::vector<GenerationRecord>& generations,
                             const std::vector<CaptionRecord>& references,
                             TokenizerMode mode = TokenizerMode::strip_punctuation);

// ---------------------------------------------------------------------------
// Datasets
//
// <root>/captions.jsonl            references for every sample
// <root>/<split>.manifest.jsonl    {"id": ..., "features": {"temporal": path, ...}}
// <root>/vocab.txt                 optional, written by synth-data / build-vocab
// Feature paths are relative to <root>.

struct ManifestEntry {
  std::string id;
  std::map<FeatureKind, std::filesystem::path> features;
};

struct Dataset {
  std::filesystem::path root;
  std::map<std::string, std::vector<ManifestEntry>> splits;
  std::map<std::string, std::vector<std::string>> references;

  /// Throws ConfigError for an unknown split.
  const std::vector<ManifestEntry>& split(const std::string& name) const;
  bool has_split(const std::string& name) const { return splits.count(name) != 0; }
};

/// Reads the manifests and captions; every listed feature file must exist.
Dataset load_dataset(const std::filesystem::path& root);

/// Reads every feature file of an entry into a FeatureSet.
FeatureSet load_sample_features(const Dataset& dataset, const ManifestEntry& entry);

struct Sample {
  std::string id;
  FeatureSet features;
  std::vector<std::vector<int>> captions;  // encoded, BOS ... EOS
  std::vector<Tokens> references;          // tokenized reference text
};

struct LoadOptions {
  std::size_t max_caption_words = 0;  // 0 keeps full captions
  std::size_t prefetch = 4;           // feature files in flight
  TokenizerMode tokenizer = TokenizerMode::strip_punctuation;
};

std::vector<Sample> load_split(const Dataset& dataset, const std::string& split, const Vocabulary& vocab,
                               const LoadOptions& options = {});

struct SynthOptions {
  std::uint64_t seed = 7;
  std::size_t n_samples = 10;  // training samples
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  std::size_t vocab_size = 8;  // distinct words
  std::size_t frames = 4;      // L, also the caption length
  std::size_t dim = 16;        // frame, region and global dimension
  std::size_t motion_segments = 2;
  std::size_t motion_dim = 8;
  double noise = 0.0;
};

/// Writes a dataset whose captions are recoverable from the features: frame
/// l is the prototype of caption word l plus a code for position l, regions
/// are the shuffled word prototypes, the global vector is the frame mean and
/// motion segments are fixed random projections of frame means.
Dataset synth_dataset(const std::filesystem::path& root, const SynthOptions& options);

}  // namespace hlstmat
