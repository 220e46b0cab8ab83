#include "hlstmat/data_io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "byte_io.hpp"
#include "hlstmat/errors.hpp"
#include "hlstmat/prefetch.hpp"
#include "hlstmat/rng.hpp"

namespace hlstmat {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* const kReservedWords[] = {"<pad>", "<bos>", "<eos>", "<unk>"};
constexpr char kFeatureMagic[] = "HLFEAT01";

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  return out;
}

/// Calls fn(json, line_number) for every non-blank line.
template <typename Fn>
void for_each_json_line(const fs::path& path, Fn fn) {
  auto in = open_in(path);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
    try {
      fn(j, number);
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

TokenizerMode parse_tokenizer_mode(const std::string& name) {
  if (name == "strip_punctuation" || name == "punct") return TokenizerMode::strip_punctuation;
  if (name == "whitespace" || name == "blank") return TokenizerMode::whitespace;
  throw ConfigError("unknown tokenizer mode '" + name + "'");
}

Tokens tokenize(const std::string& text, TokenizerMode mode) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      flush();
    } else if (mode == TokenizerMode::strip_punctuation && std::ispunct(ch)) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return out;
}

std::string join_tokens(const Tokens& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

Vocabulary::Vocabulary() {
  for (const char* w : kReservedWords) add(w);
}

void Vocabulary::add(const std::string& word) {
  if (index_.count(word)) throw VocabularyError("vocabulary: duplicate word '" + word + "'");
  index_.emplace(word, static_cast<int>(words_.size()));
  words_.push_back(word);
}

int Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw VocabularyError("vocabulary: id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(words_.size()));
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const Tokens& tokens, std::size_t max_words) const {
  const std::size_t n = max_words > 0 ? std::min(max_words, tokens.size()) : tokens.size();
  std::vector<int> ids{kBos};
  for (std::size_t i = 0; i < n; ++i) ids.push_back(id(tokens[i]));
  ids.push_back(kEos);
  return ids;
}

Tokens Vocabulary::decode(const std::vector<int>& ids) const {
  Tokens out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    out.push_back(word(id));
  }
  return out;
}

void Vocabulary::save(std::ostream& os) const {
  for (const auto& w : words_) os << w << '\n';
}

void Vocabulary::save(const fs::path& path) const {
  auto out = open_out(path);
  save(out);
}

Vocabulary Vocabulary::load(std::istream& in) {
  Vocabulary v;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (number < static_cast<std::size_t>(kNumReserved)) {
      if (line != kReservedWords[number]) {
        throw FormatError("vocabulary line " + std::to_string(number + 1) + ": expected reserved word " +
                          kReservedWords[number] + ", got '" + line + "'");
      }
    } else {
      if (line.empty()) throw FormatError("vocabulary line " + std::to_string(number + 1) + ": empty word");
      v.add(line);
    }
    ++number;
  }
  if (number < static_cast<std::size_t>(kNumReserved)) throw FormatError("vocabulary: missing reserved entries");
  return v;
}

Vocabulary Vocabulary::load(const fs::path& path) {
  auto in = open_in(path);
  return load(in);
}

Vocabulary build_vocab(const std::vector<Tokens>& captions, std::size_t min_count) {
  if (captions.empty()) throw EmptyInputError("build_vocab: no captions");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& c : captions) {
    for (const auto& w : c) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ordered;
  for (const auto& [w, n] : counts) {
    if (n >= std::max<std::size_t>(min_count, 1)) ordered.emplace_back(w, n);
  }
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [w, n] : ordered) {
    if (!v.contains(w)) v.add(w);
  }
  return v;
}

std::vector<Tokens> truncate_captions(const std::vector<Tokens>& captions, std::size_t max_len) {
  if (max_len == 0) throw ContractError("truncate_captions: max_len must be at least 1");
  std::vector<Tokens> out;
  out.reserve(captions.size());
  for (const auto& c : captions) {
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(std::min(max_len, c.size())));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::temporal: return "temporal";
    case FeatureKind::spatial: return "spatial";
    case FeatureKind::motion: return "motion";
    case FeatureKind::global: return "global";
  }
  return "unknown";
}

FeatureKind parse_feature_kind(const std::string& name) {
  for (auto k : {FeatureKind::temporal, FeatureKind::spatial, FeatureKind::motion, FeatureKind::global}) {
    if (to_string(k) == name) return k;
  }
  throw FormatError("unknown feature kind '" + name + "'");
}

void write_features(std::ostream& os, FeatureKind kind, const Tensor& values) {
  if (values.rank() != 2) {
    throw DimensionError("write_features: expected [count x dim], got " + shape_to_string(values.shape()));
  }
  os.write(kFeatureMagic, 8);
  detail::put_u32(os, static_cast<std::uint32_t>(kind));
  detail::put_u32(os, static_cast<std::uint32_t>(values.dim(0)));
  detail::put_u32(os, static_cast<std::uint32_t>(values.dim(1)));
  for (double v : values.data()) detail::put_f32(os, static_cast<float>(v));
  if (!os) throw FormatError("write_features: write failed");
}

void write_features(const fs::path& path, FeatureKind kind, const Tensor& values) {
  auto out = open_out(path, std::ios::binary);
  write_features(out, kind, values);
}

FeatureFile read_features(std::istream& in, const std::string& source) {
  // Total length, when the stream can tell, so a truncated payload is
  // reported as expected versus actual bytes.
  std::optional<std::uint64_t> total;
  const auto start = in.tellg();
  if (start != std::streampos(-1)) {
    in.seekg(0, std::ios::end);
    const auto end = in.tellg();
    in.seekg(start);
    if (end != std::streampos(-1)) total = static_cast<std::uint64_t>(end - start);
  }
  detail::ByteReader r(in, source);
  if (r.bytes(8, "magic") != kFeatureMagic) {
    throw FormatError(source + ": bad magic at byte offset 0: expected HLFEAT01");
  }
  const auto kind_offset = r.offset();
  const std::uint32_t kind = r.u32("kind");
  if (kind > 3) {
    throw FormatError(source + ": unknown feature kind " + std::to_string(kind) + " at byte offset " +
                      std::to_string(kind_offset));
  }
  const std::uint32_t count = r.u32("count");
  const std::uint32_t dim = r.u32("dim");
  const std::uint64_t numel = std::uint64_t{count} * dim;
  if (numel > std::numeric_limits<std::uint64_t>::max() / 4 || numel > (std::uint64_t{1} << 34)) {
    throw FormatError(source + ": count x dim = " + std::to_string(count) + " x " + std::to_string(dim) +
                      " overflows at byte offset 12");
  }
  const std::uint64_t header = r.offset();
  const std::uint64_t expected = header + numel * 4;
  if (total && *total != expected) {
    throw FormatError(source + ": payload length mismatch at byte offset " + std::to_string(header) +
                      ": expected " + std::to_string(expected) + " bytes in total, got " +
                      std::to_string(*total));
  }
  std::vector<double> values(static_cast<std::size_t>(numel));
  for (double& v : values) v = r.f32("payload");
  FeatureFile f;
  f.kind = static_cast<FeatureKind>(kind);
  f.values = Tensor::matrix(count, dim, std::move(values));
  return f;
}

FeatureFile read_features(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  return read_features(in, path.string());
}

// ---------------------------------------------------------------------------

std::vector<CaptionRecord> read_captions_jsonl(const fs::path& path) {
  std::vector<CaptionRecord> out;
  for_each_json_line(path, [&](const json& j, std::size_t) {
    CaptionRecord r;
    r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    r.refs = j.at("refs").get<std::vector<std::string>>();
    out.push_back(std::move(r));
  });
  return out;
}

void write_captions_jsonl(const fs::path& path, const std::vector<CaptionRecord>& records) {
  auto out = open_out(path);
  for (const auto& r : records) out << json{{"id", r.id}, {"refs", r.refs}}.dump() << '\n';
}

std::vector<GenerationRecord> read_generations_jsonl(const fs::path& path) {
  std::vector<GenerationRecord> out;
  for_each_json_line(path, [&](const json& j, std::size_t) {
    GenerationRecord r;
    r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    r.caption = j.at("caption").get<std::string>();
    r.logprob = j.value("logprob", 0.0);
    if (j.contains("trace_path") && j.at("trace_path").is_string()) r.trace_path = j.at("trace_path").get<std::string>();
    out.push_back(std::move(r));
  });
  return out;
}

void write_generations_jsonl(const fs::path& path, const std::vector<GenerationRecord>& records) {
  auto out = open_out(path);
  for (const auto& r : records) {
    json j{{"id", r.id}, {"caption", r.caption}, {"logprob", r.logprob}};
    if (r.trace_path) j["trace_path"] = *r.trace_path;
    out << j.dump() << '\n';
  }
}

std::string metrics_to_json(const MetricScores& s) {
  json j{{"bleu1", s.bleu[0]}, {"bleu2", s.bleu[1]}, {"bleu3", s.bleu[2]},
         {"bleu4", s.bleu[3]}, {"rougeL", s.rouge_l}, {"cider", s.cider}};
  return j.dump(2);
}

void write_metrics_json(const fs::path& path, const MetricScores& scores) {
  auto out = open_out(path);
  out << metrics_to_json(scores) << '\n';
}

TokenizedCorpus align_corpus(const std::vector<GenerationRecord>& generations,
                             const std::vector<CaptionRecord>& references, TokenizerMode mode) {
  std::map<std::string, const CaptionRecord*> by_id;
  for (const auto& r : references) by_id[r.id] = &r;
  TokenizedCorpus corpus;
  for (const auto& g : generations) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) throw FormatError("no references for generated id '" + g.id + "'");
    CorpusSample s;
    s.candidate = tokenize(g.caption, mode);
    for (const auto& ref : it->second->refs) s.references.push_back(tokenize(ref, mode));
    corpus.push_back(std::move(s));
  }
  return corpus;
}

// ---------------------------------------------------------------------------

const std::vector<ManifestEntry>& Dataset::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw ConfigError("dataset " + root.string() + " has no split '" + name + "'");
  return it->second;
}

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw ConfigError("dataset directory " + root.string() + " does not exist");
  Dataset d;
  d.root = root;
  const fs::path captions = root / "captions.jsonl";
  if (!fs::exists(captions)) throw ConfigError("dataset is missing " + captions.string());
  for (auto& r : read_captions_jsonl(captions)) d.references[r.id] = std::move(r.refs);

  const std::string suffix = ".manifest.jsonl";
  std::vector<fs::path> manifests;
  for (const auto& e : fs::directory_iterator(root)) {
    const std::string name = e.path().filename().string();
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      manifests.push_back(e.path());
    }
  }
  std::sort(manifests.begin(), manifests.end());
  for (const auto& m : manifests) {
    const std::string name = m.filename().string();
    auto& entries = d.splits[name.substr(0, name.size() - suffix.size())];
    for_each_json_line(m, [&](const json& j, std::size_t line) {
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      for (const auto& [kind, path] : j.at("features").items()) {
        fs::path p = path.get<std::string>();
        if (!fs::exists(root / p)) {
          throw ConfigError(m.string() + ":" + std::to_string(line) + ": feature file " + (root / p).string() +
                            " does not exist");
        }
        e.features[parse_feature_kind(kind)] = p;
      }
      if (!d.references.count(e.id)) {
        throw ConfigError(m.string() + ":" + std::to_string(line) + ": sample '" + e.id + "' has no captions");
      }
      entries.push_back(std::move(e));
    });
  }
  if (d.splits.empty()) throw ConfigError("dataset " + root.string() + " has no *.manifest.jsonl files");
  return d;
}

FeatureSet load_sample_features(const Dataset& dataset, const ManifestEntry& entry) {
  FeatureSet f;
  for (const auto& [kind, path] : entry.features) {
    FeatureFile file = read_features(dataset.root / path);
    if (file.kind != kind) {
      throw FormatError((dataset.root / path).string() + ": declared kind " + to_string(kind) +
                        " but file holds " + to_string(file.kind));
    }
    switch (kind) {
      case FeatureKind::temporal: f.frames = file.values; break;
      case FeatureKind::spatial: f.regions = file.values; break;
      case FeatureKind::motion: f.motion = file.values; break;
      case FeatureKind::global:
        if (file.values.dim(0) != 1) {
          throw FormatError((dataset.root / path).string() + ": global feature must have count 1");
        }
        f.global = row(file.values, 0);
        break;
    }
  }
  return f;
}

std::vector<Sample> load_split(const Dataset& dataset, const std::string& split, const Vocabulary& vocab,
                               const LoadOptions& options) {
  const auto& entries = dataset.split(split);
  Prefetcher<FeatureSet> prefetch(
      entries.size(), [&](std::size_t i) { return load_sample_features(dataset, entries[i]); },
      std::max<std::size_t>(options.prefetch, 1));
  std::vector<Sample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    Sample s;
    s.id = e.id;
    s.features = *prefetch.next();
    for (const auto& text : dataset.references.at(e.id)) {
      Tokens t = tokenize(text, options.tokenizer);
      s.captions.push_back(vocab.encode(t, options.max_caption_words));
      s.references.push_back(std::move(t));
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

Dataset synth_dataset(const fs::path& root, const SynthOptions& o) {
  if (o.n_samples == 0 || o.vocab_size == 0 || o.frames == 0 || o.dim == 0 || o.motion_segments == 0 ||
      o.motion_dim == 0) {
    throw ContractError("synth_dataset: all sizes must be at least 1");
  }
  Rng rng(o.seed);
  auto gaussian_matrix = [&](std::size_t rows, std::size_t cols, double scale) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = rng.normal(0.0, scale);
    return v;
  };
  const std::size_t d = o.dim;
  const auto prototypes = gaussian_matrix(o.vocab_size, d, 1.0);
  const auto positions = gaussian_matrix(o.frames, d, 0.5);
  const auto projection = gaussian_matrix(o.motion_dim, d, 1.0 / std::sqrt(static_cast<double>(d)));

  fs::create_directories(root / "features");
  std::vector<CaptionRecord> captions;
  const std::size_t total = o.n_samples + o.n_val + o.n_test;
  std::map<std::string, std::vector<json>> manifests;
  for (std::size_t s = 0; s < total; ++s) {
    const std::string split = s < o.n_samples ? "train" : s < o.n_samples + o.n_val ? "val" : "test";
    char id_buf[32];
    std::snprintf(id_buf, sizeof id_buf, "sample%04zu", s);
    const std::string id = id_buf;
    std::vector<std::size_t> words(o.frames);
    for (auto& w : words) w = rng.below(o.vocab_size);

    std::vector<double> frames(o.frames * d);
    for (std::size_t l = 0; l < o.frames; ++l) {
      for (std::size_t j = 0; j < d; ++j) {
        frames[l * d + j] = prototypes[words[l] * d + j] + positions[l * d + j] + (o.noise > 0 ? rng.normal(0.0, o.noise) : 0.0);
      }
    }
    std::vector<std::size_t> order(o.frames);
    for (std::size_t l = 0; l < o.frames; ++l) order[l] = l;
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::vector<double> regions(o.frames * d);
    for (std::size_t r = 0; r < o.frames; ++r) {
      for (std::size_t j = 0; j < d; ++j) regions[r * d + j] = prototypes[words[order[r]] * d + j];
    }
    std::vector<double> global(d, 0.0);
    for (std::size_t l = 0; l < o.frames; ++l) {
      for (std::size_t j = 0; j < d; ++j) global[j] += frames[l * d + j] / static_cast<double>(o.frames);
    }
    std::vector<double> motion(o.motion_segments * o.motion_dim, 0.0);
    for (std::size_t seg = 0; seg < o.motion_segments; ++seg) {
      const std::size_t begin = seg * o.frames / o.motion_segments;
      const std::size_t end = std::max(begin + 1, (seg + 1) * o.frames / o.motion_segments);
      std::vector<double> mean(d, 0.0);
      for (std::size_t l = begin; l < end && l < o.frames; ++l) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += frames[l * d + j] / static_cast<double>(end - begin);
      }
      for (std::size_t m = 0; m < o.motion_dim; ++m) {
        double acc = 0;
        for (std::size_t j = 0; j < d; ++j) acc += projection[m * d + j] * mean[j];
        motion[seg * o.motion_dim + m] = acc;
      }
    }

    json feats;
    auto put = [&](FeatureKind kind, std::size_t count, std::size_t dim, std::vector<double> values) {
      const std::string rel = "features/" + id + "." + to_string(kind) + ".feat";
      write_features(root / rel, kind, Tensor::matrix(count, dim, std::move(values)));
      feats[to_string(kind)] = rel;
    };
    put(FeatureKind::temporal, o.frames, d, std::move(frames));
    put(FeatureKind::spatial, o.frames, d, std::move(regions));
    put(FeatureKind::motion, o.motion_segments, o.motion_dim, std::move(motion));
    put(FeatureKind::global, 1, d, std::move(global));
    manifests[split].push_back(json{{"id", id}, {"features", feats}});

    Tokens caption;
    for (std::size_t w : words) caption.push_back("word" + std::to_string(w));
    captions.push_back({id, {join_tokens(caption)}});
  }
  write_captions_jsonl(root / "captions.jsonl", captions);
  for (const auto& [split, lines] : manifests) {
    auto out = open_out(root / (split + ".manifest.jsonl"));
    for (const auto& j : lines) out << j.dump() << '\n';
  }
  std::vector<Tokens> train_caps;
  for (std::size_t s = 0; s < o.n_samples; ++s) train_caps.push_back(tokenize(captions[s].refs[0]));
  build_vocab(train_caps).save(root / "vocab.txt");
  return load_dataset(root);
}

}  // namespace hlstmat
