// hlstmat: command-line front end for dataset synthesis, vocabulary
// building, training, decoding, evaluation, gradient checks and attention
// traces.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hlstmat/checkpoint.hpp"
#include "hlstmat/da_decoder.hpp"
#include "hlstmat/data_io.hpp"
#include "hlstmat/errors.hpp"
#include "hlstmat/gradcheck.hpp"
#include "hlstmat/inference.hpp"
#include "hlstmat/metrics.hpp"
#include "hlstmat/training.hpp"
#include "options.hpp"

namespace fs = std::filesystem;
using namespace hlstmat;
using namespace hlstmat::cli;

namespace {

struct Command {
  CLI::App* app = nullptr;
  KeyValues values;
  std::string config;
  std::function<int(const KeyValues&)> run;
};

Command& add_command(CLI::App& root, std::deque<Command>& commands, const std::string& name,
                     const std::string& help) {
  Command& c = commands.emplace_back();
  c.app = root.add_subcommand(name, help);
  config_option(*c.app, c.config);
  return c;
}

// ---------------------------------------------------------------------------
// synth-data

void register_synth(CLI::App& root, std::deque<Command>& commands) {
  Command& c = add_command(root, commands, "synth-data", "Write a synthetic dataset whose captions are recoverable");
  auto& a = *c.app;
  auto& v = c.values;
  flag(a, v, "--out,-o", "out", "output directory (required)");
  flag(a, v, "--seed", "seed", "generator seed [7]");
  flag(a, v, "--samples", "samples", "training samples [10]");
  flag(a, v, "--val", "val", "validation samples [0]");
  flag(a, v, "--test", "test", "test samples [0]");
  flag(a, v, "--vocab-size", "vocab_size", "distinct caption words [8]");
  flag(a, v, "--frames", "frames", "frames per sample, also the caption length [4]");
  flag(a, v, "--dim", "dim", "frame, region and global feature dimension [16]");
  flag(a, v, "--motion-segments", "motion_segments", "motion segments per sample [2]");
  flag(a, v, "--motion-dim", "motion_dim", "motion feature dimension [8]");
  flag(a, v, "--noise", "noise", "Gaussian noise added to every feature [0]");
  c.run = [](const KeyValues& kv) {
    SynthOptions o;
    o.seed = get_size(kv, "seed", o.seed);
    o.n_samples = get_size(kv, "samples", o.n_samples);
    o.n_val = get_size(kv, "val", o.n_val);
    o.n_test = get_size(kv, "test", o.n_test);
    o.vocab_size = get_size(kv, "vocab_size", o.vocab_size);
    o.frames = get_size(kv, "frames", o.frames);
    o.dim = get_size(kv, "dim", o.dim);
    o.motion_segments = get_size(kv, "motion_segments", o.motion_segments);
    o.motion_dim = get_size(kv, "motion_dim", o.motion_dim);
    o.noise = get_double(kv, "noise", o.noise);
    const fs::path out = require(kv, "out");
    Dataset d = synth_dataset(out, o);
    for (const auto& [name, entries] : d.splits) {
      std::cout << name << ": " << entries.size() << " samples\n";
    }
    std::cout << "wrote " << out.string() << '\n';
    return 0;
  };
}

// ---------------------------------------------------------------------------
// build-vocab

void register_build_vocab(CLI::App& root, std::deque<Command>& commands) {
  Command& c = add_command(root, commands, "build-vocab", "Build a vocabulary from a captions JSONL file");
  auto& a = *c.app;
  auto& v = c.values;
  flag(a, v, "--captions", "captions", "captions JSONL, one {id, refs} object per line (required)");
  flag(a, v, "--out,-o", "out", "vocabulary file to write (required)");
  flag(a, v, "--min-count", "min_count", "drop words seen fewer times [1]");
  flag(a, v, "--max-words", "max_words", "truncate captions to this many words first, 0 keeps all [0]");
  flag(a, v, "--tokenizer", "tokenizer", "strip_punctuation or whitespace [strip_punctuation]");
  c.run = [](const KeyValues& kv) {
    const TokenizerMode mode = parse_tokenizer_mode(get_string(kv, "tokenizer", "strip_punctuation"));
    std::vector<Tokens> captions;
    for (const auto& record : read_captions_jsonl(require(kv, "captions"))) {
      for (const auto& ref : record.refs) captions.push_back(tokenize(ref, mode));
    }
    if (const std::size_t max_words = get_size(kv, "max_words", 0); max_words > 0) {
      captions = truncate_captions(captions, max_words);
    }
    Vocabulary vocab = build_vocab(captions, get_size(kv, "min_count", 1));
    vocab.save(fs::path(require(kv, "out")));
    std::cout << vocab.size() << " ids (" << vocab.size() - kNumReserved << " words)\n";
    return 0;
  };
}

// ---------------------------------------------------------------------------
// train

// Feature dimensions not given explicitly are read off the first training sample.
void infer_feature_dims(KeyValues& kv) {
  if (kv.count("feature_dim") && kv.count("motion_dim")) return;
  Dataset data = load_dataset(require(kv, "dataset"));
  const auto& entries = data.split(get_string(kv, "train_split", "train"));
  if (entries.empty()) return;
  const FeatureSet f = load_sample_features(data, entries.front());
  if (!kv.count("feature_dim")) {
    for (const Tensor* t : {&f.frames, &f.regions}) {
      if (t->defined()) {
        kv["feature_dim"] = std::to_string(t->dim(1));
        break;
      }
    }
    if (!kv.count("feature_dim") && f.global.defined()) kv["feature_dim"] = std::to_string(f.global.dim(0));
  }
  if (!kv.count("motion_dim") && f.motion.defined()) kv["motion_dim"] = std::to_string(f.motion.dim(1));
}

void register_train(CLI::App& root, std::deque<Command>& commands) {
  Command& c = add_command(root, commands, "train", "Train a decoder (MLE, then optional reward fine-tuning)");
  auto& a = *c.app;
  auto& v = c.values;
  flag(a, v, "--dataset", "dataset", "dataset directory (required)");
  flag(a, v, "--out,-o", "output_dir", "run directory for checkpoints and logs [run]");
  flag(a, v, "--vocab", "vocab", "vocabulary file [<dataset>/vocab.txt]");
  flag(a, v, "--variant", "variant",
       "basic, hlstmat_temporal, hlstmat_spatial, conf, para, two_stream or da [hlstmat_temporal]");
  flag(a, v, "--embed-dim", "embed_dim", "word embedding size [512]");
  flag(a, v, "--hidden-dim", "hidden_dim", "LSTM hidden size [512]");
  flag(a, v, "--attn-dim", "attn_dim", "attention layer width [512]");
  flag(a, v, "--feature-dim", "feature_dim", "frame/region feature size [from the data]");
  flag(a, v, "--motion-dim", "motion_dim", "motion feature size [from the data]");
  flag(a, v, "--adaptive", "adaptive", "adaptive gate on or off [true]");
  flag(a, v, "--output-hidden", "output_hidden", "hidden state feeding the output layer: bottom or top [bottom]");
  flag(a, v, "--dropout", "dropout", "dropout rate [0.5]");
  flag(a, v, "--model-seed", "seed", "parameter initialisation seed [1]");
  flag(a, v, "--seed", "train_seed", "shuffling and dropout seed [1]");
  flag(a, v, "--epochs", "epochs", "maximum MLE epochs [500]");
  flag(a, v, "--patience", "patience", "early-stopping patience in epochs [20]");
  flag(a, v, "--batch-size", "batch_size", "captions per update [64]");
  flag(a, v, "--optimizer", "optimizer", "adadelta, adam or sgd [adadelta]");
  flag(a, v, "--lr", "lr", "learning rate [1 adadelta, 5e-4 adam, 0.1 sgd]");
  flag(a, v, "--clip", "clip", "element-wise gradient clip [10]");
  flag(a, v, "--max-caption-words", "max_caption_words", "truncate training captions, 0 keeps all [0]");
  flag(a, v, "--max-len", "max_len", "decoding limit for validation, 0 uses the variant default [0]");
  flag(a, v, "--early-stop-metric", "early_stop_metric", "cider, bleu4, rougeL or loss [cider]");
  flag(a, v, "--rl-epochs", "rl_epochs", "reward fine-tuning epochs after MLE [0]");
  flag(a, v, "--rl-lr", "rl_lr", "reward fine-tuning learning rate [5e-5]");
  flag(a, v, "--contrastive-epochs", "contrastive_epochs", "DA reward encoder pre-training epochs [0]");
  flag(a, v, "--tokenizer", "tokenizer", "strip_punctuation or whitespace [strip_punctuation]");
  toggle(a, v, "--resume", "resume", "continue from <out>/last.ckpt");
  toggle(a, v, "--joint-two-stream", "joint_two_stream", "train the two streams through the fused distribution");
  toggle(a, v, "--da-first-pass-head", "da_first_pass_head", "add the DA first-pass output head");
  flag(a, v, "--da-second-pass", "da_second_pass", "DA second pass on or off [true]");
  toggle(a, v, "--quiet,-q", "quiet", "no per-epoch output");
  c.run = [](const KeyValues& given) {
    KeyValues kv = given;
    infer_feature_dims(kv);
    const TrainConfig config = TrainConfig::from_key_values(kv);
    Trainer trainer = Trainer::from_config(config);
    if (!get_bool(kv, "quiet", false)) {
      trainer.set_epoch_callback([&config](const EpochLog& e) {
        std::ostringstream line;
        line << std::setw(4) << e.epoch << ' ' << e.stage << " loss " << std::setprecision(6) << e.loss << ' '
             << config.early_stop_metric << ' ' << e.val_metric << (e.improved ? " *" : "");
        std::cout << line.str() << std::endl;
      });
    }
    const TrainResult r = trainer.run();
    std::cout << "best " << config.early_stop_metric << ' ' << r.best_metric << " at epoch " << r.best_epoch
              << (r.early_stopped ? " (early stop)" : "") << '\n'
              << "checkpoint " << r.best_checkpoint.string() << '\n';
    return 0;
  };
}

// ---------------------------------------------------------------------------
// generate / trace

struct DecodeJob {
  std::unique_ptr<Decoder> decoder;
  Vocabulary vocab;
  std::vector<Sample> samples;
  DecodeOptions options;
  bool greedy = false;
};

void add_decode_flags(CLI::App& a, KeyValues& v) {
  flag(a, v, "--checkpoint,-c", "checkpoint", "model checkpoint (required)");
  flag(a, v, "--dataset", "dataset", "dataset directory (required)");
  flag(a, v, "--split", "split", "split to decode [test]");
  flag(a, v, "--vocab", "vocab", "vocabulary file [<dataset>/vocab.txt]");
  flag(a, v, "--beam", "beam_size", "beam width [5]");
  flag(a, v, "--max-len", "max_len", "maximum caption length [16 for DA, 30 otherwise]");
  toggle(a, v, "--greedy", "greedy", "greedy decoding instead of beam search");
  toggle(a, v, "--length-normalize", "length_normalize", "rank finished beams by mean log-probability");
}

DecodeJob prepare_decode(const KeyValues& kv) {
  DecodeJob job;
  job.decoder = load_decoder(require(kv, "checkpoint"));
  const fs::path root = require(kv, "dataset");
  job.vocab = Vocabulary::load(fs::path(get_string(kv, "vocab", (root / "vocab.txt").string())));
  if (job.vocab.size() != job.decoder->vocab_size()) {
    throw ConfigError("vocabulary has " + std::to_string(job.vocab.size()) + " ids, checkpoint expects " +
                      std::to_string(job.decoder->vocab_size()));
  }
  Dataset data = load_dataset(root);
  job.samples = load_split(data, get_string(kv, "split", "test"), job.vocab);
  job.options.beam_size = get_size(kv, "beam_size", 5);
  job.options.max_len = get_size(kv, "max_len", default_max_len(job.decoder->kind()));
  job.options.length_normalize = get_bool(kv, "length_normalize", false);
  job.greedy = get_bool(kv, "greedy", false);
  return job;
}

Generation decode(const DecodeJob& job, const Sample& s) {
  return job.greedy ? greedy_decode(*job.decoder, s.features, job.options)
                    : beam_search(*job.decoder, s.features, job.options);
}

// Greedy caption read from the DA first-pass head, its own choices fed back.
Generation first_pass_greedy(const DaDecoder& decoder, const FeatureSet& features, const DecodeOptions& options) {
  NoGradGuard no_grad;
  Generation g;
  DecoderState state = decoder.init_state(features);
  int token = options.bos;
  for (std::size_t t = 0; t < options.max_len; ++t) {
    StepResult r = decoder.step(state, token, features);
    const std::vector<double> p = da_first_pass_distribution(decoder, r.state).to_vector();
    int best = -1;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const int id = static_cast<int>(k);
      if (std::find(options.banned.begin(), options.banned.end(), id) != options.banned.end()) continue;
      if (best < 0 || p[k] > p[static_cast<std::size_t>(best)]) best = id;
    }
    g.log_prob += std::log(p[static_cast<std::size_t>(best)]);
    if (best == options.eos) {
      g.complete = true;
      break;
    }
    g.tokens.push_back(best);
    token = best;
    state = std::move(r.state);
  }
  return g;
}

fs::path write_trace(const fs::path& dir, const std::string& id, const Generation& g, const Vocabulary& vocab) {
  fs::create_directories(dir);
  const fs::path path = dir / (id + ".csv");
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  g.trace.write_csv(os, &vocab.words());
  return path;
}

void register_generate(CLI::App& root, std::deque<Command>& commands) {
  Command& c = add_command(root, commands, "generate", "Caption a split and write generations JSONL");
  auto& a = *c.app;
  auto& v = c.values;
  add_decode_flags(a, v);
  flag(a, v, "--out,-o", "out", "generations JSONL to write (required)");
  flag(a, v, "--trace-dir", "trace_dir", "also write one attention CSV per sample here");
  toggle(a, v, "--first-pass", "first_pass", "DA only: emit the first-pass head's greedy caption (debugging)");
  c.run = [](const KeyValues& kv) {
    const DecodeJob job = prepare_decode(kv);
    const bool first_pass = get_bool(kv, "first_pass", false);
    const auto* da = dynamic_cast<const DaDecoder*>(job.decoder.get());
    if (first_pass && !da) throw ConfigError("--first-pass needs a DA checkpoint");
    const std::string trace_dir = get_string(kv, "trace_dir", "");
    std::vector<GenerationRecord> records;
    for (const Sample& s : job.samples) {
      const Generation g = first_pass ? first_pass_greedy(*da, s.features, job.options) : decode(job, s);
      GenerationRecord r{s.id, join_tokens(job.vocab.decode(g.tokens)), g.log_prob, std::nullopt};
      if (!trace_dir.empty() && !first_pass) r.trace_path = write_trace(trace_dir, s.id, g, job.vocab).string();
      records.push_back(std::move(r));
    }
    write_generations_jsonl(require(kv, "out"), records);
    std::cout << records.size() << " captions written to " << require(kv, "out") << '\n';
    return 0;
  };
}

void register_trace(CLI::App& root, std::deque<Command>& commands) {
  Command& c = add_command(root, commands, "trace", "Write per-sample attention and gate CSVs");
  auto& a = *c.app;
  auto& v = c.values;
  add_decode_flags(a, v);
  flag(a, v, "--out-dir,-o", "out_dir", "directory for the CSV files (required)");
  c.run = [](const KeyValues& kv) {
    const DecodeJob job = prepare_decode(kv);
    const fs::path dir = require(kv, "out_dir");
    for (const Sample& s : job.samples) {
      const Generation g = decode(job, s);
      std::cout << write_trace(dir, s.id, g, job.vocab).string() << '\t' << join_tokens(job.vocab.decode(g.tokens))
                << '\n';
    }
    return 0;
  };
}

// ---------------------------------------------------------------------------
// evaluate

void register_evaluate(CLI::App& root, std::deque<Command>& commands) {
  Command& c = add_command(root, commands, "evaluate", "Score generations against reference captions");
  auto& a = *c.app;
  auto& v = c.values;
  flag(a, v, "--generations,-g", "generations", "generations JSONL (required)");
  flag(a, v, "--references,-r", "references", "captions JSONL (required)");
  flag(a, v, "--out,-o", "out", "metrics JSON to write; printed either way");
  flag(a, v, "--tokenizer", "tokenizer", "strip_punctuation or whitespace [strip_punctuation]");
  c.run = [](const KeyValues& kv) {
    const TokenizerMode mode = parse_tokenizer_mode(get_string(kv, "tokenizer", "strip_punctuation"));
    const TokenizedCorpus corpus = align_corpus(read_generations_jsonl(require(kv, "generations")),
                                                read_captions_jsonl(require(kv, "references")), mode);
    const MetricScores scores = evaluate_corpus(corpus);
    if (const std::string out = get_string(kv, "out", ""); !out.empty()) write_metrics_json(out, scores);
    std::cout << metrics_to_json(scores) << '\n';
    return 0;
  };
}

// ---------------------------------------------------------------------------
// gradcheck

void register_gradcheck(CLI::App& root, std::deque<Command>& commands) {
  Command& c = add_command(root, commands, "gradcheck", "Compare backprop with finite differences on tiny decoders");
  auto& a = *c.app;
  auto& v = c.values;
  flag(a, v, "--variant", "variant", "decoder kind or 'all' [all]");
  flag(a, v, "--hidden", "hidden", "hidden size [8]");
  flag(a, v, "--vocab-size", "vocab_size", "vocabulary size [12]");
  flag(a, v, "--frames", "frames", "feature rows [4]");
  flag(a, v, "--seed", "seed", "seed for parameters and inputs [1]");
  flag(a, v, "--epsilon", "epsilon", "finite-difference step [1e-5]");
  flag(a, v, "--floor", "floor", "relative-error denominator floor [1e-5]");
  flag(a, v, "--tolerance", "tolerance", "maximum relative error accepted [1e-4]");
  c.run = [](const KeyValues& kv) {
    const std::string which = get_string(kv, "variant", "all");
    std::vector<DecoderKind> kinds;
    if (which == "all") {
      kinds = {DecoderKind::basic, DecoderKind::hlstmat_temporal, DecoderKind::hlstmat_spatial, DecoderKind::conf,
               DecoderKind::para, DecoderKind::two_stream, DecoderKind::da};
    } else {
      kinds = {parse_decoder_kind(which)};
    }
    const std::size_t hidden = get_size(kv, "hidden", 8), vocab = get_size(kv, "vocab_size", 12);
    const std::size_t frames = get_size(kv, "frames", 4);
    const std::uint64_t seed = get_size(kv, "seed", 1);
    const double tolerance = get_double(kv, "tolerance", 1e-4);
    GradcheckOptions opts;
    opts.epsilon = get_double(kv, "epsilon", opts.epsilon);
    opts.floor = get_double(kv, "floor", opts.floor);
    if (vocab <= static_cast<std::size_t>(kNumReserved)) throw ConfigError("gradcheck: vocab_size must exceed 4");

    int failures = 0;
    for (DecoderKind kind : kinds) {
      const DecoderConfig config = tiny_decoder_config(kind, hidden, vocab, seed);
      auto decoder = build_variant(config);
      Rng rng(derive_seed(seed, 17));
      const FeatureSet features = random_features(config, frames, rng);
      std::vector<int> caption = {kBos};
      for (int k = 0; k < 3; ++k) caption.push_back(kNumReserved + static_cast<int>(rng.below(vocab - kNumReserved)));
      caption.push_back(kEos);
      const auto t0 = std::chrono::steady_clock::now();
      const GradcheckReport r = gradcheck_decoder(*decoder, features, caption, opts);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const bool ok = r.max_rel_error < tolerance;
      failures += ok ? 0 : 1;
      std::printf("%-17s %s  max_rel %.3e  max_abs %.3e  params %zu  worst %s[%zu]  %.2fs\n", to_string(kind).c_str(),
                  ok ? "ok  " : "FAIL", r.max_rel_error, r.max_abs_error, r.checked, r.worst_parameter.c_str(),
                  r.worst_index, secs);
    }
    return failures == 0 ? 0 : 1;
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hlstmat: hierarchical LSTM caption decoders with adaptive attention"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "hlstmat 0.1.0");
  std::deque<Command> commands;
  register_synth(app, commands);
  register_build_vocab(app, commands);
  register_train(app, commands);
  register_generate(app, commands);
  register_evaluate(app, commands);
  register_gradcheck(app, commands);
  register_trace(app, commands);
  CLI11_PARSE(app, argc, argv);

  for (Command& c : commands) {
    if (!c.app->parsed()) continue;
    try {
      apply_config(c.config, c.values);
      return c.run(c.values);
    } catch (const hlstmat::Error& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 3;
    }
  }
  return 1;
}
