#pragma once

#include <cstddef>
#include <vector>

#include "hlstmat/attention.hpp"
#include "hlstmat/decoders.hpp"

namespace hlstmat {

struct DecodeOptions {
  std::size_t beam_size = 5;
  std::size_t max_len = 30;
  bool length_normalize = false;  // rank finished captions by mean log-prob
  int bos = kBos;
  int eos = kEos;
  std::vector<int> banned = {kPad, kBos};  // never emitted
};

/// 16 for the image (DA) decoder, 30 for the video variants.
std::size_t default_max_len(DecoderKind kind);

struct Generation {
  std::vector<int> tokens;  // without BOS and EOS
  double log_prob = 0;      // includes the EOS step when complete
  bool complete = false;    // ended with EOS rather than hitting max_len
  AttentionTrace trace;     // one step per emitted token, EOS included
};

/// Cumulative log-prob beam search. The finished pool holds at most k
/// captions; search stops once the best live hypothesis cannot beat the
/// worst finished one. Without any finished caption the best live
/// hypothesis at max_len is returned.
Generation beam_search(const Decoder& decoder, const FeatureSet& features, const DecodeOptions& options = {});

/// Argmax at every step, ties to the lowest id.
Generation greedy_decode(const Decoder& decoder, const FeatureSet& features, const DecodeOptions& options = {});

/// Log-probability of emitting `tokens` (EOS included if present) after BOS.
double sequence_log_prob(const Decoder& decoder, const FeatureSet& features, const std::vector<int>& tokens,
                         int bos = kBos);

}  // namespace hlstmat
