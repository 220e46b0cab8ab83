#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "hlstmat/decoders.hpp"
#include "hlstmat/parameters.hpp"
#include "hlstmat/rng.hpp"

namespace hlstmat {

struct GradcheckOptions {
  double epsilon = 1e-5;
  // Denominator floor: rel = |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-5;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares backprop gradients of `loss_fn` against central finite
/// differences for every entry of every parameter. `loss_fn` must be a pure
/// function of the parameter values; the current tape is cleared around
/// each evaluation.
GradcheckReport gradcheck(const std::function<Tensor()>& loss_fn, const ParameterList& params,
                          const GradcheckOptions& options = {});

/// Small dimensions for whole-decoder checks. The feature dimensions differ
/// from the hidden size so the context projections are exercised; dropout
/// is off and the DA first-pass head is on.
DecoderConfig tiny_decoder_config(DecoderKind kind, std::size_t hidden = 8, std::size_t vocab = 12,
                                  std::uint64_t seed = 1);

/// Gaussian features of every kind the config can consume, `rows` rows each
/// (motion gets max(1, rows / 2) segments).
FeatureSet random_features(const DecoderConfig& config, std::size_t rows, Rng& rng);

/// Gradient check of decoder.caption_objective over all its parameters.
GradcheckReport gradcheck_decoder(const Decoder& decoder, const FeatureSet& features, std::span<const int> caption,
                                  const GradcheckOptions& options = {});

}  // namespace hlstmat
