#include "hlstmat/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace hlstmat {

GradcheckReport gradcheck(const std::function<Tensor()>& loss_fn, const ParameterList& params,
                          const GradcheckOptions& options) {
  Tape& tape = Tape::current();
  tape.clear();
  zero_grads(params);
  Tensor loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    if (p.tensor.has_grad() && p.tensor.numel() > 0) {
      auto g = p.tensor.grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  tape.clear();

  GradcheckReport report;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + options.epsilon;
      const double plus = loss_fn().item();
      values[i] = original - options.epsilon;
      const double minus = loss_fn().item();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = abs_err / denom;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || report.checked == 0) {
        report.max_rel_error = rel;
        report.worst_parameter = params[k].name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
      ++report.checked;
    }
  }
  return report;
}

DecoderConfig tiny_decoder_config(DecoderKind kind, std::size_t hidden, std::size_t vocab, std::uint64_t seed) {
  DecoderConfig c;
  c.kind = kind;
  c.vocab_size = vocab;
  c.embed_dim = hidden;
  c.hidden_dim = hidden;
  c.attn_dim = hidden;
  c.feature_dim = hidden + 2;
  c.motion_dim = hidden - 2;
  c.dropout = 0.0;
  c.seed = seed;
  c.da_first_pass_head = kind == DecoderKind::da;
  return c;
}

FeatureSet random_features(const DecoderConfig& config, std::size_t rows, Rng& rng) {
  auto gaussian = [&](std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (double& x : v) x = rng.normal();
    return Tensor::matrix(r, c, std::move(v));
  };
  FeatureSet f;
  f.frames = gaussian(rows, config.feature_dim);
  f.regions = gaussian(rows, config.feature_dim);
  f.motion = gaussian(std::max<std::size_t>(1, rows / 2), config.motion_dim);
  f.global = mean_rows(f.regions);
  return f;
}

GradcheckReport gradcheck_decoder(const Decoder& decoder, const FeatureSet& features, std::span<const int> caption,
                                  const GradcheckOptions& options) {
  return gradcheck([&] { return decoder.caption_objective(features, caption); }, decoder.parameters(), options);
}

}  // namespace hlstmat
