#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "hlstmat/da_decoder.hpp"
#include "hlstmat/errors.hpp"
#include "hlstmat/gradcheck.hpp"
#include "test_support.hpp"

using namespace hlstmat;
using hlstmat::test::fill_by_name;
using hlstmat::test::formula_frames;
using hlstmat::test::random_tensor;

namespace {

class DaTest : public ::testing::Test {
 protected:
  void TearDown() override { Tape::current().clear(); }
};

std::unique_ptr<DaDecoder> make_da(const DecoderConfig& c) {
  auto base = build_variant(c);
  return std::unique_ptr<DaDecoder>(dynamic_cast<DaDecoder*>(base.release()));
}

void set_all(Tensor t, double v) {
  for (double& x : t.mutable_data()) x = v;
}

}  // namespace

TEST_F(DaTest, LayoutAndTag) {
  DecoderConfig c = tiny_decoder_config(DecoderKind::da, 8, 12);
  auto dec = make_da(c);
  EXPECT_EQ(dec->lstm1.input_dim(), c.feature_dim + c.hidden_dim + c.embed_dim);
  EXPECT_EQ(dec->lstm2->input_dim(), c.feature_dim + c.hidden_dim + c.feature_dim);
  EXPECT_TRUE(dec->sentinel_proj.has_value());  // hidden 8 vs region dim 10
  EXPECT_EQ(dec->sentinel_proj->out_dim(), c.feature_dim);
  c.feature_dim = c.hidden_dim;
  EXPECT_FALSE(make_da(c)->sentinel_proj.has_value());
}

// Hand evaluation: tests/oracles/decoder_hand_eval.py ("da" rows).
TEST_F(DaTest, MatchesHandEvaluation) {
  DecoderConfig c;
  c.kind = DecoderKind::da;
  c.vocab_size = 3;
  c.embed_dim = c.hidden_dim = c.attn_dim = c.feature_dim = 2;
  c.dropout = 0;
  auto dec = make_da(c);
  fill_by_name(dec->parameters());
  FeatureSet f;
  f.regions = formula_frames(2, 2);
  f.global = Tensor::vector({0.3, -0.2});
  const double expected[2][3] = {{0.28236924390246381862, 0.38115985737111327614, 0.33647089872642290523},
                                 {0.2779756637218271055, 0.38586538379799197029, 0.33615895248018092422}};
  DecoderState s = dec->init_state(f);
  const int tokens[2] = {1, 2};
  for (int t = 0; t < 2; ++t) {
    StepResult r = dec->step(s, tokens[t], f);
    const auto p = word_distribution(r).to_vector();
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(p[std::size_t(k)], expected[t][k], 1e-9) << "step " << t;
    s = r.state;
  }
}

TEST_F(DaTest, SecondAttentionCoversRegionsPlusSentinel) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    DecoderConfig c = tiny_decoder_config(DecoderKind::da, 6, 10, 10 + trial);
    auto dec = make_da(c);
    const std::size_t L = 1 + rng.below(6);
    FeatureSet f = random_features(c, L, rng);
    StepResult r = dec->step(dec->init_state(f), kBos, f);
    ASSERT_EQ(r.trace.alphas.size(), 2u);
    const auto& a2 = r.trace.alphas[1];
    ASSERT_EQ(a2.size(), L + 1);
    EXPECT_NEAR(std::accumulate(a2.begin(), a2.end(), 0.0), 1.0, 1e-9);
    const double visual = std::accumulate(a2.begin(), a2.end() - 1, 0.0);
    EXPECT_NEAR(r.trace.beta.at(0), 1.0 - visual, 1e-12);
  }
}

TEST_F(DaTest, SentinelEntriesLieInOpenUnitInterval) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    DecoderConfig c = tiny_decoder_config(DecoderKind::da, 6, 10, 50 + trial);
    auto dec = make_da(c);
    FeatureSet f = random_features(c, 3, rng);
    DecoderState s = dec->init_state(f);
    for (int token : {kBos, 5, 7}) {
      const Tensor h2_prev = s.layers[1].h;
      StepResult r = dec->step(s, token, f);
      // s = sigmoid(W_x y2 + W_h h2_prev) * tanh(m2), recomputed from the state.
      const Tensor y2 = concat({f.global, r.state.aux[0], r.state.aux[1]});
      const Tensor g = sigmoid(add(dec->W_x->forward(y2), dec->W_h->forward(h2_prev)));
      const auto sv = mul(g, tanh(r.state.layers[1].m)).to_vector();
      for (double x : sv) {
        EXPECT_GT(x, -1.0);
        EXPECT_LT(x, 1.0);
      }
      s = r.state;
    }
  }
}

TEST_F(DaTest, SaturatedSentinelTakesAllMass) {
  DecoderConfig c = tiny_decoder_config(DecoderKind::da, 6, 10, 2);
  auto dec = make_da(c);
  // Every region scores -50 and the sentinel scores 0.
  set_all(dec->attn2->W_a, 0);
  set_all(dec->attn2->U_a, 0);
  set_all(dec->attn2->b_a, 50);
  set_all(dec->attn2->w, -50.0 / double(c.attn_dim));
  set_all(dec->w_a, 0);
  Rng rng(2);
  FeatureSet f = random_features(c, 4, rng);
  StepResult r = dec->step(dec->init_state(f), kBos, f);
  EXPECT_NEAR(r.trace.beta.at(0), 1.0 / (1.0 + 4.0 * std::exp(-50.0)), 1e-15);
  for (std::size_t l = 0; l < 4; ++l) EXPECT_LT(r.trace.alphas[1][l], 1e-21);
}

TEST_F(DaTest, FirstPassHead) {
  DecoderConfig c = tiny_decoder_config(DecoderKind::da, 6, 10, 4);
  auto dec = make_da(c);
  Rng rng(6);
  FeatureSet f = random_features(c, 3, rng);
  StepResult r = dec->step(dec->init_state(f), kBos, f);
  const auto p = da_first_pass_distribution(*dec, r.state).to_vector();
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
  EXPECT_EQ(da_first_pass_distribution(*dec, r.state).to_vector(), p);
  EXPECT_THROW(da_first_pass_distribution(*dec, dec->init_state(f)), ContractError);

  c.da_first_pass_head = false;
  auto no_head = make_da(c);
  StepResult rn = no_head->step(no_head->init_state(f), kBos, f);
  EXPECT_THROW(da_first_pass_distribution(*no_head, rn.state), ConfigError);
}

TEST_F(DaTest, SinglePassAblationIsAnLstm2FreeGraph) {
  DecoderConfig c = tiny_decoder_config(DecoderKind::da, 6, 10, 4);
  c.da_second_pass = false;
  auto dec = make_da(c);
  const std::size_t E = c.embed_dim, H = c.hidden_dim, d = c.feature_dim, A = c.attn_dim, V = c.vocab_size;
  for (const auto& p : dec->parameters()) {
    for (const char* owned : {"lstm2/", "attn2/", "W_x/", "W_h/", "W_s/", "W_h3/", "w_a", "W_sd/", "out/",
                              "sentinel_proj/"}) {
      EXPECT_NE(p.name.rfind(owned, 0), 0u) << p.name;
    }
  }
  const std::size_t expected = V * E                       // embedding
                               + 4 * (H * (d + E) + H * H + H)  // LSTM1 reading [v_g; w]
                               + H * (E + H)                // W_rd
                               + A * H + A * d + A + A      // first attention
                               + V * (H + d) + V;           // first-pass head
  EXPECT_EQ(parameter_count(dec->parameters()), expected);

  Rng rng(7);
  FeatureSet f = random_features(c, 3, rng);
  StepResult r = dec->step(dec->init_state(f), kBos, f);
  EXPECT_EQ(word_distribution(r).to_vector(), da_first_pass_distribution(*dec, r.state).to_vector());
  EXPECT_EQ(r.trace.alphas.size(), 1u);
}

TEST_F(DaTest, ObjectiveAddsWeightedFirstPassTerm) {
  DecoderConfig c = tiny_decoder_config(DecoderKind::da, 6, 10, 4);
  auto dec = make_da(c);
  Rng rng(8);
  FeatureSet f = random_features(c, 3, rng);
  const std::vector<int> caption = {kBos, 5, 8, kEos};
  double main = 0, aux = 0;
  DecoderState s = dec->init_state(f);
  for (std::size_t t = 0; t + 1 < caption.size(); ++t) {
    StepResult r = dec->step(s, caption[t], f);
    const auto k = std::size_t(caption[t + 1]);
    main += r.log_probs.at(k);
    aux += std::log(da_first_pass_distribution(*dec, r.state).at(k));
    s = r.state;
  }
  EXPECT_NEAR(dec->caption_objective(f, caption).item(), -(main + 0.5 * aux), 1e-12);
}

TEST_F(DaTest, GradientsMatchFiniteDifferences) {
  for (bool second : {true, false}) {
    DecoderConfig c = tiny_decoder_config(DecoderKind::da, 5, 9, 3);
    c.da_second_pass = second;
    auto dec = make_da(c);
    Rng rng(9);
    FeatureSet f = random_features(c, 3, rng);
    const std::vector<int> caption = {kBos, 6, 4, kEos};
    auto report = gradcheck_decoder(*dec, f, caption);
    EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_parameter << " second pass " << second;
  }
}

TEST_F(DaTest, MissingRegionsAreRejected) {
  DecoderConfig c = tiny_decoder_config(DecoderKind::da);
  auto dec = make_da(c);
  FeatureSet f;
  f.regions = Tensor::zeros({0, c.feature_dim});
  EXPECT_THROW(dec->init_state(f), EmptyInputError);
  Rng rng(1);
  f.regions = random_tensor({3, c.feature_dim + 1}, rng, false);
  EXPECT_THROW(dec->init_state(f), DimensionError);
}
