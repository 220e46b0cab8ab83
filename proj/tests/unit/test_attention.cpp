#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "hlstmat/attention.hpp"
#include "hlstmat/errors.hpp"
#include "hlstmat/gradcheck.hpp"
#include "test_support.hpp"

using namespace hlstmat;
using hlstmat::test::random_tensor;

namespace {

class AttentionTest : public ::testing::Test {
 protected:
  void TearDown() override { Tape::current().clear(); }
};

}  // namespace

TEST_F(AttentionTest, MeanPool) {
  EXPECT_EQ(mean_pool(Tensor::matrix(2, 2, {2, 4, 4, 8})).to_vector(), (std::vector<double>{3, 6}));
  EXPECT_EQ(mean_pool(Tensor::matrix(1, 3, {1, 2, 3})).to_vector(), (std::vector<double>{1, 2, 3}));
  Rng rng(1);
  Tensor V = random_tensor({5, 3}, rng, false);
  const auto m = mean_pool(V).to_vector();
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0;
    for (std::size_t r = 0; r < 5; ++r) s += V.at(r, c);
    EXPECT_NEAR(m[c], s / 5, 1e-15);
  }
  EXPECT_THROW(mean_pool(Tensor::zeros({0, 3})), EmptyInputError);
}

TEST_F(AttentionTest, SingleFrameAndZeroParameters) {
  Rng rng(2);
  TemporalAttention att = TemporalAttention::create(4, 3, 5, rng);
  Tensor h = random_tensor({4}, rng, false);
  Tensor one = random_tensor({1, 3}, rng, false);
  Attended a = temporal_attend(att, h, one);
  EXPECT_EQ(a.weights.to_vector(), (std::vector<double>{1.0}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(a.context.at(i), one.at(0, i));

  TemporalAttention zero = TemporalAttention::zeros(4, 3, 5);
  Tensor V = random_tensor({6, 3}, rng, false);
  Attended u = temporal_attend(zero, h, V);
  for (double w : u.weights.to_vector()) EXPECT_NEAR(w, 1.0 / 6, 1e-15);
  const auto mp = mean_pool(V).to_vector();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(u.context.at(i), mp[i], 1e-14);

  EXPECT_THROW(temporal_attend(att, h, Tensor::zeros({0, 3})), EmptyInputError);
  EXPECT_THROW(temporal_attend(att, h, Tensor::zeros({2, 4})), DimensionError);
}

TEST_F(AttentionTest, ContextIsExplicitWeightedSum) {
  Rng rng(3);
  TemporalAttention att = TemporalAttention::create(4, 3, 5, rng);
  Tensor h = random_tensor({4}, rng), V = random_tensor({7, 3}, rng);
  Attended a = temporal_attend(att, h, V);
  // Scores recomputed from the definition.
  std::vector<double> e(7);
  for (std::size_t l = 0; l < 7; ++l) {
    double s = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      double z = att.b_a.at(k);
      for (std::size_t j = 0; j < 4; ++j) z += att.W_a.at(k, j) * h.at(j);
      for (std::size_t j = 0; j < 3; ++j) z += att.U_a.at(k, j) * V.at(l, j);
      s += att.w.at(k) * std::tanh(z);
    }
    e[l] = s;
  }
  const double mx = *std::max_element(e.begin(), e.end());
  double z = 0;
  for (double& v : e) z += (v = std::exp(v - mx));
  for (std::size_t l = 0; l < 7; ++l) EXPECT_NEAR(a.weights.at(l), e[l] / z, 1e-14);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0;
    for (std::size_t l = 0; l < 7; ++l) s += a.weights.at(l) * V.at(l, c);
    EXPECT_NEAR(a.context.at(c), s, 1e-14);
  }

  ParameterList params = att.parameters();
  params.push_back({"h", h});
  params.push_back({"V", V});
  Tensor w = random_tensor({3}, rng, false);
  auto report = gradcheck([&] { return sum(mul(w, temporal_attend(att, h, V).context)); }, params);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_parameter;
}

TEST_F(AttentionTest, SpatialMatchesTemporalOnSameInputs) {
  Rng rng(4);
  TemporalAttention att = TemporalAttention::create(4, 3, 5, rng);
  Tensor h = random_tensor({4}, rng, false), R = random_tensor({9, 3}, rng, false);
  Attended t = temporal_attend(att, h, R), s = spatial_attend(att, h, R);
  EXPECT_EQ(t.weights.to_vector(), s.weights.to_vector());
  EXPECT_EQ(t.context.to_vector(), s.context.to_vector());
  EXPECT_EQ(spatial_attend(att, h, random_tensor({1, 3}, rng, false)).weights.to_vector(), (std::vector<double>{1.0}));
}

TEST_F(AttentionTest, PermutingFramesPermutesWeights) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    TemporalAttention att = TemporalAttention::create(3, 4, 6, rng);
    const std::size_t L = 2 + rng.below(8);
    Tensor h = random_tensor({3}, rng, false), V = random_tensor({L, 4}, rng, false);
    std::vector<int> perm(L);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Tensor Vp = gather_rows(V, perm);
    Attended a = temporal_attend(att, h, V), b = temporal_attend(att, h, Vp);
    for (std::size_t l = 0; l < L; ++l) EXPECT_NEAR(b.weights.at(l), a.weights.at(std::size_t(perm[l])), 1e-15);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(b.context.at(c), a.context.at(c), 1e-14);
  }
}

TEST_F(AttentionTest, AdaptiveBlendExamples) {
  Rng rng(6);
  AdaptiveGate gate = AdaptiveGate::create(3, 1, rng);
  Tensor h = random_tensor({3}, rng, false), c = random_tensor({4}, rng, false), hb = random_tensor({4}, rng, false);

  AdaptiveGate zero = gate;
  zero.W_s = Tensor::zeros({1, 3}, true);
  Blend b0 = adaptive_blend(zero, h, c, hb);
  EXPECT_DOUBLE_EQ(b0.beta.item(), 0.5);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(b0.context.at(i), (c.at(i) + hb.at(i)) / 2, 1e-15);

  AdaptiveGate sat = gate;
  sat.W_s = Tensor::matrix(1, 3, {50, 0, 0}, true);
  Blend b1 = adaptive_blend(sat, Tensor::vector({1, 0, 0}), c, hb);
  EXPECT_NEAR(b1.beta.item(), 1.0, 1e-20);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(b1.context.at(i), c.at(i), 1e-20 + 1e-15);

  Blend forced = adaptive_blend(gate, h, c, hb, 1.0);
  EXPECT_EQ(forced.context.to_vector(), c.to_vector());

  EXPECT_THROW(adaptive_blend(gate, h, c, Tensor::zeros({3})), DimensionError);
}

TEST_F(AttentionTest, AdaptiveBlendIsExactConvexCombination) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    AdaptiveGate gate = AdaptiveGate::create(5, 1, rng);
    Tensor h = random_tensor({5}, rng, false, 3.0), c = random_tensor({6}, rng, false),
           hb = random_tensor({6}, rng, false);
    Blend b = adaptive_blend(gate, h, c, hb);
    const double beta = b.beta.item();
    EXPECT_GT(beta, 0.0);
    EXPECT_LT(beta, 1.0);
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_NEAR(b.context.at(i) - (beta * c.at(i) + (1 - beta) * hb.at(i)), 0.0, 1e-12);
      EXPECT_GE(b.context.at(i), std::min(c.at(i), hb.at(i)) - 1e-15);
      EXPECT_LE(b.context.at(i), std::max(c.at(i), hb.at(i)) + 1e-15);
    }
  }
}

TEST_F(AttentionTest, ParallelBlendExamples) {
  Rng rng(8);
  AdaptiveGate gate = AdaptiveGate::create(3, 3, rng);
  EXPECT_EQ(gate.arity(), 3u);
  Tensor c1 = random_tensor({4}, rng, false), c2 = random_tensor({4}, rng, false), hb = random_tensor({4}, rng, false);

  gate.W_s = Tensor::zeros({3, 3}, true);
  Blend u = parallel_adaptive_blend(gate, random_tensor({3}, rng, false), c1, c2, hb);
  for (double b : u.beta.to_vector()) EXPECT_NEAR(b, 1.0 / 3, 1e-15);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(u.context.at(i), (c1.at(i) + c2.at(i) + hb.at(i)) / 3, 1e-15);

  gate.W_s = Tensor::matrix(3, 3, {50, 0, 0, 0, 0, 0, 0, 0, 0}, true);
  Blend s = parallel_adaptive_blend(gate, Tensor::vector({1, 0, 0}), c1, c2, hb);
  EXPECT_NEAR(s.beta.at(0), 1.0, 1e-20);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(s.context.at(i), c1.at(i), 1e-20 + 1e-15);

  EXPECT_THROW(parallel_adaptive_blend(gate, Tensor::zeros({3}), c1, Tensor::zeros({5}), hb), DimensionError);
  EXPECT_THROW(AdaptiveGate::create(3, 2, rng), ConfigError);
}

TEST_F(AttentionTest, ParallelBlendStaysInConvexHull) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    AdaptiveGate gate = AdaptiveGate::create(4, 3, rng);
    Tensor h = random_tensor({4}, rng, false, 3.0);
    Tensor c1 = random_tensor({5}, rng, false), c2 = random_tensor({5}, rng, false), hb = random_tensor({5}, rng, false);
    Blend b = parallel_adaptive_blend(gate, h, c1, c2, hb);
    const auto beta = b.beta.to_vector();
    EXPECT_NEAR(beta[0] + beta[1] + beta[2], 1.0, 1e-9);
    for (double x : beta) {
      EXPECT_GT(x, 0.0);
      EXPECT_LT(x, 1.0);
    }
    for (std::size_t i = 0; i < 5; ++i) {
      const double lo = std::min({c1.at(i), c2.at(i), hb.at(i)}), hi = std::max({c1.at(i), c2.at(i), hb.at(i)});
      EXPECT_GE(b.context.at(i), lo - 1e-15);
      EXPECT_LE(b.context.at(i), hi + 1e-15);
    }
  }
}

TEST_F(AttentionTest, GateGradients) {
  Rng rng(10);
  AdaptiveGate g1 = AdaptiveGate::create(4, 1, rng), g3 = AdaptiveGate::create(4, 3, rng);
  Tensor h = random_tensor({4}, rng), c = random_tensor({3}, rng), c2 = random_tensor({3}, rng),
         hb = random_tensor({3}, rng);
  Tensor w = random_tensor({3}, rng, false);
  ParameterList p1 = g1.parameters(), p3 = g3.parameters();
  for (auto* p : {&p1, &p3}) {
    p->push_back({"h", h});
    p->push_back({"c", c});
    p->push_back({"hb", hb});
  }
  p3.push_back({"c2", c2});
  EXPECT_LT(gradcheck([&] { return sum(mul(w, adaptive_blend(g1, h, c, hb).context)); }, p1).max_rel_error, 1e-4);
  EXPECT_LT(gradcheck([&] { return sum(mul(w, parallel_adaptive_blend(g3, h, c, c2, hb).context)); }, p3)
                .max_rel_error,
            1e-4);
}

TEST_F(AttentionTest, TraceCsvLayout) {
  AttentionTrace trace;
  trace.alpha_groups = {"alpha"};
  trace.steps.push_back({4, {{0.25, 0.75}}, {0.5}});
  trace.steps.push_back({2, {{1.0, 0.0}}, {0.125}});
  std::ostringstream os;
  const std::vector<std::string> words = {"<pad>", "<bos>", "<eos>", "<unk>", "dog"};
  trace.write_csv(os, &words);
  EXPECT_EQ(os.str(), "step,token,alpha_1,alpha_2,beta\n0,dog,0.25,0.75,0.5\n1,<eos>,1,0,0.125\n");

  AttentionTrace para;
  para.alpha_groups = {"alpha", "motion_alpha"};
  para.steps.push_back({5, {{0.5, 0.5}, {1.0}}, {0.2, 0.3, 0.5}});
  std::ostringstream ps;
  para.write_csv(ps);
  EXPECT_EQ(ps.str().substr(0, ps.str().find('\n')), "step,token,alpha_1,alpha_2,motion_alpha_1,beta1,beta2,beta3");
}
