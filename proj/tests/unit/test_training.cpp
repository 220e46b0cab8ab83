#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "hlstmat/errors.hpp"
#include "hlstmat/gradcheck.hpp"
#include "hlstmat/training.hpp"
#include "test_support.hpp"

using namespace hlstmat;
using hlstmat::test::BanditDecoder;
using hlstmat::test::random_tensor;
namespace fs = std::filesystem;

namespace {

class TrainingTest : public ::testing::Test {
 protected:
  void TearDown() override { Tape::current().clear(); }
};

Tensor uniform_log_probs(std::size_t steps, std::size_t vocab) {
  return Tensor::from({steps, vocab}, std::vector<double>(steps * vocab, -std::log(double(vocab))), true);
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hlstmat_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainConfig small_run(const fs::path& data, const fs::path& out) {
  TrainConfig c;
  c.dataset = data;
  c.output_dir = out;
  c.model = tiny_decoder_config(DecoderKind::hlstmat_temporal, 8, 0, 3);
  c.model.feature_dim = 6;
  c.model.dropout = 0.2;
  c.epochs = 4;
  c.batch_size = 3;
  c.optimizer = OptimizerKind::adam;
  c.adam.lr = 5e-3;
  c.lr = 5e-3;
  c.early_stop_metric = "loss";
  c.seed = 11;
  return c;
}

fs::path small_dataset(const std::string& name) {
  const fs::path root = fresh_dir(name);
  SynthOptions o;
  o.n_samples = 6;
  o.vocab_size = 6;
  o.frames = 3;
  o.dim = 6;
  synth_dataset(root, o);
  return root;
}

}  // namespace

TEST_F(TrainingTest, CaptionBatchTargets) {
  const CaptionBatch b = CaptionBatch::from_captions({{kBos, 5, 6, kEos}, {kBos, 7, kEos}});
  EXPECT_EQ(b.targets[0], (std::vector<int>{5, 6, kEos}));
  EXPECT_EQ(b.targets[1], (std::vector<int>{7, kEos, kPad}));
  EXPECT_EQ(CaptionBatch::from_captions({{kBos, 5, kEos}}, 4).targets[0], (std::vector<int>{5, kEos, kPad, kPad}));
}

TEST_F(TrainingTest, MleLossExamples) {
  // Uniform over 4 words: log 4 per unmasked step, averaged over captions.
  const CaptionBatch b = CaptionBatch::from_captions({{kBos, 5, 6, kEos}, {kBos, 7, kEos}});
  std::vector<Tensor> lp = {uniform_log_probs(3, 8), uniform_log_probs(3, 8)};
  EXPECT_NEAR(mle_loss(lp, b).item(), (3 + 2) * std::log(8.0) / 2, 1e-12);

  // A peaked distribution on the target costs nothing.
  std::vector<double> v(2 * 3, -1e3);
  v[0 * 3 + 1] = 0;
  v[1 * 3 + 2] = 0;
  CaptionBatch one;
  one.targets = {{1, 2}};
  EXPECT_NEAR(mle_loss({Tensor::from({2, 3}, v, true)}, one).item(), 0.0, 1e-12);

  // d loss / d log_probs is -1/B at each target, zero elsewhere.
  std::vector<Tensor> g = {uniform_log_probs(3, 8), uniform_log_probs(3, 8)};
  backward(mle_loss(g, b));
  EXPECT_EQ(g[1].grad()[0 * 8 + 7], -0.5);
  EXPECT_EQ(g[1].grad()[2 * 8 + kPad], 0.0);
  EXPECT_EQ(g[0].grad()[0 * 8 + 4], 0.0);

  CaptionBatch bad;
  bad.targets = {{9}};
  EXPECT_THROW(mle_loss({uniform_log_probs(1, 8)}, bad), VocabularyError);
}

TEST_F(TrainingTest, ContrastiveLossExamples) {
  auto matrix = [](std::vector<std::vector<double>> rows) {
    std::vector<std::vector<Tensor>> S;
    for (const auto& r : rows) {
      auto& row = S.emplace_back();
      for (double x : r) row.push_back(Tensor::scalar(x));
    }
    return S;
  };
  EXPECT_EQ(contrastive_loss_from_similarities(matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}), 0.2).item(), 0.0);
  // All similarities equal: each pair pays the margin in both directions.
  EXPECT_NEAR(contrastive_loss_from_similarities(matrix({{0.3, 0.3}, {0.3, 0.3}}), 0.2).item(), 0.4, 1e-12);
  EXPECT_THROW(contrastive_loss_from_similarities(matrix({{1}}), 0.2), ContractError);
  EXPECT_THROW(contrastive_loss_from_similarities(matrix({{1, 0}, {0}}), 0.2), DimensionError);
}

// Brute force over every (i, j) with the hardest negative picked by hand.
TEST_F(TrainingTest, ContrastiveLossMatchesBruteForce) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    ContrastiveEncoder enc = ContrastiveEncoder::create(12, 5, 6, 4, 3, rng);
    const std::size_t B = 2 + rng.below(4);
    std::vector<Tensor> images;
    std::vector<std::vector<int>> captions;
    for (std::size_t i = 0; i < B; ++i) {
      images.push_back(random_tensor({4}, rng, false));
      std::vector<int> c = {kBos};
      for (std::size_t k = 0; k < 1 + rng.below(4); ++k) c.push_back(int(4 + rng.below(8)));
      captions.push_back(c);
    }
    std::vector<std::vector<double>> S(B, std::vector<double>(B));
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t j = 0; j < B; ++j) S[i][j] = enc.similarity(images[i], captions[j]).item();
    }
    double expected = 0;
    for (std::size_t i = 0; i < B; ++i) {
      double worst_c = -INFINITY, worst_x = -INFINITY;
      for (std::size_t j = 0; j < B; ++j) {
        if (j == i) continue;
        worst_c = std::max(worst_c, S[i][j]);
        worst_x = std::max(worst_x, S[j][i]);
      }
      expected += std::max(0.0, enc.margin - S[i][i] + worst_c) + std::max(0.0, enc.margin - S[i][i] + worst_x);
    }
    expected /= double(B);
    EXPECT_NEAR(contrastive_loss(enc, images, captions).item(), expected, 1e-9);

    // Cosine similarity ignores image scale.
    std::vector<Tensor> scaled;
    for (const auto& x : images) scaled.push_back(scale(x, 3.5));
    EXPECT_NEAR(contrastive_loss(enc, scaled, captions).item(), expected, 1e-9);

    EXPECT_THROW(contrastive_loss(enc, {images[0]}, {captions[0]}), ContractError);
    Tape::current().clear();
  }
}

TEST_F(TrainingTest, ContrastiveGradients) {
  Rng rng(3);
  ContrastiveEncoder enc = ContrastiveEncoder::create(10, 3, 4, 3, 3, rng);
  std::vector<Tensor> images = {random_tensor({3}, rng, false), random_tensor({3}, rng, false),
                                random_tensor({3}, rng, false)};
  std::vector<std::vector<int>> caps = {{kBos, 4, 5}, {kBos, 6}, {kBos, 7, 8, 9}};
  auto report = gradcheck([&] { return contrastive_loss(enc, images, caps); }, enc.parameters());
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_parameter;
}

TEST_F(TrainingTest, RewardStepGradientIsAdvantageTimesScore) {
  BanditDecoder policy;
  {
    Tensor t = policy.theta;
    auto d = t.mutable_data();
    d[0] = 0.4;
    d[1] = -0.3;
  }
  DecodeOptions o;
  o.max_len = 1;
  const std::vector<double> p = softmax(policy.theta).to_vector();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (double sign : {1.0, -1.0}) {
      policy.theta.zero_grad();
      Rng rng(seed);
      RewardFn reward = [&](const std::vector<int>& t) { return sign * (t.at(0) == BanditDecoder::kArmA ? 2.0 : 0.5); };
      const RewardStep s = reward_gradient_step(policy, {}, reward, rng, o, 0.5);
      EXPECT_EQ(s.advantage, s.sample_reward - s.baseline_reward);
      EXPECT_EQ(s.baseline, (std::vector<int>{BanditDecoder::kArmA}));
      ASSERT_EQ(s.sample.size(), 1u);
      const std::size_t arm = std::size_t(s.sample[0] - BanditDecoder::kArmA);
      ASSERT_LT(arm, 2u);
      // grad of -0.5 A log p(arm) w.r.t. theta is -0.5 A (onehot - p).
      for (std::size_t w = 0; w < 2; ++w) {
        const double expected = -0.5 * s.advantage * ((w == arm ? 1.0 : 0.0) - p[w]);
        const double got = policy.theta.has_grad() ? policy.theta.grad()[w] : 0.0;
        EXPECT_NEAR(got, expected, 1e-12);
      }
    }
  }
}

TEST_F(TrainingTest, ZeroAdvantageLeavesGradientsUntouched) {
  DecoderConfig c = tiny_decoder_config(DecoderKind::hlstmat_temporal, 5, 10, 2);
  auto dec = build_variant(c);
  Rng rng(1);
  FeatureSet f = random_features(c, 3, rng);
  DecodeOptions o;
  o.max_len = 5;
  zero_grads(dec->parameters());
  const RewardStep s = reward_gradient_step(*dec, f, [](const std::vector<int>&) { return 2.0; }, rng, o);
  EXPECT_EQ(s.advantage, 0.0);
  for (const auto& p : dec->parameters()) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) EXPECT_EQ(g, 0.0) << p.name;
  }
  EXPECT_EQ(Tape::current().size(), 0u);
}

TEST_F(TrainingTest, BanditLearnsRewardedArm) {
  BanditDecoder policy;
  EXPECT_DOUBLE_EQ(policy.p_a(), 0.5);
  DecodeOptions o;
  o.max_len = 1;
  Rng rng(5);
  RewardFn reward = [](const std::vector<int>& t) { return t == std::vector<int>{BanditDecoder::kArmA} ? 1.0 : 0.0; };
  for (int step = 0; step < 200; ++step) {
    zero_grads(policy.parameters());
    reward_gradient_step(policy, {}, reward, rng, o);
    sgd_update(policy.parameters(), 0.1);
  }
  EXPECT_GT(policy.p_a(), 0.9);
}

TEST_F(TrainingTest, CiderRewardScoresIds) {
  CiderReward r({{{5, 6, 7}, {5, 6, 8}}, {{9, 10}, {9, 11}}, {{12, 13, 14}, {12, 13}}});
  EXPECT_GT(r(0, {5, 6, 7}), r(0, {9, 10}));
  EXPECT_EQ(r(1, {}), 0.0);
}

TEST_F(TrainingTest, AdadeltaFirstStepClosedForm) {
  Tensor x = Tensor::from({2}, {1.0, -2.0}, true);
  x.mutable_grad()[0] = 1.0;
  x.mutable_grad()[1] = -3.0;
  AdadeltaState st;
  const double eps = 1e-6;
  adadelta_update({{"x", x}}, st, 0.95, eps);
  EXPECT_NEAR(x.to_vector()[0], 1.0 - std::sqrt(eps) / std::sqrt(0.05 + eps), 1e-15);
  EXPECT_NEAR(x.to_vector()[1], -2.0 + 3.0 * std::sqrt(eps) / std::sqrt(0.05 * 9 + eps), 1e-15);

  Tensor y = Tensor::from({3}, {0, 0, 0}, true);
  EXPECT_THROW(adadelta_update({{"y", y}}, st), DimensionError);
}

TEST_F(TrainingTest, AdamSchedule) {
  AdamOptions o;
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 0), 5e-4);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 14), 5e-4);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 15), 4e-4);
  EXPECT_DOUBLE_EQ(scheduled_lr(o, 30), 5e-4 * 0.8 * 0.8);
  EXPECT_NEAR(scheduled_lr(o, 30), 3.2e-4, 1e-18);
  Optimizer opt(OptimizerKind::adam, 5e-4, o);
  EXPECT_DOUBLE_EQ(opt.learning_rate(16), 4e-4);
}

TEST_F(TrainingTest, AdamMinimisesAQuadratic) {
  Tensor x = Tensor::from({1}, {0.0}, true);
  AdamState st;
  AdamOptions o;
  o.lr = 0.05;
  o.decay_every = 100;
  for (std::size_t step = 0; step < 2000; ++step) {
    x.zero_grad();
    const Tensor d = add_scalar(x, -3.0);
    backward(sum(mul(d, d)));
    adam_update({{"x", x}}, st, scheduled_lr(o, step), o);
    Tape::current().clear();
  }
  EXPECT_NEAR(x.to_vector()[0], 3.0, 1e-6);
}

TEST_F(TrainingTest, ClippingIsElementwiseAndIdempotent) {
  Tensor x = Tensor::from({4}, {0, 0, 0, 0}, true);
  const double g[4] = {-20, 5, 11, 10};
  for (int i = 0; i < 4; ++i) x.mutable_grad()[std::size_t(i)] = g[i];
  clip_gradients({{"x", x}}, 10);
  const std::vector<double> once(x.grad().begin(), x.grad().end());
  EXPECT_EQ(once, (std::vector<double>{-10, 5, 10, 10}));
  clip_gradients({{"x", x}}, 10);
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), once);
  EXPECT_THROW(clip_gradients({{"x", x}}, 0), ContractError);
}

TEST_F(TrainingTest, EarlyStoppingAfterExactlyPatienceStagnantEpochs) {
  EarlyStopping s;
  s.patience = 20;
  EXPECT_TRUE(s.update(0.5, 0));
  EXPECT_TRUE(s.update(0.6, 1));
  for (std::size_t e = 2; e < 21; ++e) {
    EXPECT_FALSE(s.update(e % 2 ? 0.6 : 0.1, e));  // ties do not count as progress
    EXPECT_FALSE(s.should_stop()) << e;
  }
  EXPECT_FALSE(s.update(0.6, 21));
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch, 1u);
  EXPECT_EQ(s.stagnant, 20u);
}

TEST_F(TrainingTest, EpochsAreReproducible) {
  const fs::path data = small_dataset("determinism_data");
  std::vector<double> a, b;
  for (auto* out : {&a, &b}) {
    Trainer t = Trainer::from_config(small_run(data, fresh_dir("determinism_run")));
    for (const auto& e : t.run().history) out->push_back(e.loss);
  }
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a, b);
  EXPECT_LT(a.back(), a.front());
}

TEST_F(TrainingTest, ResumeContinuesTheSameTrajectory) {
  const fs::path data = small_dataset("resume_data");
  Trainer full = Trainer::from_config(small_run(data, fresh_dir("resume_full")));
  const auto reference = full.run().history;

  const fs::path out = fresh_dir("resume_split");
  TrainConfig first = small_run(data, out);
  first.epochs = 2;
  Trainer::from_config(first).run();
  TrainConfig second = small_run(data, out);
  second.resume = true;
  const auto rest = Trainer::from_config(second).run().history;
  ASSERT_EQ(rest.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(rest[k].epoch, k + 2);
    EXPECT_NEAR(rest[k].loss, reference[k + 2].loss, 1e-9);
  }
}

TEST_F(TrainingTest, TrainerRejectsBadSetups) {
  const fs::path data = small_dataset("bad_setup_data");
  TrainConfig c = small_run(data, fresh_dir("bad_setup_run"));
  c.model.vocab_size = 999;
  EXPECT_THROW(Trainer::from_config(c), ConfigError);
  c = small_run(data, fresh_dir("bad_setup_run"));
  c.dataset.clear();
  EXPECT_THROW(Trainer::from_config(c), ConfigError);
  EXPECT_THROW(parse_optimizer_kind("rmsprop"), ConfigError);
}
