#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "hlstmat/errors.hpp"
#include "hlstmat/gradcheck.hpp"
#include "hlstmat/tensor.hpp"
#include "test_support.hpp"

using namespace hlstmat;
using hlstmat::test::random_tensor;

namespace {

class TensorTest : public ::testing::Test {
 protected:
  void TearDown() override { Tape::current().clear(); }
};

void expect_values(const Tensor& t, const std::vector<double>& expected, double tol = 0.0) {
  ASSERT_EQ(t.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t.at(i), expected[i], tol) << "entry " << i;
}

// sum(w * f(x)) with fixed random weights, so every output entry matters.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(random_tensor(y.shape(), rng, false), y));
}

}  // namespace

TEST_F(TensorTest, MatmulIdentityAndProjector) {
  Tensor I = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Tensor A = Tensor::matrix(2, 2, {1, 2, 3, 4});
  expect_values(matmul(I, A), {1, 2, 3, 4});
  Tensor P = Tensor::matrix(2, 2, {1, 0, 0, 0});
  Tensor x = Tensor::matrix(2, 1, {5, 7});
  Tensor y = matmul(P, x);
  EXPECT_EQ(y.shape(), (Shape{2, 1}));
  expect_values(y, {5, 0});
}

TEST_F(TensorTest, MatmulGradientMatchesFiniteDifferences) {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  auto report = gradcheck([&] { return weighted_sum(matmul(a, b), 5); }, {{"a", a}, {"b", b}},
                          {.epsilon = 1e-5, .floor = 1e-8});
  EXPECT_LT(report.max_rel_error, 1e-6) << report.worst_parameter;
}

TEST_F(TensorTest, MatmulShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] vs [2x3]"), std::string::npos) << e.what();
  }
}

TEST_F(TensorTest, ElementwiseBasics) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0)).item(), 0.5);
  EXPECT_DOUBLE_EQ(tanh(Tensor::scalar(0)).item(), 0.0);
  expect_values(mul(Tensor::vector({1, 2, 3}), Tensor::vector({4, 5, 6})), {4, 10, 18});
  EXPECT_THROW(log(Tensor::vector({1.0, 0.0})), DomainError);
  EXPECT_THROW(log(Tensor::vector({-2.0})), DomainError);
  EXPECT_THROW(add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), DimensionError);
}

TEST_F(TensorTest, ScalarIsTheOnlyBroadcast) {
  expect_values(mul(Tensor::scalar(2), Tensor::vector({1, 2, 3})), {2, 4, 6});
  EXPECT_THROW(mul(Tensor::vector({2}), Tensor::vector({1, 2, 3})), DimensionError);
  EXPECT_THROW(add(Tensor::zeros({2, 1}), Tensor::zeros({2, 2})), DimensionError);
}

TEST_F(TensorTest, MulGradientMatchesFiniteDifferences) {
  Tensor a = Tensor::vector({1, 2, 3}, true), b = Tensor::vector({4, 5, 6}, true);
  auto report = gradcheck([&] { return weighted_sum(mul(a, b), 3); }, {{"a", a}, {"b", b}},
                          {.epsilon = 1e-5, .floor = 1e-8});
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST_F(TensorTest, EveryDifferentiableOpMatchesFiniteDifferences) {
  Rng rng(2024);
  Tensor v = random_tensor({5}, rng), w = random_tensor({5}, rng);
  Tensor pos = Tensor::vector({0.7, 1.3, 2.1, 0.4, 3.3}, true);
  Tensor M = random_tensor({3, 5}, rng), N = random_tensor({3, 5}, rng);
  Tensor s = random_tensor({}, rng);
  const std::vector<int> ids = {2, 0, 2};

  const std::vector<std::pair<std::string, std::function<Tensor()>>> cases = {
      {"add", [&] { return add(v, w); }},
      {"sub", [&] { return sub(v, w); }},
      {"mul", [&] { return mul(v, w); }},
      {"div", [&] { return div(v, pos); }},
      {"neg", [&] { return neg(v); }},
      {"scale", [&] { return scale(v, -1.7); }},
      {"add_scalar", [&] { return add_scalar(v, 0.3); }},
      {"scalar_broadcast", [&] { return mul(s, v); }},
      {"sigmoid", [&] { return sigmoid(v); }},
      {"tanh", [&] { return tanh(v); }},
      {"exp", [&] { return exp(v); }},
      {"log", [&] { return log(pos); }},
      {"sqrt", [&] { return sqrt(pos); }},
      {"relu", [&] { return relu(v); }},
      {"softmax", [&] { return softmax(v); }},
      {"log_softmax", [&] { return log_softmax(v); }},
      {"concat0", [&] { return concat({v, w, pos}); }},
      {"concat_rows", [&] { return concat({M, N}, 0); }},
      {"concat_cols", [&] { return concat({M, N}, 1); }},
      {"transpose", [&] { return transpose(M); }},
      {"matvec", [&] { return matmul(M, v); }},
      {"vecmat", [&] { return matmul(Tensor::vector({0.5, -1.0, 2.0}), M); }},
      {"mean_rows", [&] { return mean_rows(M); }},
      {"max_all", [&] { return max_all(pos); }},
      {"index", [&] { return index(v, 3); }},
      {"row", [&] { return row(M, 1); }},
      {"gather_rows", [&] { return gather_rows(M, ids); }},
      {"slice", [&] { return slice(v, 1, 3); }},
      {"add_row_broadcast", [&] { return add_row_broadcast(M, v); }},
      {"reshape", [&] { return reshape(M, {5, 3}); }},
      {"stack_rows", [&] { return stack_rows({v, w}); }},
  };
  const ParameterList params = {{"v", v}, {"w", w}, {"pos", pos}, {"M", M}, {"N", N}, {"s", s}};
  for (const auto& [name, op] : cases) {
    auto report = gradcheck([&, op = op] { return weighted_sum(op(), 99); }, params);
    EXPECT_LT(report.max_rel_error, 1e-4) << name << " worst " << report.worst_parameter;
  }
}

TEST_F(TensorTest, SoftmaxExamples) {
  expect_values(softmax(Tensor::vector({0, 0})), {0.5, 0.5});
  expect_values(softmax(Tensor::vector({1000, 1000, 1000})), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
  // tests/oracles/softmax_mpmath.py
  expect_values(softmax(Tensor::vector({1, 2, 3})),
                {0.0900305731703804579980221, 0.2447284710547976524729596, 0.6652409557748218895290183}, 1e-12);
  EXPECT_THROW(softmax(Tensor::zeros({0})), DimensionError);
}

TEST_F(TensorTest, SoftmaxSumsToOneAndIsPermutationEquivariant) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<double> x(n);
    for (double& v : x) v = rng.normal(0, 5);
    const std::vector<double> p = softmax(Tensor::vector(x)).to_vector();
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    std::vector<double> xp(n);
    for (std::size_t i = 0; i < n; ++i) xp[i] = x[perm[i]];
    const std::vector<double> pp = softmax(Tensor::vector(xp)).to_vector();
    for (std::size_t i = 0; i < n; ++i) EXPECT_DOUBLE_EQ(pp[i], p[perm[i]]);
  }
}

TEST_F(TensorTest, ConcatExamples) {
  Tensor a = Tensor::matrix(1, 2, {1, 2}, true), b = Tensor::matrix(1, 1, {3}, true);
  Tensor c = concat({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{1, 3}));
  expect_values(c, {1, 2, 3});

  Tensor x = Tensor::vector({4, 5});
  expect_values(concat({x, Tensor::zeros({0})}), {4, 5});

  backward(sum(c));
  expect_values(Tensor::vector(std::vector<double>(a.grad().begin(), a.grad().end())), {1, 1});
  expect_values(Tensor::vector(std::vector<double>(b.grad().begin(), b.grad().end())), {1});

  EXPECT_THROW(concat({Tensor::zeros({2, 2}), Tensor::zeros({3, 1})}, 1), DimensionError);
}

TEST_F(TensorTest, BackwardExamples) {
  Tensor x = Tensor::vector({1, 2, 3}, true);
  backward(sum(x));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1, 1}));

  Tensor y = Tensor::vector({1, 2}, true);
  backward(sum(mul(y, y)));
  EXPECT_EQ(std::vector<double>(y.grad().begin(), y.grad().end()), (std::vector<double>{2, 4}));
}

TEST_F(TensorTest, BackwardRequiresScalarLoss) {
  Tensor x = Tensor::vector({1, 2}, true);
  EXPECT_THROW(backward(mul(x, x)), ContractError);
}

TEST_F(TensorTest, LeafGradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::vector({1, 2}, true);
  backward(sum(scale(x, 3)));
  backward(sum(scale(x, 3)));
  EXPECT_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  backward(sum(scale(x, 3)));
  EXPECT_EQ(x.grad()[0], 3.0);
}

TEST_F(TensorTest, UntrackedTensorsNeverGetTapeNodes) {
  Tensor a = Tensor::vector({1, 2}), b = Tensor::vector({3, 4});
  Tensor c = mul(a, b);
  EXPECT_FALSE(c.on_tape());
  EXPECT_FALSE(c.requires_grad());
  Tensor p = Tensor::vector({1, 2}, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(mul(p, p).on_tape());
  }
  EXPECT_TRUE(mul(p, p).on_tape());
}

TEST_F(TensorTest, TapeIsTopologicalAndReplayIsDeterministic) {
  Rng rng(8);
  Tensor W = random_tensor({4, 4}, rng), x = random_tensor({4}, rng);
  auto run = [&] {
    W.zero_grad();
    x.zero_grad();
    Tape::current().clear();
    Tensor h = x;
    for (int k = 0; k < 5; ++k) h = tanh(matmul(W, h));
    backward(sum(mul(h, softmax(h))));
    std::vector<double> g(W.grad().begin(), W.grad().end());
    g.insert(g.end(), x.grad().begin(), x.grad().end());
    return g;
  };
  const auto g1 = run();
  const auto g2 = run();
  EXPECT_EQ(g1, g2);  // bit-identical

  Tape::current().clear();
  Tensor y = mul(x, x);
  Tensor z = add(y, x);
  (void)z;
  EXPECT_EQ(Tape::current().size(), 2u);
}

TEST_F(TensorTest, ShapeInvariants) {
  EXPECT_THROW(Tensor::from({2, 3}, {1, 2, 3}), DimensionError);
  Tensor t = Tensor::zeros({2, 3}, true);
  EXPECT_EQ(t.numel(), 6u);
  backward(sum(t));
  EXPECT_EQ(t.grad().size(), t.numel());
  EXPECT_THROW(mean_rows(Tensor::zeros({0, 3})), EmptyInputError);
}

TEST_F(TensorTest, GradcheckDetectsWrongGradients) {
  // x^3 has derivative 3x^2; a graph that reports 2x must be flagged.
  Tensor x = Tensor::vector({0.5, -1.5}, true);
  auto good = gradcheck([&] { return sum(mul(x, mul(x, x))); }, {{"x", x}});
  EXPECT_LT(good.max_rel_error, 1e-8);
  Tensor fake = Tensor::vector({0.5, -1.5}, true);
  auto bad = gradcheck(
      [&] {
        // Forward x^3 while the tape only sees x^2 scaled by the detached x.
        return sum(mul(fake.detach(), mul(fake, fake)));
      },
      {{"x", fake}});
  EXPECT_GT(bad.max_rel_error, 0.1);
}
