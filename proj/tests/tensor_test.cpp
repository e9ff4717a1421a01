#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fogfuse/tensor.hpp"
#include "support/gradcheck.hpp"

namespace fogfuse {
namespace {

using testing::grad_check;
using testing::random_tensor;

// Seven nested loops, no range tricks.
Tensor64 naive_conv(const Tensor64& x, const Tensor64& k, std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = k.dim(0), KH = k.dim(2), KW = k.dim(3);
  const std::size_t HO = (H + 2 * pad - KH) / stride + 1, WO = (W + 2 * pad - KW) / stride + 1;
  Tensor64 out(Shape{B, O, HO, WO});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < HO; ++oy)
        for (std::size_t ox = 0; ox < WO; ++ox) {
          double s = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long iy = long(oy * stride + ky) - long(pad);
                const long ix = long(ox * stride + kx) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                s += x[((b * C + c) * H + iy) * W + ix] * k[((o * C + c) * KH + ky) * KW + kx];
              }
          out.mutable_data()[((b * O + o) * HO + oy) * WO + ox] = s;
        }
  return out;
}

TEST(Conv2d, SumOfOnes) {
  const Tensor x = Tensor::ones({1, 1, 3, 3});
  const Tensor k = Tensor::ones({1, 1, 3, 3});
  const Tensor y = conv2d(x, k, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_FLOAT_EQ(y.item(), 9.0f);
}

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(3);
  const Tensor x = testing::random_tensor_as<float>({2, 1, 5, 7}, rng);
  Tensor k = Tensor::zeros({1, 1, 3, 3});
  k.mutable_data()[4] = 1.0f;
  const Tensor y = conv2d(x, k, 1, 1);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, MatchesNaiveLoops) {
  std::mt19937_64 rng(11);
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      const Tensor64 x = random_tensor({2, 3, 8, 8}, rng);
      const Tensor64 k = random_tensor({4, 3, 3, 3}, rng);
      const Tensor64 fast = conv2d(x, k, stride, pad);
      const Tensor64 ref = naive_conv(x, k, stride, pad);
      ASSERT_EQ(fast.shape(), ref.shape());
      for (std::size_t i = 0; i < ref.size(); ++i) {
        EXPECT_NEAR(fast[i], ref[i], 1e-5 * std::max(1.0, std::abs(ref[i])));
      }
    }
  }
}

TEST(Conv2d, OutputExtentFormula) {
  const Tensor x = Tensor::zeros({1, 2, 7, 10});
  const Tensor k = Tensor::zeros({5, 2, 3, 3});
  EXPECT_EQ(conv2d(x, k, 2, 1).shape(), (Shape{1, 5, 4, 5}));
  EXPECT_EQ(conv2d(x, k, 1, 0).shape(), (Shape{1, 5, 5, 8}));
}

TEST(Conv2d, RejectsChannelMismatchNamingDimension) {
  const Tensor x = Tensor::zeros({1, 3, 4, 4});
  const Tensor k = Tensor::zeros({1, 2, 3, 3});
  try {
    conv2d(x, k);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("dim 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3})), ShapeError);
  EXPECT_THROW(conv2d(x, Tensor::zeros({1, 3, 3, 3}), 0), ShapeError);
}

TEST(Conv2d, LinearInInput) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor64 x = random_tensor({1, 3, 6, 9}, rng);
    const Tensor64 y = random_tensor({1, 3, 6, 9}, rng);
    const Tensor64 k = random_tensor({2, 3, 3, 3}, rng);
    const double a = 0.7, b = -1.3;
    const Tensor64 lhs = conv2d(add(scale(x, a), scale(y, b)), k, 1, 1);
    const Tensor64 rhs = add(scale(conv2d(x, k, 1, 1), a), scale(conv2d(y, k, 1, 1), b));
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-5);
  }
}

TEST(Conv2d, DeterministicBits) {
  std::mt19937_64 rng(9);
  const Tensor x = testing::random_tensor_as<float>({1, 4, 12, 40}, rng);
  const Tensor k = testing::random_tensor_as<float>({8, 4, 3, 3}, rng);
  const Tensor a = conv2d(x, k, 1, 1);
  const Tensor b = conv2d(x, k, 1, 1);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(MaxPool2, SmallWindow) {
  const Tensor x(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  EXPECT_FLOAT_EQ(maxpool2(x).item(), 4.0f);
}

TEST(MaxPool2, ConstantInputRoutesGradientToFirstCell) {
  Tensor x = Tensor::ones({1, 1, 4, 4});
  x.set_requires_grad(true);
  Tape tape;
  {
    Tape::Scope scope(tape);
    const Tensor y = maxpool2(x);
    for (float v : y.data()) EXPECT_EQ(v, 1.0f);
    backward(sum(y));
  }
  const std::vector<float> expected = {1, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(x.grad()[i], expected[i]) << i;
}

TEST(MaxPool2, MatchesBruteForceWindows) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor64 x = random_tensor({1, 1, 6, 6}, rng);
    const Tensor64 y = maxpool2(x);
    for (std::size_t oy = 0; oy < 3; ++oy)
      for (std::size_t ox = 0; ox < 3; ++ox) {
        double m = -1e300;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, x[(2 * oy + dy) * 6 + 2 * ox + dx]);
        EXPECT_EQ(y[oy * 3 + ox], m);
      }
  }
}

TEST(MaxPool2, RejectsOddExtents) {
  EXPECT_THROW(maxpool2(Tensor::zeros({1, 1, 3, 4})), ShapeError);
  EXPECT_THROW(maxpool2(Tensor::zeros({1, 1, 4, 5})), ShapeError);
}

TEST(Elementwise, BasicValues) {
  EXPECT_FLOAT_EQ(sigmoid(Tensor::scalar(0.0f)).item(), 0.5f);
  std::mt19937_64 rng(1);
  const Tensor x = testing::random_tensor_as<float>({2, 3, 4}, rng);
  const Tensor y = mul(x, Tensor::ones(x.shape()));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
  const Tensor r = relu(Tensor(Shape{3}, std::vector<float>{-1, 0, 2}));
  EXPECT_EQ(r[0], 0.0f);
  EXPECT_EQ(r[2], 2.0f);
  EXPECT_THROW(mul(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}

TEST(Concat, ShapeArithmetic) {
  const Tensor a = Tensor::zeros({1, 2, 4, 4});
  const Tensor b = Tensor::ones({1, 3, 4, 4});
  const Tensor c = concat<float>({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{1, 5, 4, 4}));
  EXPECT_EQ(c[0], 0.0f);
  EXPECT_EQ(c[2 * 16], 1.0f);
  EXPECT_THROW(concat<float>({a, Tensor::zeros({1, 3, 4, 5})}, 1), ShapeError);
}

TEST(Backward, SumAndSquare) {
  std::mt19937_64 rng(2);
  Tensor64 x = random_tensor({3, 4}, rng);
  x.set_requires_grad(true);
  {
    Tape tape;
    Tape::Scope scope(tape);
    backward(sum(x));
  }
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  x.clear_grad();
  {
    Tape tape;
    Tape::Scope scope(tape);
    backward(sum(mul(x, x)));
  }
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(Backward, RejectsNonScalarAndDetachedLoss) {
  Tensor x = Tensor::ones({2});
  x.set_requires_grad(true);
  Tape tape;
  Tape::Scope scope(tape);
  EXPECT_THROW(backward(relu(x)), ShapeError);
  EXPECT_THROW(backward(Tensor::scalar(1.0f)), std::logic_error);
}

TEST(Tape, ReplaysEachRecordOnceNewestFirst) {
  Tensor x = Tensor::ones({1, 1, 4, 4});
  x.set_requires_grad(true);
  Tape tape;
  Tape::Scope scope(tape);
  const Tensor y = sum(sigmoid(relu(maxpool2(x))));
  ASSERT_EQ(tape.size(), 4u);
  backward(y);
  EXPECT_EQ(tape.last_replay(), (std::vector<std::size_t>{3, 2, 1, 0}));
  EXPECT_TRUE(tape.empty());
}

TEST(Tape, NothingRecordedWithoutScope) {
  Tensor x = Tensor::ones({2});
  x.set_requires_grad(true);
  const Tensor y = sigmoid(x);
  EXPECT_FALSE(y.requires_grad());
}

// ---------------------------------------------------------------------------
// Finite-difference checks, 100 seeds per operation.

constexpr int kSeeds = 100;
constexpr double kTol = 1e-4;

// Values kept away from the kink so the difference quotient is meaningful.
Tensor64 away_from_zero(Tensor64 t, double margin) {
  for (double& v : t.mutable_data()) {
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
  return t;
}

TEST(GradCheck, Conv2d) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t stride = 1 + seed % 2;
    const auto r = grad_check(
        [stride](const std::vector<Tensor64>& v) { return conv2d(v[0], v[1], stride, 1); },
        {random_tensor({2, 2, 5, 6}, rng), random_tensor({3, 2, 3, 3}, rng)}, seed);
    ASSERT_LT(r.max_rel_error, kTol) << "seed " << seed;
  }
}

TEST(GradCheck, AddBias) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    const auto r = grad_check(
        [](const std::vector<Tensor64>& v) { return add_bias(v[0], v[1]); },
        {random_tensor({2, 3, 2, 2}, rng), random_tensor({3}, rng)}, seed);
    ASSERT_LT(r.max_rel_error, kTol) << "seed " << seed;
  }
}

TEST(GradCheck, MaxPool2) {
  int checked = 0;
  for (int seed = 0; checked < kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor64 x = random_tensor({1, 2, 4, 6}, rng);
    // Skip instances with near-ties inside a window: the max is not differentiable there.
    bool near_tie = false;
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t oy = 0; oy < 2; ++oy)
        for (std::size_t ox = 0; ox < 3; ++ox) {
          std::vector<double> w;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) w.push_back(x[p * 24 + (2 * oy + dy) * 6 + 2 * ox + dx]);
          std::sort(w.begin(), w.end());
          if (w[3] - w[2] < 1e-2) near_tie = true;
        }
    if (near_tie) continue;
    const auto r = grad_check([](const std::vector<Tensor64>& v) { return maxpool2(v[0]); }, {x},
                              seed);
    ASSERT_LT(r.max_rel_error, kTol) << "seed " << seed;
    ++checked;
  }
}

TEST(GradCheck, ReluSigmoidMul) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    const auto r = grad_check(
        [](const std::vector<Tensor64>& v) { return mul(relu(v[0]), sigmoid(v[1])); },
        {away_from_zero(random_tensor({3, 5}, rng), 1e-2), random_tensor({3, 5}, rng, -4, 4)},
        seed);
    ASSERT_LT(r.max_rel_error, kTol) << "seed " << seed;
  }
}

TEST(GradCheck, ConcatReshapeGather) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    const auto r = grad_check(
        [](const std::vector<Tensor64>& v) {
          const Tensor64 c = concat<double>({v[0], v[1]}, 1);
          const Tensor64 m = reshape(c, {18, 5});
          return gather_rows(m, {0, 17, 2, 2, 9});
        },
        {random_tensor({1, 2, 3, 5}, rng), random_tensor({1, 4, 3, 5}, rng)}, seed);
    ASSERT_LT(r.max_rel_error, kTol) << "seed " << seed;
  }
}

TEST(GradCheck, GatingComposite) {
  // sigmoid(conv1x1(entropy)) * features, concatenated with entropy, projected back.
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    const auto r = grad_check(
        [](const std::vector<Tensor64>& v) {
          const Tensor64& feats = v[0];
          const Tensor64& entropy = v[1];
          const Tensor64 gate = sigmoid(add_bias(conv2d(entropy, v[2]), v[3]));
          const Tensor64 fused = mul(feats, gate);
          const Tensor64 z = concat<double>({fused, entropy}, 1);
          return add(feats, conv2d(z, v[4]));
        },
        {random_tensor({1, 4, 3, 5}, rng), random_tensor({1, 2, 3, 5}, rng, 0, 1),
         random_tensor({4, 2, 1, 1}, rng), random_tensor({4}, rng),
         random_tensor({4, 6, 1, 1}, rng)},
        seed);
    ASSERT_LT(r.max_rel_error, kTol) << "seed " << seed;
  }
}

TEST(GradCheck, FlattenAnchorOutputs) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    const auto r = grad_check(
        [](const std::vector<Tensor64>& v) { return flatten_anchor_outputs<double>({v[0], v[1]}, 3, 2); },
        {random_tensor({1, 6, 2, 3}, rng), random_tensor({1, 6, 1, 2}, rng)}, seed);
    ASSERT_LT(r.max_rel_error, kTol) << "seed " << seed;
  }
}

TEST(FlattenAnchorOutputs, RowOrderIsLevelYXAnchor) {
  // Level with A=2, V=1, h=1, w=2: channel a holds value 10*a + x.
  Tensor level(Shape{1, 2, 1, 2}, std::vector<float>{0, 1, 10, 11});
  const Tensor flat = flatten_anchor_outputs<float>({level}, 2, 1);
  EXPECT_EQ(flat.shape(), (Shape{4, 1}));
  EXPECT_EQ(std::vector<float>(flat.data().begin(), flat.data().end()),
            (std::vector<float>{0, 10, 1, 11}));
}

// ---------------------------------------------------------------------------

TEST(SgdStep, SingleUpdates) {
  Tensor p = Tensor::scalar(1.0f);
  p.set_requires_grad(true);
  p.mutable_grad()[0] = 1.0f;
  std::vector<Tensor> params{p};
  sgd_step(params, 0.1, 0.0);
  EXPECT_FLOAT_EQ(p.item(), 0.9f);
  EXPECT_FALSE(p.has_grad());

  Tensor64 q = Tensor64::scalar(1.0);
  q.mutable_grad()[0] = 0.0;
  std::vector<Tensor64> qs{q};
  sgd_step(qs, 0.1, 0.0005);
  EXPECT_DOUBLE_EQ(q.item(), 0.99995);
}

TEST(SgdStep, RejectsMissingGrad) {
  std::vector<Tensor> params{Tensor::scalar(1.0f)};
  EXPECT_THROW(sgd_step(params, 0.1, 0.0), std::logic_error);
}

TEST(SgdStep, ConvergesOnQuadratic) {
  // f(p) = (p - 3)^2 has its minimum at 3.
  Tensor64 p = Tensor64::scalar(-5.0);
  p.set_requires_grad(true);
  std::vector<Tensor64> params{p};
  const Tensor64 target = Tensor64::scalar(3.0);
  for (int it = 0; it < 500; ++it) {
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor64 d = sub(p, target);
    backward(sum(mul(d, d)));
    sgd_step(params, 0.1, 0.0);
  }
  EXPECT_NEAR(p.item(), 3.0, 1e-6);
}

TEST(GlorotUniform, BoundAndDeterminism) {
  Tensor a(Shape{8, 4, 3, 3});
  Tensor b(Shape{8, 4, 3, 3});
  std::mt19937_64 r1(42), r2(42);
  glorot_uniform(a, 36, 72, r1);
  glorot_uniform(b, 36, 72, r2);
  const double bound = std::sqrt(6.0 / 108.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_LE(std::abs(a[i]), bound);
  }
}

}  // namespace
}  // namespace fogfuse
