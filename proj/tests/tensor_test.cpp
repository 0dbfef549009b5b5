/*
 * Copyright 2026 The IBIS Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "ibis/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "support/gradcheck.hpp"

namespace ibis {
namespace {

using testing::check_gradients;
using testing::random_tensor;

constexpr double kGradTolerance = 1e-4;

Tensor projection_weights(const Tensor& like, std::mt19937_64& rng) {
  return random_tensor(like.shape(), rng);
}

LstmParams random_lstm(std::size_t dim, std::size_t units,
                       std::mt19937_64& rng, double scale = 0.5) {
  return {random_tensor({dim, 4 * units}, rng, scale),
          random_tensor({units, 4 * units}, rng, scale),
          random_tensor({4 * units}, rng, scale)};
}

TEST(TensorTest, RejectsMismatchedDataLength) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor::zeros({0, 6}), DimensionError);
}

TEST(TensorTest, ReshapeKeepsDataOrder) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor y = reshape(x, {3, 2});
  EXPECT_EQ(y.shape(), (Shape{3, 2}));
  EXPECT_EQ(y[4], 5);
  EXPECT_THROW(reshape(x, {4, 2}), DimensionError);
}

TEST(Conv2dTest, TableShapeTransitions) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({32, 32, 3}, rng);
  Tensor w1 = random_tensor({2, 2, 3, 6}, rng);
  Tensor y1 = conv2d(x, w1, Tensor::zeros({6}), 1);
  EXPECT_EQ(y1.shape(), (Shape{31, 31, 6}));
  Tensor w2 = random_tensor({4, 4, 6, 9}, rng);
  Tensor y2 = conv2d(y1, w2, Tensor::zeros({9}), 1);
  EXPECT_EQ(y2.shape(), (Shape{28, 28, 9}));
  Tensor strided = conv2d(x, w1, Tensor(), 2);
  EXPECT_EQ(strided.shape(), (Shape{16, 16, 6}));
}

TEST(Conv2dTest, IdentityKernelIsIdentity) {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({5, 4, 3}, rng);
  Tensor w = Tensor::zeros({1, 1, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) w.data()[c * 3 + c] = 1.0;
  Tensor y = conv2d(x, w, Tensor::zeros({3}), 1);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2dTest, ChannelMismatchIsDimensionError) {
  EXPECT_THROW(conv2d(Tensor::zeros({4, 4, 2}), Tensor::zeros({2, 2, 3, 1}),
                      Tensor(), 1),
               DimensionError);
  EXPECT_THROW(conv2d(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 3, 1}),
                      Tensor(), 1),
               DimensionError);
}

TEST(Conv2dTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({5, 5, 2}, rng);
  Tensor w = random_tensor({3, 3, 2, 4}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor proj = random_tensor({3, 3, 4}, rng);
  auto result = check_gradients(
      [&](GradTape* tape) {
        return weighted_sum(conv2d(x, w, b, 1, tape), proj, tape);
      },
      {x, w, b});
  EXPECT_LT(result.max_relative_error, kGradTolerance);
}

TEST(BatchNormTest, TrainModeStandardizesChannels) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({4, 6, 6, 3}, rng, 3.0);
  Tensor gamma = Tensor::full({3}, 1.0), beta = Tensor::zeros({3});
  Tensor mean = Tensor::zeros({3}), var = Tensor::full({3}, 1.0);
  Tensor y = batchnorm(x, gamma, beta, mean, var,
                       {Mode::kTrain, 0.99, 1e-12});
  const std::size_t rows = y.size() / 3;
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (std::size_t r = 0; r < rows; ++r) m += y[r * 3 + c];
    m /= rows;
    for (std::size_t r = 0; r < rows; ++r) {
      v += (y[r * 3 + c] - m) * (y[r * 3 + c] - m);
    }
    v /= rows;
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-6);
  }
  // Running stats moved toward the batch statistics.
  EXPECT_NE(mean[0], 0.0);
}

TEST(BatchNormTest, InferModeUsesRunningStats) {
  Tensor x({2, 1}, {3.0, 5.0});
  Tensor gamma = Tensor::full({1}, 2.0), beta = Tensor::full({1}, 1.0);
  Tensor mean = Tensor::full({1}, 1.0), var = Tensor::full({1}, 4.0);
  Tensor y = batchnorm(x, gamma, beta, mean, var, {Mode::kInfer, 0.99, 1e-3});
  EXPECT_NEAR(y[0], 2.0 * 2.0 / std::sqrt(4.001) + 1.0, 1e-12);
  EXPECT_EQ(mean[0], 1.0);
}

TEST(BatchNormTest, NonPositiveEpsilonIsConfigError) {
  Tensor x = Tensor::zeros({2, 2});
  Tensor p = Tensor::zeros({2});
  Tensor m = Tensor::zeros({2}), v = Tensor::zeros({2});
  EXPECT_THROW(batchnorm(x, p, p, m, v, {Mode::kTrain, 0.99, 0.0}), ConfigError);
}

TEST(BatchNormTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({3, 2, 2, 3}, rng);
  Tensor gamma = random_tensor({3}, rng), beta = random_tensor({3}, rng);
  Tensor proj = projection_weights(x, rng);
  Tensor mean = Tensor::zeros({3}), var = Tensor::full({3}, 1.0);
  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    auto result = check_gradients(
        [&](GradTape* tape) {
          return weighted_sum(
              batchnorm(x, gamma, beta, mean, var, {mode, 0.99, 1e-3}, tape),
              proj, tape);
        },
        {x, gamma, beta});
    EXPECT_LT(result.max_relative_error, kGradTolerance);
  }
}

TEST(ActivationTest, FixedPoints) {
  Tensor zero = Tensor::zeros({1});
  EXPECT_EQ(activation(zero, ActivationKind::kSwish)[0], 0.0);
  EXPECT_EQ(activation(zero, ActivationKind::kTanh)[0], 0.0);
  EXPECT_EQ(activation(zero, ActivationKind::kSigmoid)[0], 0.5);
  Tensor two = Tensor::full({1}, 2.0);
  EXPECT_NEAR(activation(two, ActivationKind::kSwish)[0],
              2.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

TEST(ActivationTest, SwishGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (ActivationKind kind : {ActivationKind::kSwish, ActivationKind::kTanh,
                              ActivationKind::kSigmoid}) {
    Tensor x = random_tensor({40}, rng, 4.0);
    auto result = check_gradients(
        [&](GradTape* tape) { return sum(activation(x, kind, tape), tape); },
        {x});
    EXPECT_LT(result.max_relative_error, 1e-6);
  }
}

TEST(SoftmaxTest, UniformAndStableCases) {
  Tensor equal = Tensor::full({5}, 0.3);
  Tensor p = softmax(equal);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(p[i], 0.2, 1e-15);

  Tensor wide({2}, {1000.0, 0.0});
  Tensor q = softmax(wide);
  EXPECT_TRUE(std::isfinite(q[0]));
  EXPECT_NEAR(q[0], 1.0, 1e-15);
  EXPECT_NEAR(q[1], 0.0, 1e-15);
}

TEST(SoftmaxTest, RowsSumToOne) {
  std::mt19937_64 rng(7);
  Tensor logits = random_tensor({20, 7}, rng, 50.0);
  Tensor p = softmax(logits);
  for (std::size_t r = 0; r < 20; ++r) {
    double total = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_GE(p[r * 7 + j], 0.0);
      total += p[r * 7 + j];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(MaxPoolTest, TableShapesAndConstantInput) {
  EXPECT_EQ(maxpool2d(Tensor::zeros({31, 31, 5})).shape(), (Shape{15, 15, 5}));
  EXPECT_EQ(maxpool2d(Tensor::zeros({13, 13, 5})).shape(), (Shape{6, 6, 5}));
  Tensor c = maxpool2d(Tensor::full({4, 6, 2}, 1.5));
  for (double v : c.data()) EXPECT_EQ(v, 1.5);
}

TEST(MaxPoolTest, TieGradientGoesToFirstElement) {
  Tensor x = Tensor::full({2, 2, 1}, 1.0);
  GradTape tape;
  x.set_requires_grad(true);
  Tensor loss = sum(maxpool2d(x, &tape), &tape);
  backward(loss, tape);
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 0.0);
  EXPECT_EQ(x.grad()[3], 0.0);
}

TEST(MaxPoolTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({5, 4, 2}, rng);
  Tensor proj = random_tensor({2, 2, 2}, rng);
  auto result = check_gradients(
      [&](GradTape* tape) { return weighted_sum(maxpool2d(x, tape), proj, tape); },
      {x});
  EXPECT_LT(result.max_relative_error, kGradTolerance);
}

TEST(ConcatTest, ShapesFromTheArchitecture) {
  EXPECT_EQ(concat({Tensor::zeros({15, 15, 5}), Tensor::zeros({15, 15, 9})}, 2)
                .shape(),
            (Shape{15, 15, 14}));
  EXPECT_EQ(concat({Tensor::zeros({128}), Tensor::zeros({128})}, 0).shape(),
            (Shape{256}));
  EXPECT_THROW(
      concat({Tensor::zeros({15, 15, 5}), Tensor::zeros({14, 14, 9})}, 2),
      DimensionError);
}

TEST(ConcatTest, SingleInputIsIdentity) {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor y = concat({x}, 1);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(ConcatTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  Tensor a = random_tensor({2, 3, 2}, rng), b = random_tensor({2, 1, 2}, rng);
  Tensor proj = random_tensor({2, 4, 2}, rng);
  auto result = check_gradients(
      [&](GradTape* tape) {
        return weighted_sum(concat({a, b}, 1, tape), proj, tape);
      },
      {a, b});
  EXPECT_LT(result.max_relative_error, kGradTolerance);
}

TEST(DropoutTest, InferModeAndZeroRateAreIdentity) {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({100}, rng);
  Tensor y = dropout(x, 0.5, Mode::kInfer, rng);
  Tensor z = dropout(x, 0.0, Mode::kTrain, rng);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(y[i], x[i]);
    EXPECT_EQ(z[i], x[i]);
  }
  EXPECT_THROW(dropout(x, 1.0, Mode::kTrain, rng), ConfigError);
}

TEST(DropoutTest, PreservesExpectation) {
  std::mt19937_64 rng(12);
  Tensor x = Tensor::full({100000}, 1.0);
  Tensor y = dropout(x, 0.5, Mode::kTrain, rng);
  double mean = 0;
  for (double v : y.data()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    mean += v;
  }
  mean /= y.size();
  EXPECT_GE(mean, 0.98);
  EXPECT_LE(mean, 1.02);
}

TEST(LstmTest, ZeroParametersGiveZeroStates) {
  LstmParams p{Tensor::zeros({6, 4 * 8}), Tensor::zeros({8, 4 * 8}),
               Tensor::zeros({4 * 8})};
  std::mt19937_64 rng(13);
  Tensor seq = random_tensor({7, 6}, rng);
  for (Direction d : {Direction::kForward, Direction::kBackward}) {
    Tensor h = lstm_direction(seq, p, d);
    EXPECT_EQ(h.shape(), (Shape{7, 8}));
    for (double v : h.data()) EXPECT_EQ(v, 0.0);
  }
  Tensor both = bilstm(seq, p, p);
  for (double v : both.data()) EXPECT_EQ(v, 0.0);
}

TEST(LstmTest, ParameterCountFormula) {
  EXPECT_EQ(lstm_parameter_count(6, 64), 18176u);
  EXPECT_EQ(2 * lstm_parameter_count(6, 64), 36352u);
  std::mt19937_64 rng(14);
  EXPECT_EQ(random_lstm(6, 64, rng).parameter_count(), 18176u);
}

TEST(LstmTest, BidirectionalShape) {
  std::mt19937_64 rng(15);
  Tensor seq = random_tensor({36, 6}, rng);
  Tensor out = bilstm(seq, random_lstm(6, 64, rng, 0.1),
                      random_lstm(6, 64, rng, 0.1));
  EXPECT_EQ(out.shape(), (Shape{36, 128}));
}

TEST(LstmTest, ReversedInputSwapsDirections) {
  std::mt19937_64 rng(16);
  const std::size_t steps = 4, dim = 3, units = 2;
  Tensor seq = random_tensor({steps, dim}, rng);
  std::vector<double> reversed(seq.size());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t d = 0; d < dim; ++d) {
      reversed[t * dim + d] = seq[(steps - 1 - t) * dim + d];
    }
  }
  Tensor rseq({steps, dim}, reversed);
  LstmParams fwd = random_lstm(dim, units, rng), bwd = random_lstm(dim, units, rng);
  // Sharing one parameter set across both halves makes the swap exact.
  Tensor original = bilstm(seq, fwd, fwd);
  Tensor flipped = bilstm(rseq, fwd, fwd);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t u = 0; u < units; ++u) {
      EXPECT_NEAR(flipped[t * 2 * units + u],
                  original[(steps - 1 - t) * 2 * units + units + u], 1e-14);
    }
  }
  // Directly: a backward pass over the reversed sequence is the time-reversed
  // forward pass over the original.
  Tensor f = lstm_direction(seq, bwd, Direction::kForward);
  Tensor b = lstm_direction(rseq, bwd, Direction::kBackward);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t u = 0; u < units; ++u) {
      EXPECT_NEAR(b[t * units + u], f[(steps - 1 - t) * units + u], 1e-14);
    }
  }
}

TEST(LstmTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  Tensor seq = random_tensor({3, 2}, rng);
  for (Direction d : {Direction::kForward, Direction::kBackward}) {
    LstmParams p = random_lstm(2, 2, rng);
    auto result = check_gradients(
        [&](GradTape* tape) { return sum(lstm_direction(seq, p, d, tape), tape); },
        {seq, p.input_weights, p.recurrent_weights, p.bias});
    EXPECT_LT(result.max_relative_error, kGradTolerance);
  }
}

TEST(AttentionTest, ParameterCountForTableWidth) {
  AttentionParams p{Tensor::zeros({128, 128}), Tensor::zeros({128}),
                    Tensor::zeros({128})};
  EXPECT_EQ(p.parameter_count(), 16640u);
}

TEST(AttentionTest, IdenticalRowsGiveUniformWeights) {
  std::mt19937_64 rng(18);
  const std::size_t steps = 6, f = 4;
  Tensor row = random_tensor({f}, rng);
  std::vector<double> data;
  for (std::size_t t = 0; t < steps; ++t) {
    data.insert(data.end(), row.data().begin(), row.data().end());
  }
  Tensor seq({steps, f}, data);
  AttentionParams p{random_tensor({f, f}, rng), random_tensor({f}, rng),
                    random_tensor({f}, rng)};
  std::vector<double> alphas;
  Tensor out = additive_attention(seq, p, nullptr, &alphas);
  for (std::size_t t = 0; t < steps; ++t) {
    EXPECT_NEAR(alphas[t], 1.0 / steps, 1e-15);
    for (std::size_t j = 0; j < f; ++j) {
      EXPECT_NEAR(out[t * f + j], row[j] / steps, 1e-15);
    }
  }
}

TEST(AttentionTest, WeightsSumToOneAndGradientsMatch) {
  std::mt19937_64 rng(19);
  Tensor seq = random_tensor({5, 3}, rng);
  AttentionParams p{random_tensor({3, 3}, rng), random_tensor({3}, rng),
                    random_tensor({3}, rng)};
  std::vector<double> alphas;
  additive_attention(seq, p, nullptr, &alphas);
  double total = 0;
  for (double a : alphas) total += a;
  EXPECT_NEAR(total, 1.0, 1e-12);

  Tensor proj = random_tensor({5, 3}, rng);
  auto result = check_gradients(
      [&](GradTape* tape) {
        return weighted_sum(additive_attention(seq, p, tape), proj, tape);
      },
      {seq, p.weights, p.bias, p.context});
  EXPECT_LT(result.max_relative_error, kGradTolerance);
}

TEST(GlobalAvgPoolTest, MeansOverTime) {
  EXPECT_EQ(global_avg_pool_1d(Tensor::zeros({36, 128})).shape(),
            (Shape{128}));
  Tensor constant = Tensor::full({4, 3}, 2.5);
  Tensor pooled = global_avg_pool_1d(constant);
  for (double v : pooled.data()) EXPECT_EQ(v, 2.5);
  Tensor two({2, 3}, {0, 0, 0, 2, 4, -6});
  Tensor m = global_avg_pool_1d(two);
  EXPECT_EQ(m[0], 1.0);
  EXPECT_EQ(m[1], 2.0);
  EXPECT_EQ(m[2], -3.0);
}

TEST(DenseTest, ParameterCountsAndDegenerateWeights) {
  EXPECT_EQ(dense_parameter_count(256, 5), 1285u);
  EXPECT_EQ(dense_parameter_count(256, 8), 2056u);
  std::mt19937_64 rng(20);
  Tensor b({3}, {1.0, -2.0, 0.5});
  Tensor y = dense(random_tensor({4}, rng), Tensor::zeros({4, 3}), b);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y[j], b[j]);
  EXPECT_THROW(dense(Tensor::zeros({5}), Tensor::zeros({4, 3}), b),
               DimensionError);
}

TEST(DenseTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({4, 2}, rng), b = random_tensor({2}, rng);
  Tensor proj = random_tensor({3, 2}, rng);
  auto result = check_gradients(
      [&](GradTape* tape) { return weighted_sum(dense(x, w, b, tape), proj, tape); },
      {x, w, b});
  EXPECT_LT(result.max_relative_error, kGradTolerance);
}

TEST(CrossEntropyTest, AnalyticCases) {
  std::vector<std::size_t> labels{2};
  EXPECT_NEAR(cross_entropy(Tensor::zeros({1, 5}), labels).item(),
              std::log(5.0), 1e-12);
  Tensor confident({1, 5}, {0, 0, 60, 0, 0});
  EXPECT_LT(cross_entropy(confident, labels).item(), 1e-20);
  std::vector<std::size_t> bad{5};
  EXPECT_THROW(cross_entropy(Tensor::zeros({1, 5}), bad), InputError);
}

TEST(CrossEntropyTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(22);
  Tensor logits = random_tensor({4, 3}, rng, 2.0);
  std::vector<std::size_t> labels{0, 2, 1, 2};
  auto result = check_gradients(
      [&](GradTape* tape) { return cross_entropy(logits, labels, tape); },
      {logits});
  EXPECT_LT(result.max_relative_error, 1e-5);
}

TEST(BackwardTest, LinearAndFanOut) {
  Tensor x({3}, {1, 2, 3}, true);
  GradTape tape;
  Tensor loss = sum(x, &tape);
  backward(loss, tape);
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  EXPECT_TRUE(tape.empty());

  x.zero_grad();
  Tensor twice = sum(add(x, x, &tape), &tape);
  backward(twice, tape);
  for (double g : x.grad()) EXPECT_EQ(g, 2.0);
}

TEST(BackwardTest, NonScalarLossIsUsageError) {
  Tensor x({3}, {1, 2, 3}, true);
  GradTape tape;
  Tensor y = add(x, x, &tape);
  EXPECT_THROW(backward(y, tape), UsageError);
}

TEST(BackwardTest, NoTapeMeansNoTracking) {
  Tensor x({2}, {1, 2}, true);
  Tensor y = activation(x, ActivationKind::kTanh);
  EXPECT_FALSE(y.requires_grad());
}

TEST(AdamTest, ZeroGradientLeavesParametersAndDecaysMoments) {
  Tensor p({2}, {1.0, -1.0}, true);
  std::vector<Tensor> params{p};
  AdamState state;
  p.mutable_grad();
  adam_step(params, state);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -1.0);

  p.mutable_grad()[0] = 1.0;
  adam_step(params, state);
  const double m = state.first_moment(0)[0];
  const double v = state.second_moment(0)[0];
  p.zero_grad();
  adam_step(params, state);
  EXPECT_EQ(state.step(), 3);
  EXPECT_DOUBLE_EQ(state.first_moment(0)[0], 0.9 * m);
  EXPECT_DOUBLE_EQ(state.second_moment(0)[0], 0.999 * v);
  EXPECT_EQ(p[1], -1.0);
}

TEST(AdamTest, FirstStepMovesByLearningRate) {
  Tensor p({1}, {0.5}, true);
  p.mutable_grad()[0] = 1.0;
  std::vector<Tensor> params{p};
  AdamState state;
  adam_step(params, state);
  EXPECT_NEAR(p[0], 0.5 - 1e-3, 1e-10);
  EXPECT_EQ(state.step(), 1);
}

TEST(AdamTest, ReplayIsBitwiseDeterministic) {
  auto run = [] {
    std::mt19937_64 rng(23);
    Tensor p = random_tensor({10}, rng);
    std::vector<Tensor> params{p};
    AdamState state;
    for (int s = 0; s < 5; ++s) {
      auto g = p.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::sin(p[i] * (s + 1));
      adam_step(params, state);
    }
    return std::vector<double>(p.data().begin(), p.data().end());
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace ibis
