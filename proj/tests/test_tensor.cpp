// Copyright 2026 The EvSign Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "evsign/gradcheck.hpp"
#include "evsign/nn.hpp"
#include "evsign/tensor.hpp"
#include "oracles.hpp"

namespace evsign {
namespace {

using T = double;
using Td = Tensor<double>;

Td random_param(std::mt19937_64& rng, const Shape& shape) {
  return Td::parameter(shape, oracle::random_vector(rng, numel(shape)));
}

TEST(Ops, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(1);
  const auto x = Td::from({4, 7}, oracle::random_vector(rng, 28, -5, 5));
  const auto s = softmax(x, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    double total = 0;
    for (std::size_t j = 0; j < 7; ++j) total += s.at(i * 7 + j);
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Ops, SoftmaxOverEmptyAxisIsAnError) {
  EXPECT_THROW(softmax(Td::zeros({3, 0}), 1), TensorError);
}

TEST(Ops, IdentityMatmul) {
  std::mt19937_64 rng(2);
  const auto a = Td::from({3, 5}, oracle::random_vector(rng, 15));
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 4] = 1;
  const auto r = matmul(Td::from({3, 3}, eye), a);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_EQ(r.at(i), a.at(i));
}

TEST(Ops, MatmulShapeMismatchThrows) {
  EXPECT_THROW(matmul(Td::zeros({2, 3}), Td::zeros({2, 3})), TensorError);
}

TEST(Ops, ReluOfOppositesIsOrthogonal) {
  std::mt19937_64 rng(3);
  const auto x = Td::from({20}, oracle::random_vector(rng, 20));
  const auto p = mul(relu(x), relu(scalar_mul(x, -1.0)));
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(p.at(i), 0.0);
}

TEST(Ops, ReshapeAndTransposeRoundTrip) {
  std::mt19937_64 rng(4);
  const auto x = Td::from({3, 4}, oracle::random_vector(rng, 12));
  const auto r = reshape(reshape(x, {2, 6}), {3, 4});
  const auto t = transpose(transpose(x));
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(r.at(i), x.at(i));
    EXPECT_EQ(t.at(i), x.at(i));
  }
}

TEST(Ops, MaxPoolDropsOddTail) {
  const auto x = Td::from({3, 2}, {1, 5, 4, 2, 9, 9});
  const auto y = max_pool_1d(x);
  ASSERT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_EQ(y.at(0), 4);
  EXPECT_EQ(y.at(1), 5);
}

TEST(Ops, RowMinmaxNormalizeConstantRowIsOnes) {
  const auto y = row_minmax_normalize(Td::from({2, 3}, {1, 2, 3, 4, 4, 4}));
  const std::vector<double> expect{0, 0.5, 1, 1, 1, 1};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(y.at(i), expect[i]);
}

TEST(Backward, SumGivesOnes) {
  const auto x = Td::parameter({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto g = backward(sum(x));
  for (double v : g.of(x)) EXPECT_EQ(v, 1.0);
}

TEST(Backward, ProductOfScalars) {
  const auto x = Td::parameter({1}, {3.0});
  const auto y = Td::parameter({1}, {-2.0});
  const auto g = backward(sum(mul(x, y)));
  EXPECT_EQ(g.of(x)[0], -2.0);
  EXPECT_EQ(g.of(y)[0], 3.0);
}

TEST(Backward, NonScalarLossThrows) {
  const auto x = Td::parameter({2}, {1, 2});
  EXPECT_THROW(backward(relu(x)), TensorError);
}

TEST(Backward, SharedNodeAccumulates) {
  const auto x = Td::parameter({1}, {2.0});
  // d/dx (x*x + x) = 2x + 1
  const auto g = backward(sum(add(mul(x, x), x)));
  EXPECT_EQ(g.of(x)[0], 5.0);
}

TEST(Backward, IsDeterministic) {
  std::mt19937_64 rng(5);
  const auto w = random_param(rng, {6, 4});
  const auto x = Td::from({3, 6}, oracle::random_vector(rng, 18));
  auto f = [&] { return sum(softmax(matmul(x, w), 1)); };
  const auto a = backward(mul(f(), f()));
  const auto b = backward(mul(f(), f()));
  const auto ga = a.of(w), gb = b.of(w);
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_EQ(ga[i], gb[i]);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  const auto x = Td::parameter({2}, {1, 2});
  NoGradGuard guard;
  EXPECT_FALSE(relu(x).requires_grad());
}

TEST(Backward, TwoLayerMlpMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const auto x = Td::from({5, 4}, oracle::random_vector(rng, 20));
  const auto w1 = random_param(rng, {4, 8}), b1 = random_param(rng, {8});
  const auto w2 = random_param(rng, {8, 3}), b2 = random_param(rng, {3});
  auto f = [&] { return mean(log_softmax(linear(relu(linear(x, w1, b1)), w2, b2), 1)); };
  const auto rep = finite_diff_check<double>(f, {w1, b1, w2, b2}, {1e-6, 1e-8, 0, 0});
  EXPECT_LT(rep.max_rel_err, 1e-4);
  EXPECT_EQ(rep.coords_checked, 32u + 8 + 24 + 3);
}

TEST(FiniteDiff, SquareAtThree) {
  FdOptions o;
  o.eps = 1e-4;
  const double d = fd_derivative([](double x) { return x * x; }, 3.0, o);
  EXPECT_NEAR(d, 6.0, 6.0 * 1e-6);
}

TEST(FiniteDiff, ExactOnLinearFunctions) {
  for (double eps : {1e-2, 1e-4, 1e-6}) {
    FdOptions o;
    o.eps = eps;
    const double d = fd_derivative([](double x) { return 2.5 * x - 1.0; }, 0.75, o);
    EXPECT_NEAR(d, 2.5, 1e-9 / eps);
  }
}

TEST(FiniteDiff, ConstantFunctionHasZeroGradient) {
  const auto p = Td::parameter({3}, {1, 2, 3});
  const auto rep = finite_diff_check<double>([] { return Td::scalar(4.0); }, {p});
  EXPECT_EQ(rep.max_abs_err, 0.0);
  EXPECT_EQ(rep.max_rel_err, 0.0);
}

TEST(FiniteDiff, RejectsNonPositiveEpsAndNonFinite) {
  const auto p = Td::parameter({1}, {1.0});
  EXPECT_THROW(finite_diff_check<double>([&] { return sum(p); }, {p}, {0.0, 1e-8, 0, 0}), TensorError);
  EXPECT_THROW(finite_diff_check<double>([&] { return sum(log(scalar_mul(p, 0.0))); }, {p}), TensorError);
}

TEST(CheckedMode, NonFiniteResultThrows) {
  set_checked_mode(true);
  const auto x = Td::from({2}, {0.0, 1.0});
  EXPECT_THROW(log(x), NumericError);
  set_checked_mode(false);
  EXPECT_NO_THROW(log(x));
}

TEST(Gradients, MergeAndScale) {
  const auto x = Td::parameter({2}, {1, 2});
  auto a = backward(sum(x));
  const auto b = backward(sum(scalar_mul(x, 3.0)));
  a.merge(b);
  a.scale(0.5);
  EXPECT_EQ(a.of(x)[0], 2.0);
  EXPECT_EQ(a.of(x)[1], 2.0);
}

TEST(Attention, RowsAreStochasticAndCausal) {
  std::mt19937_64 rng(7);
  const auto q = Td::from({5, 8}, oracle::random_vector(rng, 40));
  const auto k = Td::from({5, 8}, oracle::random_vector(rng, 40));
  const auto v = Td::from({5, 8}, oracle::random_vector(rng, 40));
  nn::AttentionOptions<double> opt;
  opt.causal = true;
  const auto out = nn::attend(q, k, v, 2, opt);
  for (const auto& w : out.weights)
    for (std::size_t i = 0; i < 5; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        total += w.at(i * 5 + j);
        if (j > i) {
          EXPECT_EQ(w.at(i * 5 + j), 0.0);
        }
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
}

TEST(PositionalEncoding, FirstRowAndRange) {
  const auto pe = nn::sinusoidal_pe<double>(3, 8);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(pe.at(2 * i), 0.0);
    EXPECT_EQ(pe.at(2 * i + 1), 1.0);
  }
  for (double v : pe.data()) EXPECT_LE(std::abs(v), 1.0);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b) {
      bool differ = false;
      for (std::size_t c = 0; c < 8; ++c) differ |= pe.at(a * 8 + c) != pe.at(b * 8 + c);
      EXPECT_TRUE(differ);
    }
  EXPECT_THROW(nn::sinusoidal_pe<double>(3, 7), std::invalid_argument);
}

TEST(Rng, DeriveSeedSeparatesStreams) {
  EXPECT_NE(nn::derive_seed(7, 1), nn::derive_seed(7, 2));
  EXPECT_NE(nn::derive_seed(7, 1), nn::derive_seed(8, 1));
  EXPECT_EQ(nn::derive_seed(7, 1), nn::derive_seed(7, 1));
}

TEST(GradientSuite, PrimitivesPass) {
  gradcheck::SuiteOptions opt;
  for (const auto& r : gradcheck::run_all(opt)) {
    if (r.suite != "primitive") continue;
    EXPECT_TRUE(r.passed) << r.name << " max_rel " << r.max_rel_err;
  }
}

}  // namespace
}  // namespace evsign
