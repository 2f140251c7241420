// Copyright 2026 The HyperKD Authors
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
#include <functional>
#include <numeric>

#include "hyperkd/error.hpp"
#include "hyperkd/numerics/tensor.hpp"
#include "hyperkd/parallel.hpp"
#include "test_support.hpp"

namespace hyperkd::numerics {
namespace {

using testing::project;
using testing::random_tensor;
using testing::signed_away_from_zero;

constexpr double kGradTol = 1e-4;
constexpr int kPoints = 10;

std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * b[t * n + j];
  return c;
}

long reflect(long i, long n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

std::vector<double> conv_oracle(const Tensor& img, const Tensor& ker, Padding pad) {
  const long C = static_cast<long>(img.dim(0)), H = static_cast<long>(img.dim(1)), W = static_cast<long>(img.dim(2));
  const long kh = static_cast<long>(ker.dim(0)), kw = static_cast<long>(ker.dim(1));
  std::vector<double> out(img.size(), 0.0);
  for (long c = 0; c < C; ++c)
    for (long i = 0; i < H; ++i)
      for (long j = 0; j < W; ++j) {
        double acc = 0.0;
        for (long u = 0; u < kh; ++u)
          for (long v = 0; v < kw; ++v) {
            long y = i + u - kh / 2, x = j + v - kw / 2;
            if (pad == Padding::kZero) {
              if (y < 0 || y >= H || x < 0 || x >= W) continue;
            } else {
              y = reflect(y, H);
              x = reflect(x, W);
            }
            acc += ker[static_cast<std::size_t>(u * kw + v)] * img[static_cast<std::size_t>((c * H + y) * W + x)];
          }
        out[static_cast<std::size_t>((c * H + i) * W + j)] = acc;
      }
  return out;
}

void expect_near_all(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

// Runs grad_check at kPoints seeded points drawn by `sample`.
void check_gradient(const std::function<Tensor(const Tensor&)>& fn,
                    const std::function<Tensor(Rng&)>& sample, std::uint64_t seed) {
  Rng rng(seed);
  for (int k = 0; k < kPoints; ++k) {
    const Tensor point = sample(rng);
    const double err = grad_check(fn, point);
    EXPECT_LE(err, kGradTol) << "point " << k;
  }
}

TEST(TensorTest, ConstructionAndShape) {
  const Tensor t = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_FALSE(t.requires_grad());
  EXPECT_THROW(Tensor::constant({2, 2}, {1, 2, 3}), InvariantError);
  EXPECT_THROW(Tensor::constant({1}, {std::nan("")}), InvariantError);
}

TEST(TensorTest, NonFiniteResultIsAnError) {
  const Tensor z = Tensor::constant({1}, {0.0});
  EXPECT_THROW(log(z), InvariantError);
  EXPECT_THROW(div(Tensor::constant({1}, {1.0}), z), InvariantError);
}

TEST(MatmulTest, IdentityLeavesMatrixUnchanged) {
  Rng rng(1);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor eye = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(matmul(eye, x).to_vector(), x.to_vector());
}

TEST(MatmulTest, HandArithmetic) {
  const Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::constant({2, 1}, {1, 1});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.to_vector(), (std::vector<double>{3, 7}));
}

TEST(MatmulTest, MatchesTripleLoop) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor({4, 4}, rng);
    const Tensor b = random_tensor({4, 4}, rng);
    expect_near_all(matmul(a, b).to_vector(), matmul_oracle(a.to_vector(), b.to_vector(), 4, 4, 4), 1e-12);
  }
}

TEST(MatmulTest, LargeProductIsThreadCountIndependent) {
  Rng rng(3);
  const Tensor a = random_tensor({96, 80}, rng);
  const Tensor b = random_tensor({80, 72}, rng);
  set_num_threads(1);
  const auto one = matmul(a, b).to_vector();
  set_num_threads(4);
  const auto four = matmul(a, b).to_vector();
  set_num_threads(1);
  EXPECT_EQ(one, four);
  expect_near_all(one, matmul_oracle(a.to_vector(), b.to_vector(), 96, 80, 72), 1e-12);
}

TEST(MatmulTest, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), InvariantError);
}

TEST(MatmulTest, GradientShapesMatchOperands) {
  Rng rng(4);
  const Tensor a = Tensor::parameter({3, 5}, testing::random_values(15, rng));
  const Tensor b = Tensor::parameter({5, 2}, testing::random_values(10, rng));
  backward(sum(matmul(a, b)));
  EXPECT_EQ(a.grad().size(), a.size());
  EXPECT_EQ(b.grad().size(), b.size());
}

TEST(Conv2dTest, UnitKernelIsIdentity) {
  Rng rng(5);
  const Tensor img = random_tensor({2, 5, 6}, rng);
  const Tensor k = Tensor::constant({1, 1}, {1.0});
  EXPECT_EQ(conv2d(img, k, Padding::kReflect).to_vector(), img.to_vector());
  EXPECT_EQ(conv2d(img, k, Padding::kZero).to_vector(), img.to_vector());
}

TEST(Conv2dTest, ZeroSumKernelOnConstantImageWithReflectPadding) {
  const Tensor img = Tensor::full({1, 6, 6}, 3.25);
  const Tensor k = Tensor::constant({3, 3}, {1, -2, 1, 0, 2, -2, 1, 0, -1});
  const Tensor out = conv2d(img, k, Padding::kReflect);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dTest, MatchesNestedLoopsUpTo8x8) {
  Rng rng(6);
  for (std::size_t h = 3; h <= 8; ++h) {
    for (std::size_t w = 3; w <= 8; ++w) {
      for (std::size_t ks : {1u, 3u}) {
        const Tensor img = random_tensor({2, h, w}, rng);
        const Tensor ker = random_tensor({ks, ks}, rng);
        for (Padding pad : {Padding::kReflect, Padding::kZero}) {
          expect_near_all(conv2d(img, ker, pad).to_vector(), conv_oracle(img, ker, pad), 1e-12);
        }
      }
    }
  }
  const Tensor img = random_tensor({1, 5, 5}, rng);
  const Tensor ker = random_tensor({3, 3}, rng);
  expect_near_all(conv2d(img, ker, Padding::kReflect).to_vector(), conv_oracle(img, ker, Padding::kReflect), 1e-12);
}

TEST(Conv2dTest, EvenKernelThrows) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 4, 4}), Tensor::zeros({2, 2}), Padding::kZero), InvariantError);
}

TEST(SoftmaxTest, UniformInputGivesUniformOutput) {
  const Tensor s = softmax(Tensor::constant({3}, {0, 0, 0}), 0);
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(SoftmaxTest, RowsSumToOne) {
  Rng rng(7);
  const Tensor x = random_tensor({6, 9}, rng, -8.0, 8.0);
  for (std::size_t axis : {0u, 1u}) {
    const Tensor s = softmax(x, axis);
    const std::size_t outer = axis == 0 ? 9 : 6, inner = axis == 0 ? 6 : 9;
    for (std::size_t o = 0; o < outer; ++o) {
      double total = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const double v = axis == 1 ? s[o * 9 + i] : s[i * 9 + o];
        EXPECT_GT(v, 0.0);
        EXPECT_LE(v, 1.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(LayerNormTest, ConstantRowMapsToZeros) {
  const Tensor x = Tensor::full({2, 5}, 4.0);
  const Tensor y = layer_norm(x, Tensor::full({5}, 1.0), Tensor::zeros({5}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNormTest, ZeroMeanUnitVariance) {
  Rng rng(8);
  const Tensor x = random_tensor({4, 16}, rng, -3.0, 5.0);
  const Tensor y = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < 16; ++j) m += y[r * 16 + j] / 16.0;
    for (std::size_t j = 0; j < 16; ++j) v += (y[r * 16 + j] - m) * (y[r * 16 + j] - m) / 16.0;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-4);  // eps in the denominator
  }
}

TEST(GeluTest, MatchesErfDefinition) {
  const Tensor x = Tensor::constant({5}, {-2, -0.5, 0, 0.7, 3});
  const Tensor y = gelu(x);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(y[i], 0.5 * x[i] * (1.0 + std::erf(x[i] / std::sqrt(2.0))), 1e-15);
  }
}

TEST(GradCheckTest, SquareAtThree) {
  const double err = grad_check([](const Tensor& x) { return sum(square(x)); }, Tensor::constant({1}, {3.0}));
  EXPECT_LE(err, 1e-8);
}

TEST(GradCheckTest, ConstantFunction) {
  const double err = grad_check([](const Tensor&) { return Tensor::scalar(2.5); }, Tensor::constant({3}, {1, 2, 3}));
  EXPECT_EQ(err, 0.0);
}

TEST(GradCheckTest, NonScalarOutputThrows) {
  EXPECT_THROW(grad_check([](const Tensor& x) { return square(x); }, Tensor::constant({2}, {1, 2})), InvariantError);
}

TEST(BackwardTest, SharedSubexpressionVisitedOnce) {
  const Tensor x = Tensor::parameter({1}, {2.0});
  const Tensor y = square(x);
  const Tensor z = sum(add(y, y));  // d/dx 2x^2 = 4x
  backward(z);
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

// ---- gradient checks on every differentiable op --------------------------------

struct UnaryCase {
  const char* name;
  std::function<Tensor(const Tensor&)> op;
  std::function<Tensor(Rng&)> sample;
};

void PrintTo(const UnaryCase& c, std::ostream* os) { *os << c.name; }

class UnaryGradTest : public ::testing::TestWithParam<UnaryCase> {};

TEST_P(UnaryGradTest, MatchesFiniteDifferences) {
  const auto& c = GetParam();
  check_gradient([&](const Tensor& x) { return project(c.op(x)); }, c.sample, 100);
}

auto any_values(Shape s) {
  return [s](Rng& rng) { return random_tensor(s, rng); };
}
auto positive_values(Shape s) {
  return [s](Rng& rng) { return random_tensor(s, rng, 0.5, 2.0); };
}
auto kink_free(Shape s, double lo, double hi) {
  return [s, lo, hi](Rng& rng) { return signed_away_from_zero(s, rng, lo, hi); };
}
// Values in [-1, 1] at least 0.05 away from +-k.
auto away_from(Shape s, double k) {
  return [s, k](Rng& rng) {
    std::vector<double> v(shape_size(s));
    for (auto& x : v) {
      do x = rng.uniform(-1.0, 1.0);
      while (std::abs(std::abs(x) - k) < 0.05);
    }
    return Tensor::constant(s, std::move(v));
  };
}

const Tensor& fixed_other() {
  static const Tensor t = [] {
    Rng rng(55);
    return random_tensor({3, 4}, rng, 0.5, 1.5);
  }();
  return t;
}

std::vector<UnaryCase> unary_cases() {
  const Shape s{3, 4};
  return {
      {"add_left", [](const Tensor& x) { return add(x, fixed_other()); }, any_values(s)},
      {"add_self", [](const Tensor& x) { return add(x, x); }, any_values(s)},
      {"sub_right", [](const Tensor& x) { return sub(fixed_other(), x); }, any_values(s)},
      {"mul_left", [](const Tensor& x) { return mul(x, fixed_other()); }, any_values(s)},
      {"mul_self", [](const Tensor& x) { return mul(x, x); }, any_values(s)},
      {"div_numerator", [](const Tensor& x) { return div(x, fixed_other()); }, any_values(s)},
      {"div_denominator", [](const Tensor& x) { return div(fixed_other(), x); }, positive_values(s)},
      {"scale", [](const Tensor& x) { return scale(x, -1.7); }, any_values(s)},
      {"add_scalar", [](const Tensor& x) { return mul(add_scalar(x, 0.3), x); }, any_values(s)},
      {"neg", [](const Tensor& x) { return neg(x); }, any_values(s)},
      {"exp", [](const Tensor& x) { return exp(x); }, any_values(s)},
      {"log", [](const Tensor& x) { return log(x); }, positive_values(s)},
      {"sqrt", [](const Tensor& x) { return sqrt(x); }, positive_values(s)},
      {"square", [](const Tensor& x) { return square(x); }, any_values(s)},
      {"abs", [](const Tensor& x) { return abs(x); }, kink_free(s, 0.05, 1.0)},
      {"relu", [](const Tensor& x) { return relu(x); }, kink_free(s, 0.05, 1.0)},
      {"tanh", [](const Tensor& x) { return tanh(x); }, any_values(s)},
      {"gelu", [](const Tensor& x) { return gelu(x); }, any_values({3, 4})},
      {"huber_quadratic", [](const Tensor& x) { return huber(x, 1.0); }, kink_free(s, 0.0, 0.95)},
      {"huber_linear", [](const Tensor& x) { return huber(x, 1.0); }, kink_free(s, 1.05, 3.0)},
      {"huber_small_delta", [](const Tensor& x) { return huber(x, 0.2); }, away_from(s, 0.2)},
      {"add_rowwise_matrix", [](const Tensor& x) { return add_rowwise(x, Tensor::constant({4}, {1, 2, 3, 4})); },
       any_values(s)},
      {"add_rowwise_vector",
       [](const Tensor& b) { return square(add_rowwise(fixed_other(), b)); }, any_values({4})},
      {"mul_rowwise_matrix", [](const Tensor& x) { return mul_rowwise(x, Tensor::constant({4}, {1, -2, 3, 0.5})); },
       any_values(s)},
      {"mul_rowwise_vector", [](const Tensor& b) { return mul_rowwise(fixed_other(), b); }, any_values({4})},
      {"channel_affine",
       [](const Tensor& x) {
         const std::vector<double> sc{0.5, 2.0, -1.0}, sh{0.1, 0.2, 0.3};
         return square(channel_affine(x, sc, sh));
       },
       any_values(s)},
      {"sum", [](const Tensor& x) { return square(sum(x)); }, any_values(s)},
      {"mean", [](const Tensor& x) { return square(mean(x)); }, any_values(s)},
      {"matmul_left", [](const Tensor& x) { return matmul(x, transpose(fixed_other())); }, any_values({2, 4})},
      {"matmul_right", [](const Tensor& x) { return matmul(fixed_other(), x); }, any_values({4, 2})},
      {"matmul_gram", [](const Tensor& x) { return matmul(x, transpose(x)); }, any_values(s)},
      {"transpose", [](const Tensor& x) { return transpose(x); }, any_values(s)},
      {"reshape", [](const Tensor& x) { return mul(reshape(x, {4, 3}), reshape(fixed_other(), {4, 3})); },
       any_values(s)},
      {"gather", [](const Tensor& x) { return square(gather(x, {0, 5, 5, 11, 2, 0}, {2, 3})); }, any_values(s)},
      {"concat_rows", [](const Tensor& x) { return square(concat_rows({x, fixed_other(), x})); }, any_values(s)},
      {"slice_rows", [](const Tensor& x) { return square(slice_rows(x, 1, 2)); }, any_values(s)},
      {"slice_cols", [](const Tensor& x) { return square(slice_cols(x, 1, 2)); }, any_values(s)},
      {"concat_cols", [](const Tensor& x) { return square(concat_cols({x, fixed_other(), x})); }, any_values(s)},
      {"softmax_rows", [](const Tensor& x) { return softmax(x, 1); }, any_values(s)},
      {"softmax_cols", [](const Tensor& x) { return softmax(x, 0); }, any_values(s)},
      {"log_softmax_rows", [](const Tensor& x) { return log_softmax(x, 1); }, any_values(s)},
      {"log_softmax_channels", [](const Tensor& x) { return log_softmax(x, 0); }, any_values({3, 2, 2})},
      {"layer_norm_input",
       [](const Tensor& x) {
         return layer_norm(x, Tensor::constant({4}, {1.0, 0.5, 2.0, -1.0}), Tensor::constant({4}, {0, 0.1, 0, 0}));
       },
       any_values(s)},
      {"layer_norm_gain",
       [](const Tensor& g) { return layer_norm(fixed_other(), g, Tensor::zeros({4})); }, any_values({4})},
      {"layer_norm_bias",
       [](const Tensor& b) { return square(layer_norm(fixed_other(), Tensor::full({4}, 1.0), b)); },
       any_values({4})},
      {"conv2d_reflect_image",
       [](const Tensor& x) {
         return conv2d(x, Tensor::constant({3, 3}, {0.1, 0.2, -0.3, 0.4, 1.0, 0.0, -0.5, 0.3, 0.2}),
                       Padding::kReflect);
       },
       any_values({2, 4, 5})},
      {"conv2d_zero_kernel",
       [](const Tensor& k) {
         static const Tensor img = [] {
           Rng rng(77);
           return random_tensor({2, 5, 4}, rng);
         }();
         return conv2d(img, k, Padding::kZero);
       },
       any_values({3, 3})},
      {"conv2d_multi_input",
       [](const Tensor& x) {
         static const Tensor w = [] {
           Rng rng(78);
           return random_tensor({3, 2, 3, 3}, rng);
         }();
         return conv2d_multi(x, w, Tensor::constant({3}, {0.1, -0.2, 0.3}));
       },
       any_values({2, 4, 4})},
      {"conv2d_multi_weight",
       [](const Tensor& w) {
         static const Tensor x = [] {
           Rng rng(79);
           return random_tensor({2, 4, 4}, rng);
         }();
         return conv2d_multi(x, w, Tensor::zeros({3}));
       },
       any_values({3, 2, 3, 3})},
      {"conv2d_multi_bias",
       [](const Tensor& b) {
         static const Tensor x = [] {
           Rng rng(80);
           return random_tensor({2, 4, 4}, rng);
         }();
         static const Tensor w = [] {
           Rng rng(81);
           return random_tensor({3, 2, 1, 1}, rng);
         }();
         return square(conv2d_multi(x, w, b));
       },
       any_values({3})},
      {"upsample_nearest", [](const Tensor& x) { return square(upsample_nearest(x, 2)); }, any_values({2, 2, 3})},
  };
}

INSTANTIATE_TEST_SUITE_P(AllOps, UnaryGradTest, ::testing::ValuesIn(unary_cases()),
                         [](const ::testing::TestParamInfo<UnaryCase>& info) { return std::string(info.param.name); });

TEST(WeightedSumTest, GradientMatchesFiniteDifferences) {
  const std::vector<double> w{0.5, -1.0, 2.0, 0.25, 3.0, -0.75};
  check_gradient([&](const Tensor& x) { return weighted_sum(square(x), w); }, any_values({2, 3}), 9);
}

}  // namespace
}  // namespace hyperkd::numerics
