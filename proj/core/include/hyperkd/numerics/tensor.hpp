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

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hyperkd::numerics {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

/// Dense row-major tensor of doubles that records the operations producing
/// it. A tensor's values never change after construction; training replaces
/// parameter tensors instead of mutating them.
///
/// Any operation whose inputs include a tensor with requires_grad() produces
/// a tensor that also requires grad and remembers how to push gradients back
/// to its inputs. Calling backward() on a scalar result walks that record.
class Tensor {
 public:
  /// Empty 0-element tensor with shape {0}.
  Tensor();

  static Tensor constant(Shape shape, std::vector<double> values);
  /// Leaf that accumulates gradient.
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  bool empty() const { return size() == 0; }

  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  bool is_leaf() const;
  /// Accumulated gradient (all zeros before any backward pass reaches it).
  std::vector<double> grad() const;
  void zero_grad() const;

  /// Same values, no history, no gradient.
  Tensor detach() const;

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode pass from a single-element tensor. Interior gradients are
/// recomputed from scratch; leaf gradients accumulate across calls.
void backward(const Tensor& root);

// ---- elementwise -----------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& a);
/// Elementwise Huber penalty with threshold delta.
Tensor huber(const Tensor& a, double delta);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- broadcasting helpers ----------------------------------------------------
/// a[m,n] + b[n] for every row.
Tensor add_rowwise(const Tensor& a, const Tensor& b);
/// a[m,n] * b[n] for every row.
Tensor mul_rowwise(const Tensor& a, const Tensor& b);
/// x[C,...] * scale[c] + shift[c] with constant per-channel coefficients.
Tensor channel_affine(const Tensor& x, std::span<const double> scale,
                      std::span<const double> shift);

// ---- reductions --------------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum of a[i] * weights[i] with constant weights; returns a scalar.
Tensor weighted_sum(const Tensor& a, std::span<const double> weights);

// ---- linear algebra / layout -------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
/// out.flat[k] = a.flat[indices[k]]; indices may repeat.
Tensor gather(const Tensor& a, std::vector<std::size_t> indices, Shape shape);
/// Concatenation along axis 0; trailing dimensions must agree.
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

// ---- normalization / activation ---------------------------------------------
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
/// Normalizes x[m,n] over its last axis, then applies gain[n] and bias[n].
/// Variance is floored by eps, so a constant row maps to the bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// ---- convolution -------------------------------------------------------------
enum class Padding { kReflect, kZero };

/// Same-size cross-correlation of every channel of image[C,H,W] with one
/// kernel[kh,kw]. Kernel sides must be odd.
Tensor conv2d(const Tensor& image, const Tensor& kernel, Padding padding);
/// Channel-mixing same-size convolution with zero padding:
/// x[Cin,H,W], weight[Cout,Cin,kh,kw], bias[Cout] -> [Cout,H,W].
Tensor conv2d_multi(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Nearest-neighbour upsampling of x[C,h,w] by an integer factor.
Tensor upsample_nearest(const Tensor& x, std::size_t factor);

// ---- verification ------------------------------------------------------------
/// Worst componentwise relative error between the analytic gradient of a
/// scalar function and a sixth-order central difference (offsets up to
/// 3 * eps) at `point`, with the denominator max(|analytic|, |numeric|, 1e-8).
/// Kinked functions must stay 3 * eps away from their kinks.
double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point,
                  double eps = 1e-2);

}  // namespace hyperkd::numerics
