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

#include "hyperkd/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "hyperkd/error.hpp"
#include "hyperkd/parallel.hpp"

namespace hyperkd::numerics {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;

namespace {

[[noreturn]] void fail(const std::string& what) { throw InvariantError("numerics", what); }

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) fail(std::string("non-finite value produced by ") + op);
  }
}

// Builds a result node. Parents are only retained when some input needs grad.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<Tensor> inputs, std::function<void(Node&)> bw) {
  check_finite(data, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(bw);
  }
  return Tensor(std::move(node));
}

bool needs(const Node& n, std::size_t i) { return n.parents[i]->requires_grad; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
         shape_string(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t r, const char* op) {
  if (a.rank() != r) {
    fail(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
         shape_string(a.shape()));
  }
}

// Unary elementwise op: f gives the value, df the derivative given (x, y).
template <class F, class DF>
Tensor unary(const Tensor& a, const char* op, F f, DF df) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_result(a.shape(), std::move(out), op, {a}, [df](Node& n) {
    auto& p = *n.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < n.data.size(); ++i) g[i] += n.grad[i] * df(p.data[i], n.data[i]);
  });
}

// c[m,n] (+)= op(a)[m,k] * op(b)[k,n]
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n, bool ta, bool tb) {
  auto rows = [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      double* ci = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta ? a[p * m + i] : a[i * k + p];
        if (av == 0.0) continue;
        if (!tb) {
          const double* bp = b + p * n;
          for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        } else {
          for (std::size_t j = 0; j < n; ++j) ci[j] += av * b[j * k + p];
        }
      }
    }
  };
  if (m * k * n >= (1u << 18)) {
    parallel_for(m, rows, 4);
  } else {
    rows(0, m);
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ------------------------------------------------------------------

Tensor::Tensor() : node_(std::make_shared<Node>()) { node_->shape = {0}; }

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    fail("data length " + std::to_string(values.size()) + " does not match shape " +
         shape_string(shape));
  }
  check_finite(values, "constant");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) fail("axis " + std::to_string(axis) + " out of range for " + shape_string(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::vector<double> Tensor::to_vector() const { return node_->data; }

double Tensor::item() const {
  if (size() != 1) fail("item() on tensor of shape " + shape_string(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::is_leaf() const { return node_->parents.empty(); }

std::vector<double> Tensor::grad() const {
  if (node_->grad.size() != node_->data.size()) return std::vector<double>(size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() const { node_->grad.clear(); }

Tensor Tensor::detach() const { return constant(shape(), node_->data); }

void backward(const Tensor& root) {
  if (root.size() != 1) fail("backward() needs a single-element tensor, got " + shape_string(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->parents.empty()) n->grad.assign(n->data.size(), 0.0);
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

// ---- elementwise ---------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), "add", {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!needs(n, k)) continue;
      auto& g = n.parents[k]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [](Node& n) {
    if (needs(n, 0)) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (needs(n, 1)) {
      auto& g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa.data[i];
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return make_result(a.shape(), std::move(out), "div", {a, b}, [](Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i] * n.data[i] / pb.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double x : a.data()) {
    if (!(x > 0.0)) fail("log of non-positive value");
  }
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  for (double x : a.data()) {
    if (x < 0.0) fail("sqrt of negative value");
  }
  return unary(a, "sqrt", [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary(a, "abs", [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, "gelu", [&](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [inv_sqrt_2pi](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Tensor huber(const Tensor& a, double delta) {
  if (!(delta > 0.0)) fail("huber delta must be positive");
  return unary(
      a, "huber",
      [delta](double x) {
        const double ax = std::abs(x);
        return ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
      },
      [delta](double x, double) { return std::clamp(x, -delta, delta); });
}

// ---- broadcasting --------------------------------------------------------------

Tensor add_rowwise(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "add_rowwise");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (b.size() != n) fail("add_rowwise: bias length " + std::to_string(b.size()) + " vs " + std::to_string(n));
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + b[j];
  return make_result(a.shape(), std::move(out), "add_rowwise", {a, b}, [m, n](Node& nd) {
    if (needs(nd, 0)) {
      auto& g = nd.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
    }
    if (needs(nd, 1)) {
      auto& g = nd.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += nd.grad[i * n + j];
    }
  });
}

Tensor mul_rowwise(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "mul_rowwise");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (b.size() != n) fail("mul_rowwise: length mismatch");
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] * b[j];
  return make_result(a.shape(), std::move(out), "mul_rowwise", {a, b}, [m, n](Node& nd) {
    auto& pa = *nd.parents[0];
    auto& pb = *nd.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += nd.grad[i * n + j] * pb.data[j];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += nd.grad[i * n + j] * pa.data[i * n + j];
    }
  });
}

Tensor channel_affine(const Tensor& x, std::span<const double> scale_c,
                      std::span<const double> shift_c) {
  if (x.rank() < 1 || x.dim(0) != scale_c.size() || scale_c.size() != shift_c.size()) {
    fail("channel_affine: coefficient length does not match leading dimension");
  }
  const std::size_t channels = x.dim(0);
  const std::size_t inner = x.size() / std::max<std::size_t>(channels, 1);
  std::vector<double> sc(scale_c.begin(), scale_c.end());
  std::vector<double> out(x.size());
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] = x[c * inner + i] * sc[c] + shift_c[c];
  return make_result(x.shape(), std::move(out), "channel_affine", {x},
                     [sc, inner](Node& n) {
                       auto& g = n.parents[0]->grad_buffer();
                       for (std::size_t c = 0; c < sc.size(); ++c)
                         for (std::size_t i = 0; i < inner; ++i)
                           g[c * inner + i] += n.grad[c * inner + i] * sc[c];
                     });
}

// ---- reductions ------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_result({1}, {s}, "sum", {a}, [](Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (auto& v : g) v += n.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) fail("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor weighted_sum(const Tensor& a, std::span<const double> weights) {
  if (weights.size() != a.size()) fail("weighted_sum: weight length mismatch");
  std::vector<double> w(weights.begin(), weights.end());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += a[i] * w[i];
  return make_result({1}, {s}, "weighted_sum", {a}, [w](Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < w.size(); ++i) g[i] += n.grad[0] * w[i];
  });
}

// ---- linear algebra / layout ---------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    fail("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false, false);
  return make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](Node& nd) {
    auto& pa = *nd.parents[0];
    auto& pb = *nd.parents[1];
    if (pa.requires_grad) {  // dA = dC * B^T
      gemm(nd.grad.data(), pb.data.data(), pa.grad_buffer().data(), m, n, k, false, true);
    }
    if (pb.requires_grad) {  // dB = A^T * dC
      gemm(pa.data.data(), nd.grad.data(), pb.grad_buffer().data(), k, m, n, true, false);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<std::size_t> idx(m * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i) idx[j * m + i] = i * n + j;
  return gather(a, std::move(idx), {n, m});
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    fail("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  return make_result(std::move(shape), a.to_vector(), "reshape", {a}, [](Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Tensor gather(const Tensor& a, std::vector<std::size_t> indices, Shape shape) {
  if (shape_size(shape) != indices.size()) fail("gather: index count does not match shape");
  const auto src = a.data();
  std::vector<double> out(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= src.size()) fail("gather: index out of range");
    out[k] = src[indices[k]];
  }
  return make_result(std::move(shape), std::move(out), "gather", {a},
                     [idx = std::move(indices)](Node& n) {
                       auto& g = n.parents[0]->grad_buffer();
                       for (std::size_t k = 0; k < idx.size(); ++k) g[idx[k]] += n.grad[k];
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rank() == 0 || Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      fail("concat_rows: trailing dimensions differ");
    }
    offsets.push_back(out.size());
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return make_result(std::move(shape), std::move(out), "concat_rows", parts,
                     [offsets](Node& n) {
                       for (std::size_t k = 0; k < n.parents.size(); ++k) {
                         if (!needs(n, k)) continue;
                         auto& g = n.parents[k]->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[offsets[k] + i];
                       }
                     });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  if (a.rank() == 0 || begin + count > a.dim(0)) fail("slice_rows: out of range");
  const std::size_t stride = a.size() / a.dim(0);
  std::vector<std::size_t> idx(count * stride);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin * stride + i;
  Shape shape = a.shape();
  shape[0] = count;
  return gather(a, std::move(idx), std::move(shape));
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_rank(a, 2, "slice_cols");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (begin + count > n) fail("slice_cols: out of range");
  std::vector<std::size_t> idx(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) idx[i * count + j] = i * n + begin + j;
  return gather(a, std::move(idx), {m, count});
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) fail("concat_cols: row counts differ");
    n += p.dim(1);
  }
  std::vector<double> out(m * n);
  std::vector<std::size_t> col0;
  std::size_t c = 0;
  for (const auto& p : parts) {
    col0.push_back(c);
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * n + c + j] = p[i * w + j];
    c += w;
  }
  return make_result({m, n}, std::move(out), "concat_cols", parts, [col0, m, n](Node& nd) {
    for (std::size_t k = 0; k < nd.parents.size(); ++k) {
      if (!needs(nd, k)) continue;
      auto& g = nd.parents[k]->grad_buffer();
      const std::size_t w = g.size() / m;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * w + j] += nd.grad[i * n + col0[k] + j];
    }
  });
}

// ---- normalization / activation --------------------------------------------------

namespace {

struct AxisLayout {
  std::size_t outer, len, inner;
};

AxisLayout axis_layout(const Tensor& a, std::size_t axis, const char* op) {
  if (axis >= a.rank()) fail(std::string(op) + ": axis out of range");
  AxisLayout l{1, a.dim(axis), 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) l.inner *= a.dim(i);
  return l;
}

}  // namespace

Tensor softmax(const Tensor& a, std::size_t axis) {
  const auto l = axis_layout(a, axis, "softmax");
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < l.len; ++j) mx = std::max(mx, a[base + j * l.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < l.len; ++j) {
        out[base + j * l.inner] = std::exp(a[base + j * l.inner] - mx);
        z += out[base + j * l.inner];
      }
      for (std::size_t j = 0; j < l.len; ++j) out[base + j * l.inner] /= z;
    }
  }
  return make_result(a.shape(), std::move(out), "softmax", {a}, [l](Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.len * l.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < l.len; ++j) dot += n.grad[base + j * l.inner] * n.data[base + j * l.inner];
        for (std::size_t j = 0; j < l.len; ++j) {
          const std::size_t i = base + j * l.inner;
          g[i] += n.data[i] * (n.grad[i] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  const auto l = axis_layout(a, axis, "log_softmax");
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < l.len; ++j) mx = std::max(mx, a[base + j * l.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < l.len; ++j) z += std::exp(a[base + j * l.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t j = 0; j < l.len; ++j) out[base + j * l.inner] = a[base + j * l.inner] - lse;
    }
  }
  return make_result(a.shape(), std::move(out), "log_softmax", {a}, [l](Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.len * l.inner + in;
        double gsum = 0.0;
        for (std::size_t j = 0; j < l.len; ++j) gsum += n.grad[base + j * l.inner];
        for (std::size_t j = 0; j < l.len; ++j) {
          const std::size_t i = base + j * l.inner;
          g[i] += n.grad[i] - std::exp(n.data[i]) * gsum;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gain.size() != n || bias.size() != n) fail("layer_norm: gain/bias length mismatch");
  std::vector<double> xhat(m * n), inv_std(m), out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = x[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gain[j] + bias[j];
    }
  }
  return make_result(x.shape(), std::move(out), "layer_norm", {x, gain, bias},
                     [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& nd) {
                       auto& px = *nd.parents[0];
                       auto& pg = *nd.parents[1];
                       auto& pb = *nd.parents[2];
                       if (pg.requires_grad) {
                         auto& g = pg.grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) g[j] += nd.grad[i * n + j] * xhat[i * n + j];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) g[j] += nd.grad[i * n + j];
                       }
                       if (px.requires_grad) {
                         auto& g = px.grad_buffer();
                         const double inv_n = 1.0 / static_cast<double>(n);
                         for (std::size_t i = 0; i < m; ++i) {
                           double mean_d = 0.0, mean_dx = 0.0;
                           for (std::size_t j = 0; j < n; ++j) {
                             const double d = nd.grad[i * n + j] * pg.data[j];
                             mean_d += d;
                             mean_dx += d * xhat[i * n + j];
                           }
                           mean_d *= inv_n;
                           mean_dx *= inv_n;
                           for (std::size_t j = 0; j < n; ++j) {
                             const double d = nd.grad[i * n + j] * pg.data[j];
                             g[i * n + j] += inv_std[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
                           }
                         }
                       }
                     });
}

// ---- convolution -------------------------------------------------------------------

namespace {

// Source index for output position i and kernel tap u, or -1 if it falls in
// zero padding.
long padded_index(long pos, long n, Padding padding) {
  if (pos >= 0 && pos < n) return pos;
  if (padding == Padding::kZero) return -1;
  if (pos < 0) return -pos;
  return 2 * (n - 1) - pos;
}

}  // namespace

Tensor conv2d(const Tensor& image, const Tensor& kernel, Padding padding) {
  require_rank(image, 3, "conv2d");
  require_rank(kernel, 2, "conv2d");
  const long kh = static_cast<long>(kernel.dim(0)), kw = static_cast<long>(kernel.dim(1));
  if (kh % 2 == 0 || kw % 2 == 0) fail("conv2d: kernel sides must be odd, got " + shape_string(kernel.shape()));
  const long C = static_cast<long>(image.dim(0)), H = static_cast<long>(image.dim(1)),
             W = static_cast<long>(image.dim(2));
  const long ph = kh / 2, pw = kw / 2;
  if (padding == Padding::kReflect && (ph >= H || pw >= W)) {
    fail("conv2d: reflect padding wider than the image");
  }
  std::vector<long> rows(static_cast<std::size_t>(H * kh)), cols(static_cast<std::size_t>(W * kw));
  for (long i = 0; i < H; ++i)
    for (long u = 0; u < kh; ++u) rows[i * kh + u] = padded_index(i + u - ph, H, padding);
  for (long j = 0; j < W; ++j)
    for (long v = 0; v < kw; ++v) cols[j * kw + v] = padded_index(j + v - pw, W, padding);

  const auto img = image.data();
  const auto ker = kernel.data();
  std::vector<double> out(image.size(), 0.0);
  for (long c = 0; c < C; ++c) {
    const double* src = img.data() + c * H * W;
    for (long i = 0; i < H; ++i) {
      for (long j = 0; j < W; ++j) {
        double acc = 0.0;
        for (long u = 0; u < kh; ++u) {
          const long r = rows[i * kh + u];
          if (r < 0) continue;
          for (long v = 0; v < kw; ++v) {
            const long q = cols[j * kw + v];
            if (q < 0) continue;
            acc += ker[u * kw + v] * src[r * W + q];
          }
        }
        out[(c * H + i) * W + j] = acc;
      }
    }
  }
  return make_result(image.shape(), std::move(out), "conv2d", {image, kernel},
                     [=](Node& n) {
                       auto& pi = *n.parents[0];
                       auto& pk = *n.parents[1];
                       double* gi = pi.requires_grad ? pi.grad_buffer().data() : nullptr;
                       double* gk = pk.requires_grad ? pk.grad_buffer().data() : nullptr;
                       for (long c = 0; c < C; ++c) {
                         for (long i = 0; i < H; ++i) {
                           for (long j = 0; j < W; ++j) {
                             const double go = n.grad[(c * H + i) * W + j];
                             for (long u = 0; u < kh; ++u) {
                               const long r = rows[i * kh + u];
                               if (r < 0) continue;
                               for (long v = 0; v < kw; ++v) {
                                 const long q = cols[j * kw + v];
                                 if (q < 0) continue;
                                 const long s = (c * H + r) * W + q;
                                 if (gi) gi[s] += go * pk.data[u * kw + v];
                                 if (gk) gk[u * kw + v] += go * pi.data[s];
                               }
                             }
                           }
                         }
                       }
                     });
}

Tensor conv2d_multi(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 3, "conv2d_multi");
  require_rank(weight, 4, "conv2d_multi");
  const long cin = static_cast<long>(x.dim(0)), H = static_cast<long>(x.dim(1)),
             W = static_cast<long>(x.dim(2));
  const long cout = static_cast<long>(weight.dim(0));
  const long kh = static_cast<long>(weight.dim(2)), kw = static_cast<long>(weight.dim(3));
  if (static_cast<long>(weight.dim(1)) != cin) fail("conv2d_multi: input channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) fail("conv2d_multi: kernel sides must be odd");
  if (static_cast<long>(bias.size()) != cout) fail("conv2d_multi: bias length mismatch");
  const long ph = kh / 2, pw = kw / 2;
  const auto xd = x.data();
  const auto wd = weight.data();
  std::vector<double> out(static_cast<std::size_t>(cout * H * W));
  for (long o = 0; o < cout; ++o) {
    for (long i = 0; i < H; ++i) {
      for (long j = 0; j < W; ++j) {
        double acc = bias[o];
        for (long c = 0; c < cin; ++c) {
          for (long u = 0; u < kh; ++u) {
            const long r = i + u - ph;
            if (r < 0 || r >= H) continue;
            for (long v = 0; v < kw; ++v) {
              const long q = j + v - pw;
              if (q < 0 || q >= W) continue;
              acc += wd[((o * cin + c) * kh + u) * kw + v] * xd[(c * H + r) * W + q];
            }
          }
        }
        out[(o * H + i) * W + j] = acc;
      }
    }
  }
  return make_result({static_cast<std::size_t>(cout), static_cast<std::size_t>(H), static_cast<std::size_t>(W)},
                     std::move(out), "conv2d_multi", {x, weight, bias}, [=](Node& n) {
                       auto& px = *n.parents[0];
                       auto& pw_ = *n.parents[1];
                       auto& pb = *n.parents[2];
                       double* gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
                       double* gw = pw_.requires_grad ? pw_.grad_buffer().data() : nullptr;
                       double* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
                       for (long o = 0; o < cout; ++o) {
                         for (long i = 0; i < H; ++i) {
                           for (long j = 0; j < W; ++j) {
                             const double go = n.grad[(o * H + i) * W + j];
                             if (gb) gb[o] += go;
                             for (long c = 0; c < cin; ++c) {
                               for (long u = 0; u < kh; ++u) {
                                 const long r = i + u - ph;
                                 if (r < 0 || r >= H) continue;
                                 for (long v = 0; v < kw; ++v) {
                                   const long q = j + v - pw;
                                   if (q < 0 || q >= W) continue;
                                   const long wi = ((o * cin + c) * kh + u) * kw + v;
                                   const long xi = (c * H + r) * W + q;
                                   if (gx) gx[xi] += go * pw_.data[wi];
                                   if (gw) gw[wi] += go * px.data[xi];
                                 }
                               }
                             }
                           }
                         }
                       }
                     });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_rank(x, 3, "upsample_nearest");
  if (factor == 0) fail("upsample_nearest: factor must be positive");
  const std::size_t C = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t H = h * factor, W = w * factor;
  std::vector<std::size_t> idx(C * H * W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) idx[(c * H + i) * W + j] = (c * h + i / factor) * w + j / factor;
  return gather(x, std::move(idx), {C, H, W});
}

// ---- verification ------------------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double eps) {
  if (!(eps > 0.0)) fail("grad_check: eps must be positive");
  const Tensor x = Tensor::parameter(point.shape(), point.to_vector());
  const Tensor y = fn(x);
  if (y.size() != 1) fail("grad_check: function output is not a scalar, shape " + shape_string(y.shape()));
  backward(y);
  const auto analytic = x.grad();

  std::vector<double> probe = point.to_vector();
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    const auto at = [&](double offset) {
      probe[i] = saved + offset;
      const double v = fn(Tensor::constant(point.shape(), probe)).item();
      probe[i] = saved;
      return v;
    };
    // Sixth-order central difference.
    const double d1 = at(eps) - at(-eps), d2 = at(2 * eps) - at(-2 * eps), d3 = at(3 * eps) - at(-3 * eps);
    const double numeric = (45.0 * d1 - 9.0 * d2 + d3) / (60.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace hyperkd::numerics
