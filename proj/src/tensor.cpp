#include "condgan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "condgan/errors.hpp"
#include "condgan/kernels.hpp"
#include "parallel.hpp"

namespace condgan {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
std::span<T> Node<T>::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), T(0));
  return grad;
}

namespace {

template <typename T>
void check_finite(const std::string& op, std::span<const T> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << "non-finite " << what << " in op '" << op << "' at element " << i;
      throw NumericError(os.str());
    }
  }
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_string(a.shape()));
  }
}

// `derivative(in, out)` is evaluated with the saved input and output values.
template <typename T, typename F, typename D>
Tensor<T> unary_map(const char* op, const Tensor<T>& x, F forward, D derivative) {
  std::vector<T> out(x.numel());
  const auto in = x.data();
  parallel_for(out.size(), [&](std::size_t i) { out[i] = forward(in[i]); });
  return make_op<T>(op, x.shape(), std::move(out), {x}, [derivative](Node<T>& self) {
    auto& in_node = *self.inputs[0];
    if (!self.wants(in_node)) return;
    auto g = in_node.ensure_grad();
    parallel_for(g.size(), [&](std::size_t i) {
      g[i] += self.grad[i] * derivative(in_node.value[i], self.value[i]);
    });
  });
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(n, T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values) {
  if (shape.empty()) throw ShapeError("tensor: rank must be at least 1");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor: zero extent in " + shape_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_string(shape));
  }
  check_finite<T>("leaf", values, "value");
  auto node = std::make_shared<Node<T>>();
  node->op = "leaf";
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  auto t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->op = "parameter";
  t.node_->ensure_grad();
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_string(shape()) + " is not a scalar");
  return node_->value[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_->grad.empty()) {
    if (node_->requires_grad) node_->ensure_grad();
    return;
  }
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto node = std::make_shared<Node<T>>();
  node->op = "leaf";
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> make_op(std::string op, Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> inputs, std::function<void(Node<T>&)> backward) {
  if (shape_numel(shape) != value.size()) {
    throw ShapeError(op + ": value size does not match shape " + shape_string(shape));
  }
  check_finite<T>(op, value, "value");
  auto node = std::make_shared<Node<T>>();
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
      node->inputs.push_back(in.node());
      node->live.push_back(in.requires_grad() ? 1 : 0);
    }
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: dimension mismatch " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  kernels::matmul<T>(a.data(), b.data(), out, m, k, n, false);
  return make_op<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (self.wants(A)) kernels::matmul_nt<T>(self.grad, B.value, A.ensure_grad(), m, n, k, true);
    if (self.wants(B)) kernels::matmul_tn<T>(A.value, self.grad, B.ensure_grad(), k, m, n, true);
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  const auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return make_op<T>("transpose", {c, r}, std::move(out), {a}, [r, c](Node<T>& self) {
    auto& A = *self.inputs[0];
    if (!self.wants(A)) return;
    auto g = A.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", w, 4);
  if (w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) {
    throw ShapeError("conv2d: kernel " + shape_string(w.shape()) + " incompatible with input " +
                     shape_string(x.shape()));
  }
  ConvGeometry g{x.dim(0), x.dim(1), w.dim(0), x.dim(2), x.dim(3), w.dim(2), stride, pad};
  if (stride == 0 || !g.valid()) {
    throw ShapeError("conv2d: non-positive output extent for input " + shape_string(x.shape()) +
                     ", kernel " + std::to_string(w.dim(2)) + ", stride " +
                     std::to_string(stride) + ", pad " + std::to_string(pad));
  }
  std::vector<T> out(g.output_size());
  kernels::conv2d_forward<T>(g, x.data(), w.data(), out);
  return make_op<T>("conv2d", {g.batch, g.out_channels, g.out_h(), g.out_w()}, std::move(out),
                    {x, w}, [g](Node<T>& self) {
                      auto& X = *self.inputs[0];
                      auto& W = *self.inputs[1];
                      if (self.wants(X))
                        kernels::conv2d_backward_input<T>(g, self.grad, W.value, X.ensure_grad(), true);
                      if (self.wants(W))
                        kernels::conv2d_backward_weight<T>(g, X.value, self.grad, W.ensure_grad(), true);
                    });
}

template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad) {
  require_rank("deconv2d", x, 4);
  require_rank("deconv2d", w, 4);
  if (w.dim(0) != x.dim(1) || w.dim(2) != w.dim(3)) {
    throw ShapeError("deconv2d: kernel " + shape_string(w.shape()) + " incompatible with input " +
                     shape_string(x.shape()));
  }
  const long long k = static_cast<long long>(w.dim(2));
  const long long s = static_cast<long long>(stride);
  const long long p = static_cast<long long>(pad);
  const long long oh = (static_cast<long long>(x.dim(2)) - 1) * s - 2 * p + k;
  const long long ow = (static_cast<long long>(x.dim(3)) - 1) * s - 2 * p + k;
  if (stride == 0 || oh < 1 || ow < 1) {
    throw ShapeError("deconv2d: invalid geometry for input " + shape_string(x.shape()) +
                     ", kernel " + std::to_string(k) + ", stride " + std::to_string(stride) +
                     ", pad " + std::to_string(pad));
  }
  // The forward-convolution geometry this op is the adjoint of.
  ConvGeometry g{x.dim(0),
                 w.dim(1),
                 w.dim(0),
                 static_cast<std::size_t>(oh),
                 static_cast<std::size_t>(ow),
                 w.dim(2),
                 stride,
                 pad};
  std::vector<T> out(g.input_size());
  kernels::conv2d_backward_input<T>(g, x.data(), w.data(), out, false);
  return make_op<T>("deconv2d", {g.batch, g.in_channels, g.in_h, g.in_w}, std::move(out), {x, w},
                    [g](Node<T>& self) {
                      auto& X = *self.inputs[0];
                      auto& W = *self.inputs[1];
                      if (self.wants(X)) {
                        std::vector<T> dx(g.output_size());
                        kernels::conv2d_forward<T>(g, self.grad, W.value, dx);
                        auto gx = X.ensure_grad();
                        for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += dx[i];
                      }
                      if (self.wants(W))
                        kernels::conv2d_backward_weight<T>(g, self.grad, X.value, W.ensure_grad(), true);
                    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  const auto x = a.data(), y = b.data();
  parallel_for(out.size(), [&](std::size_t i) { out[i] = x[i] + y[i]; });
  return make_op<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!self.wants(*in)) continue;
      auto g = in->ensure_grad();
      parallel_for(g.size(), [&](std::size_t i) { g[i] += self.grad[i]; });
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  const auto x = a.data(), y = b.data();
  parallel_for(out.size(), [&](std::size_t i) { out[i] = x[i] - y[i]; });
  return make_op<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (self.live[0]) {
      auto g = self.inputs[0]->ensure_grad();
      parallel_for(g.size(), [&](std::size_t i) { g[i] += self.grad[i]; });
    }
    if (self.live[1]) {
      auto g = self.inputs[1]->ensure_grad();
      parallel_for(g.size(), [&](std::size_t i) { g[i] -= self.grad[i]; });
    }
  });
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("hadamard", a, b);
  std::vector<T> out(a.numel());
  const auto x = a.data(), y = b.data();
  parallel_for(out.size(), [&](std::size_t i) { out[i] = x[i] * y[i]; });
  return make_op<T>("hadamard", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (self.wants(A)) {
      auto g = A.ensure_grad();
      parallel_for(g.size(), [&](std::size_t i) { g[i] += self.grad[i] * B.value[i]; });
    }
    if (self.wants(B)) {
      auto g = B.ensure_grad();
      parallel_for(g.size(), [&](std::size_t i) { g[i] += self.grad[i] * A.value[i]; });
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  const auto x = a.data();
  parallel_for(out.size(), [&](std::size_t i) { out[i] = x[i] * factor; });
  return make_op<T>("scale", a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    auto& A = *self.inputs[0];
    if (!self.wants(A)) return;
    auto g = A.ensure_grad();
    parallel_for(g.size(), [&](std::size_t i) { g[i] += self.grad[i] * factor; });
  });
}

template <typename T>
Tensor<T> bias_add(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() < 2 || b.rank() != 1 || b.dim(0) != x.dim(1)) {
    throw ShapeError("bias_add: bias " + shape_string(b.shape()) + " does not match axis 1 of " +
                     shape_string(x.shape()));
  }
  const std::size_t outer = x.dim(0), channels = x.dim(1);
  const std::size_t inner = x.numel() / (outer * channels);
  std::vector<T> out(x.numel());
  const auto in = x.data(), bias = b.data();
  parallel_for(outer * channels, [&](std::size_t oc) {
    const T v = bias[oc % channels];
    for (std::size_t i = 0; i < inner; ++i) out[oc * inner + i] = in[oc * inner + i] + v;
  });
  return make_op<T>("bias_add", x.shape(), std::move(out), {x, b},
                    [outer, channels, inner](Node<T>& self) {
                      auto& X = *self.inputs[0];
                      auto& B = *self.inputs[1];
                      if (self.wants(X)) {
                        auto g = X.ensure_grad();
                        parallel_for(g.size(), [&](std::size_t i) { g[i] += self.grad[i]; });
                      }
                      if (self.wants(B)) {
                        auto g = B.ensure_grad();
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t c = 0; c < channels; ++c) {
                            T acc = 0;
                            const T* src = self.grad.data() + (o * channels + c) * inner;
                            for (std::size_t i = 0; i < inner; ++i) acc += src[i];
                            g[c] += acc;
                          }
                      }
                    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(first.size()));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_string(first) + " and " +
                       shape_string(s) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t row = out_shape[axis] * inner;

  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.dim(axis) * inner;
    const auto src = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    offset += chunk;
  }
  return make_op<T>("concat", out_shape, std::move(out), parts,
                    [offsets, outer, row](Node<T>& self) {
                      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                        auto& in = *self.inputs[k];
                        if (!self.wants(in)) continue;
                        auto g = in.ensure_grad();
                        const std::size_t chunk = g.size() / outer;
                        for (std::size_t o = 0; o < outer; ++o) {
                          const T* src = self.grad.data() + o * row + offsets[k];
                          for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
                        }
                      }
                    });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank()) throw ShapeError("slice: axis out of range");
  if (begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for extent " + std::to_string(x.dim(axis)));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t row = x.dim(axis) * inner;
  const std::size_t chunk = (end - begin) * inner;
  const std::size_t offset = begin * inner;
  Shape shape = x.shape();
  shape[axis] = end - begin;
  std::vector<T> out(outer * chunk);
  const auto src = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * row + offset), chunk,
                out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  return make_op<T>("slice", shape, std::move(out), {x}, [outer, row, chunk, offset](Node<T>& self) {
    auto& X = *self.inputs[0];
    if (!self.wants(X)) return;
    auto g = X.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < chunk; ++i) g[o * row + offset + i] += self.grad[o * chunk + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                     shape_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_op<T>("reshape", std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    auto& X = *self.inputs[0];
    if (!self.wants(X)) return;
    auto g = X.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return make_op<T>("sum", {1}, {acc}, {x}, [](Node<T>& self) {
    auto& X = *self.inputs[0];
    if (!self.wants(X)) return;
    auto g = X.ensure_grad();
    const T up = self.grad[0];
    for (auto& v : g) v += up;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  const T n = static_cast<T>(x.numel());
  return make_op<T>("mean", {1}, {acc / n}, {x}, [n](Node<T>& self) {
    auto& X = *self.inputs[0];
    if (!self.wants(X)) return;
    auto g = X.ensure_grad();
    const T up = self.grad[0] / n;
    for (auto& v : g) v += up;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_map<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return unary_map<T>(
      "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T in, T) { return in > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary_map<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T out) { return T(1) - out * out; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_map<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T out) { return out * (T(1) - out); });
}

template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& p, const Tensor<T>& targets, T clamp) {
  require_same_shape("binary_cross_entropy", p, targets);
  const T lo = clamp, hi = T(1) - clamp;
  std::vector<T> out(p.numel());
  const auto pv = p.data(), yv = targets.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T q = std::clamp(pv[i], lo, hi);
    out[i] = -(yv[i] * std::log(q) + (T(1) - yv[i]) * std::log(T(1) - q));
  }
  return make_op<T>("binary_cross_entropy", p.shape(), std::move(out), {p, targets},
                    [lo, hi](Node<T>& self) {
                      auto& P = *self.inputs[0];
                      auto& Y = *self.inputs[1];
                      if (self.wants(P)) {
                        auto g = P.ensure_grad();
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          const T q = P.value[i];
                          if (q < lo || q > hi) continue;
                          const T y = Y.value[i];
                          g[i] += self.grad[i] * (-y / q + (T(1) - y) / (T(1) - q));
                        }
                      }
                      if (self.wants(Y)) {
                        auto g = Y.ensure_grad();
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          const T q = std::clamp(P.value[i], lo, hi);
                          g[i] += self.grad[i] * (std::log(T(1) - q) - std::log(q));
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<Node<T>*> topological_order(const Tensor<T>& root) {
  std::vector<Node<T>*> order;
  if (!root.defined() || !root.requires_grad()) return order;
  std::unordered_set<Node<T>*> visited;
  // Iterative post-order DFS; graphs can be deep.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (node->live[next - 1] && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  return order;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  const auto order = topological_order(loss);
  if (order.empty()) return;
  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node);
    for (const auto& in : node->inputs) {
      if (node->wants(*in) && !in->grad.empty())
        check_finite<T>(node->op, in->grad, "gradient produced by backward");
    }
    // Intermediate gradients are consumed exactly once.
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

#define CONDGAN_INSTANTIATE_TENSOR(T)                                                        \
  template struct Node<T>;                                                                  \
  template class Tensor<T>;                                                                 \
  template Tensor<T> make_op<T>(std::string, Shape, std::vector<T>, std::vector<Tensor<T>>, \
                                std::function<void(Node<T>&)>);                             \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                        \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> deconv2d<T>(const Tensor<T>&, const Tensor<T>&, std::size_t,           \
                                 std::size_t);                                              \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> hadamard<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                         \
  template Tensor<T> bias_add<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                 \
  template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);     \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                   \
  template Tensor<T> sum<T>(const Tensor<T>&);                                              \
  template Tensor<T> mean<T>(const Tensor<T>&);                                             \
  template Tensor<T> relu<T>(const Tensor<T>&);                                             \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                    \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                             \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                          \
  template Tensor<T> binary_cross_entropy<T>(const Tensor<T>&, const Tensor<T>&, T);        \
  template std::vector<Node<T>*> topological_order<T>(const Tensor<T>&);                    \
  template void backward<T>(const Tensor<T>&);

CONDGAN_INSTANTIATE_TENSOR(float)
CONDGAN_INSTANTIATE_TENSOR(double)

#undef CONDGAN_INSTANTIATE_TENSOR

}  // namespace condgan
