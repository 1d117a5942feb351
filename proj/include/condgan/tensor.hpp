#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// Every operation returns a fresh Tensor whose node remembers its inputs and a
// backward closure whenever at least one input requires a gradient. Calling
// backward(loss) orders the reachable nodes topologically and runs each
// closure exactly once, accumulating into the inputs' gradient buffers.
//
// Tensors are instantiated for float (training) and double (oracle checks).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace condgan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct Node {
  std::string op;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Per input: whether it required a gradient when this node was built.
  // Toggling a leaf's flag afterwards does not change existing graphs.
  std::vector<char> live;
  std::function<void(Node&)> backward;

  bool wants(const Node& in) const {
    for (std::size_t k = 0; k < inputs.size(); ++k)
      if (inputs[k].get() == &in && live[k]) return true;
    return false;
  }

  // Zero-allocates the gradient buffer on first use.
  std::span<T> ensure_grad();
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from(Shape shape, std::vector<T> values);
  static Tensor scalar(T value) { return from({1}, {value}); }
  // A leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<T> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Direct write access; only meaningful for leaves (optimizer updates).
  std::span<T> mutable_data() { return node_->value; }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T item() const;

  // Gradient buffer; empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return node_->inputs.empty() && !node_->backward; }

  // Same values, no history, no gradient.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::string& op() const { return node_->op; }
  const NodePtr<T>& node() const { return node_; }

 private:
  NodePtr<T> node_;
};

// Creates a node from a computed value. Throws NumericError naming `op` if the
// value holds a non-finite entry. The backward closure is kept only when some
// input requires a gradient. Exposed so tests can build custom ops.
template <typename T>
Tensor<T> make_op(std::string op, Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(Node<T>&)> backward);

// ---------------------------------------------------------------------------
// Differentiable operations

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

// x[N, C, H, W] * w[F, C, k, k] -> [N, F, H', W'], cross-correlation.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride,
                 std::size_t pad);
// Transposed convolution: x[N, C, H, W], w[C, F, k, k] -> [N, F, H', W'] with
// H' = (H - 1) * stride - 2 * pad + k. The adjoint of conv2d.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride,
                   std::size_t pad);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
// Adds b[C] along axis 1 of x[N, C, ...].
template <typename T>
Tensor<T> bias_add(const Tensor<T>& x, const Tensor<T>& b);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t end);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2));
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

// Element-wise -(y log p + (1 - y) log(1 - p)) with p clamped to
// [clamp, 1 - clamp]. `targets` has the shape of p.
template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& p, const Tensor<T>& targets,
                               T clamp = T(1e-7));

// ---------------------------------------------------------------------------
// Graph traversal

// Nodes reachable from root that take part in differentiation, inputs before
// their consumers.
template <typename T>
std::vector<Node<T>*> topological_order(const Tensor<T>& root);

// Reverse-mode accumulation from a scalar loss into every reachable node.
// Throws ShapeError for a non-scalar loss and NumericError naming the op whose
// backward rule produced a non-finite gradient.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace condgan
