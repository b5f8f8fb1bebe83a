#pragma once

// Dense row-major real tensors (rank <= 4) with reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Leaves own their data; every
// op result that depends on a requires_grad leaf records its parents and an
// adjoint rule. `backward(root)` replays those rules once, in reverse
// topological order, accumulating into leaf gradients, and then marks the
// interior of the graph consumed. Reusing a consumed intermediate is a
// TapeError.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vidattack/error.hpp"

namespace vidattack {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> adjoint;

  void accumulate(std::size_t i, double g) {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    grad[i] += g;
  }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  // Internal: wraps a freshly built node.
  static Tensor from_node(std::shared_ptr<detail::Node> node);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const { return node_->data; }
  // Leaves only; op results are immutable once recorded.
  std::span<double> mutable_data();
  double operator[](std::size_t flat) const { return node_->data[flat]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return node_->leaf; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient of a requires_grad leaf; zeros if nothing has been accumulated.
  std::vector<double> grad() const;
  void zero_grad() { node_->grad.clear(); }

  // Copy of the values as a new leaf, detached from any graph.
  Tensor detach(bool requires_grad = false) const;
  bool shares_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Reverse topological record of the graph reachable from a scalar root.
class ComputationTape {
 public:
  explicit ComputationTape(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  // Runs every adjoint once. A second replay, or any later use of the
  // recorded intermediates, fails with TapeError.
  void replay();

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<detail::Node*> order_;
  bool replayed_ = false;
};

void backward(const Tensor& root);

// ---- elementwise ------------------------------------------------------------
// Shapes must match exactly, or one side must hold a single element.

enum class DivByZero { Throw, Propagate };

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b, DivByZero policy = DivByZero::Throw);

Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, double b);
Tensor sub(double a, const Tensor& b);
Tensor mul(const Tensor& a, double b);
Tensor div(const Tensor& a, double b, DivByZero policy = DivByZero::Throw);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator+(double a, const Tensor& b) { return add(b, a); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, b); }
inline Tensor operator-(double a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return mul(a, -1.0); }

// ---- nonlinearities ---------------------------------------------------------

enum class Activation { Tanh, Sigmoid, Relu };

Tensor activation(Activation kind, const Tensor& x);
inline Tensor tanh(const Tensor& x) { return activation(Activation::Tanh, x); }
inline Tensor sigmoid(const Tensor& x) { return activation(Activation::Sigmoid, x); }
inline Tensor relu(const Tensor& x) { return activation(Activation::Relu, x); }

Tensor log(const Tensor& x);
// Gradient passes where lo <= x <= hi, zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- linear algebra and reductions ------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x);       // rank-1
Tensor softmax_rows(const Tensor& x);  // rank-2, independently per row
Tensor sum(const Tensor& x);           // -> rank-0
Tensor mean_rows(const Tensor& x);     // [R, C] -> [C]

// sqrt(sum x^2); adjoint x / max(norm, 1e-12).
Tensor l2_norm(const Tensor& x);
// Euclidean norm of each slice along axis 0: [T, ...] -> [T].
Tensor frame_l2_norms(const Tensor& x);

// ---- structural -------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
// Columns [begin, end) of a rank-2 tensor.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
// Rows [begin, end) along axis 0, any rank.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
// Concatenate along axis 0; trailing shapes must agree.
Tensor concat_rows(const std::vector<Tensor>& parts);
// [R, C] + [C] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

inline constexpr double kNormGuard = 1e-12;

}  // namespace vidattack
