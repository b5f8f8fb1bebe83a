#include "vidattack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace vidattack {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

constexpr std::size_t kMaxRank = 4;

void check_rank(const Shape& shape) {
  if (shape.size() > kMaxRank) {
    throw ShapeError("tensor rank " + std::to_string(shape.size()) + " exceeds maximum of 4");
  }
}

void check_live(const Tensor& t) {
  if (t.node()->consumed) {
    throw TapeError("tensor belongs to a graph already consumed by backward()");
  }
}

// Builds an op result. The adjoint and parent links are only recorded when
// some input requires grad; otherwise the result is a plain constant leaf.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> adjoint) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  for (const Tensor* in : inputs) {
    check_live(*in);
    needs = needs || in->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->leaf = false;
    for (const Tensor* in : inputs) node->parents.push_back(in->node());
    node->adjoint = std::move(adjoint);
  }
  return Tensor::from_node(std::move(node));
}

bool is_scalar_like(const Tensor& t) { return t.numel() == 1; }

Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (is_scalar_like(b)) return a.shape();
  if (is_scalar_like(a)) return b.shape();
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

// Generic binary elementwise op with scalar broadcast. `da`/`db` give the
// local partial derivatives given (x, y, out).
template <class Fwd, class Da, class Db>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Da da, Db db) {
  Shape shape = broadcast_shape(a, b, name);
  const std::size_t n = shape_numel(shape);
  const bool sa = a.numel() == 1 && n != 1;
  const bool sb = b.numel() == 1 && n != 1;
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[sa ? 0 : i], pb[sb ? 0 : i]);
  Node* na = a.node().get();
  Node* nb = b.node().get();
  return make_result(std::move(shape), std::move(out), {&a, &b}, [na, nb, sa, sb, da, db](Node& self) {
    const std::size_t n = self.data.size();
    const auto& g = self.grad;
    if (na->requires_grad) {
      auto& ga = na->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        ga[sa ? 0 : i] += g[i] * da(na->data[sa ? 0 : i], nb->data[sb ? 0 : i], self.data[i]);
      }
    }
    if (nb->requires_grad) {
      auto& gb = nb->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        gb[sb ? 0 : i] += g[i] * db(na->data[sa ? 0 : i], nb->data[sb ? 0 : i], self.data[i]);
      }
    }
  });
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  const double* px = x.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(px[i]);
  Node* nx = x.node().get();
  return make_result(x.shape(), std::move(out), {&x}, [nx, deriv](Node& self) {
    auto& gx = nx->grad_buffer();
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      gx[i] += self.grad[i] * deriv(nx->data[i], self.data[i]);
    }
  });
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor() : node_(std::make_shared<Node>()) { node_->data.assign(1, 0.0); }

Tensor::Tensor(Shape shape, double fill, bool requires_grad) : node_(std::make_shared<Node>()) {
  check_rank(shape);
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) : node_(std::make_shared<Node>()) {
  check_rank(shape);
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor(Shape{}, value, requires_grad); }

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::span<double> Tensor::mutable_data() {
  if (!node_->leaf) throw TapeError("cannot mutate the values of a recorded op result");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

void Tensor::set_requires_grad(bool on) {
  if (!node_->leaf) throw TapeError("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

Tensor Tensor::detach(bool requires_grad) const { return Tensor(shape(), node_->data, requires_grad); }

// ---- tape -------------------------------------------------------------------

ComputationTape::ComputationTape(const Tensor& root) : root_(root.node()) {
  if (root_->consumed) throw TapeError("backward() on a graph that was already consumed");
  if (root_->data.size() != 1) {
    throw TapeError("backward() needs a scalar root, got shape " + shape_str(root_->shape));
  }
  if (!root_->requires_grad) throw TapeError("backward() root does not depend on any requires_grad leaf");

  // Iterative post-order DFS over interior nodes; reversed post-order is a
  // valid reverse topological order.
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (!root_->leaf) {
    stack.emplace_back(root_.get(), 0);
    seen.insert(root_.get());
  }
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->consumed) throw TapeError("graph references an intermediate consumed by an earlier backward()");
      if (!p->leaf && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order_.begin(), order_.end());
}

void ComputationTape::replay() {
  if (replayed_ || root_->consumed) throw TapeError("computation tape already consumed");
  replayed_ = true;
  root_->grad_buffer()[0] += 1.0;
  for (Node* node : order_) {
    if (!node->grad.empty() && node->adjoint) node->adjoint(*node);
  }
  for (Node* node : order_) {
    node->consumed = true;
    node->adjoint = nullptr;
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
  // Parent links keep the raw pointers above alive, so detach them all into
  // one flat list before anything is freed.
  std::vector<NodePtr> release;
  for (Node* node : order_) {
    for (auto& p : node->parents) release.push_back(std::move(p));
    node->parents.clear();
  }
}

void backward(const Tensor& root) { ComputationTape(root).replay(); }

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; },
                [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; },
                [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; },
                [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b, DivByZero policy) {
  if (policy == DivByZero::Throw) {
    for (double y : b.data()) {
      if (y == 0.0) throw NumericError("div: divisor tensor " + shape_str(b.shape()) + " contains 0");
    }
  }
  return binary(a, b, "div", [](double x, double y) { return x / y; },
                [](double, double y, double) { return 1.0 / y; },
                [](double x, double y, double) { return -x / (y * y); });
}

Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor sub(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor sub(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor div(const Tensor& a, double b, DivByZero policy) { return div(a, Tensor::scalar(b), policy); }

// ---- nonlinearities ---------------------------------------------------------

Tensor activation(Activation kind, const Tensor& x) {
  switch (kind) {
    case Activation::Tanh:
      return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
    case Activation::Sigmoid:
      return unary(
          x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
    case Activation::Relu:
      return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
  }
  throw Error("unknown activation");
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value " + std::to_string(v));
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---- linear algebra and reductions ------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  Node* na = a.node().get();
  Node* nb = b.node().get();
  return make_result({m, n}, std::move(out), {&a, &b}, [na, nb, m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (na->requires_grad) {
      // dA = G * B^T
      auto& ga = na->grad_buffer();
      const double* pb = nb->data.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = pb + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (nb->requires_grad) {
      // dB = A^T * G
      auto& gb = nb->grad_buffer();
      const double* pa = na->data.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          if (av == 0.0) continue;
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

namespace {

Tensor softmax_impl(const Tensor& x, std::size_t rows, std::size_t cols) {
  std::vector<double> out(x.numel());
  const double* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = px + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  Node* nx = x.node().get();
  return make_result(x.shape(), std::move(out), {&x}, [nx, rows, cols](Node& self) {
    auto& gx = nx->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[c] * (g[c] - dot);
    }
  });
}

}  // namespace

Tensor softmax(const Tensor& x) {
  require_rank(x, 1, "softmax");
  if (x.numel() == 0) throw ShapeError("softmax of an empty tensor");
  return softmax_impl(x, 1, x.numel());
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  if (x.dim(1) == 0) throw ShapeError("softmax_rows with zero columns");
  return softmax_impl(x, x.dim(0), x.dim(1));
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Node* nx = x.node().get();
  return make_result(Shape{}, {total}, {&x}, [nx](Node& self) {
    auto& gx = nx->grad_buffer();
    const double g = self.grad[0];
    for (auto& v : gx) v += g;
  });
}

Tensor mean_rows(const Tensor& x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (rows == 0) throw ShapeError("mean_rows over zero rows");
  std::vector<double> out(cols, 0.0);
  const double* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += px[r * cols + c];
  }
  for (auto& v : out) v /= static_cast<double>(rows);
  Node* nx = x.node().get();
  return make_result({cols}, std::move(out), {&x}, [nx, rows, cols](Node& self) {
    auto& gx = nx->grad_buffer();
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += self.grad[c] * inv;
    }
  });
}

Tensor l2_norm(const Tensor& x) {
  double ss = 0.0;
  for (double v : x.data()) ss += v * v;
  const double norm = std::sqrt(ss);
  Node* nx = x.node().get();
  return make_result(Shape{}, {norm}, {&x}, [nx](Node& self) {
    auto& gx = nx->grad_buffer();
    const double scale = self.grad[0] / std::max(self.data[0], kNormGuard);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += scale * nx->data[i];
  });
}

Tensor frame_l2_norms(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("frame_l2_norms needs rank >= 1");
  const std::size_t frames = x.dim(0);
  const std::size_t per = frames == 0 ? 0 : x.numel() / frames;
  std::vector<double> out(frames, 0.0);
  const double* px = x.data().data();
  for (std::size_t t = 0; t < frames; ++t) {
    double ss = 0.0;
    for (std::size_t i = 0; i < per; ++i) ss += px[t * per + i] * px[t * per + i];
    out[t] = std::sqrt(ss);
  }
  Node* nx = x.node().get();
  return make_result({frames}, std::move(out), {&x}, [nx, frames, per](Node& self) {
    auto& gx = nx->grad_buffer();
    for (std::size_t t = 0; t < frames; ++t) {
      const double scale = self.grad[t] / std::max(self.data[t], kNormGuard);
      for (std::size_t i = 0; i < per; ++i) gx[t * per + i] += scale * nx->data[t * per + i];
    }
  });
}

// ---- structural -------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  check_rank(shape);
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  }
  Node* nx = x.node().get();
  return make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), {&x},
                     [nx](Node& self) {
                       auto& gx = nx->grad_buffer();
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
                     });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin > end || end > cols) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                     shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  const double* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(px + r * cols + begin, w, out.data() + r * w);
  Node* nx = x.node().get();
  return make_result({rows, w}, std::move(out), {&x}, [nx, rows, cols, begin, w](Node& self) {
    auto& gx = nx->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) gx[r * cols + begin + c] += self.grad[r * w + c];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0) throw ShapeError("slice_rows on a rank-0 tensor");
  const std::size_t rows = x.dim(0);
  if (begin > end || end > rows) {
    throw ShapeError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                     shape_str(x.shape()));
  }
  const std::size_t per = rows == 0 ? 0 : x.numel() / rows;
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * per),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * per));
  Node* nx = x.node().get();
  const std::size_t offset = begin * per;
  return make_result(std::move(shape), std::move(out), {&x}, [nx, offset](Node& self) {
    auto& gx = nx->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[offset + i] += self.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of zero tensors");
  Shape trailing(parts[0].shape().begin() + (parts[0].rank() ? 1 : 0), parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.rank() == 0) throw ShapeError("concat_rows of a rank-0 tensor");
    Shape tr(p.shape().begin() + 1, p.shape().end());
    if (tr != trailing) {
      throw ShapeError("concat_rows: trailing shapes differ, " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    check_live(p);
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), trailing.begin(), trailing.end());

  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(out);
  bool needs = std::any_of(parts.begin(), parts.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->leaf = false;
    std::vector<std::pair<Node*, std::size_t>> spans;
    std::size_t offset = 0;
    for (const auto& p : parts) {
      node->parents.push_back(p.node());
      spans.emplace_back(p.node().get(), offset);
      offset += p.numel();
    }
    node->adjoint = [spans = std::move(spans)](Node& self) {
      for (auto [parent, off] : spans) {
        if (!parent->requires_grad) continue;
        auto& gp = parent->grad_buffer();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[off + i];
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (bias.dim(0) != cols) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const double* pb = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += pb[c];
  }
  Node* nx = x.node().get();
  Node* nb = bias.node().get();
  return make_result({rows, cols}, std::move(out), {&x, &bias}, [nx, nb, rows, cols](Node& self) {
    if (nx->requires_grad) {
      auto& gx = nx->grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    }
    if (nb->requires_grad) {
      auto& gb = nb->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gb[c] += self.grad[r * cols + c];
      }
    }
  });
}

}  // namespace vidattack
