#include <cmath>
#include <limits>

#include "doctest.h"
#include "test_util.hpp"
#include "vidattack/tensor.hpp"

using namespace vidattack;
using testutil::grad_check;
using testutil::random_tensor;

TEST_CASE("elementwise values and scalar broadcast") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {4, 3, 2, 1});
  Tensor s = Tensor::scalar(2.0);
  CHECK((a + b).data()[0] == 5);
  CHECK((a - b).data()[3] == 3);
  CHECK((a * b).data()[1] == 6);
  CHECK((a / b).data()[2] == doctest::Approx(1.5));
  CHECK((a * s).data()[3] == 8);
  CHECK((s - a).data()[0] == 1);
  CHECK((1.0 - a).data()[1] == -1);
  CHECK((-a).data()[2] == -3);
}

TEST_CASE("mismatched shapes are rejected") {
  Tensor a({2, 3});
  Tensor b({3, 2});
  CHECK_THROWS_AS(a + b, ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(add_bias(a, Tensor({2})), ShapeError);
  CHECK_THROWS_AS(reshape(a, {4}), ShapeError);
  CHECK_THROWS_AS(slice_cols(a, 2, 5), ShapeError);
  CHECK_THROWS_AS(concat_rows({a, b}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({1, 1, 1, 1, 1}), ShapeError);
}

TEST_CASE("matmul against a hand product") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c.data()[0] == 58);
  CHECK(c.data()[1] == 64);
  CHECK(c.data()[2] == 139);
  CHECK(c.data()[3] == 154);
}

TEST_CASE("finite-difference gradients of every differentiable op") {
  const Tensor x = random_tensor({3, 4}, 1);
  const Tensor pos = random_tensor({3, 4}, 2, 0.5, 2.0);
  const Tensor w = random_tensor({4, 5}, 3, -1, 1, false);
  const Tensor other = random_tensor({3, 4}, 4, 0.5, 1.5, false);
  const Tensor bias = random_tensor({4}, 5, -1, 1, false);

  CHECK(grad_check([&](const Tensor& t) { return sum(t * other); }, x) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(other / t); }, pos) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(t / other); }, x) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(tanh(t) * other); }, x) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(sigmoid(t) * other); }, x) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(log(t) * other); }, pos) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(matmul(t, w) * matmul(t, w)); }, x) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(softmax_rows(t) * other); }, x) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(softmax(reshape(t, {12})) * reshape(other, {12})); }, x) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return l2_norm(t); }, x) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(frame_l2_norms(t) * Tensor({3}, {1, 2, 3})); }, x) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(mean_rows(t) * bias); }, x) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(add_bias(t, bias) * other); }, x) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(slice_cols(t, 1, 3) * slice_cols(other, 0, 2)); }, x) < 1e-6);
  CHECK(grad_check(
            [&](const Tensor& t) {
              return sum(concat_rows({slice_rows(t, 2, 3), slice_rows(t, 0, 2)}) * other);
            },
            x) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(clamp(t, -2.0, 2.0) * other); }, x) < 1e-6);
}

TEST_CASE("bias gradient and matmul right operand") {
  const Tensor in = random_tensor({3, 4}, 7, -1, 1, false);
  const Tensor w = random_tensor({4, 2}, 8);
  const Tensor b = random_tensor({2}, 9);
  CHECK(grad_check([&](const Tensor& t) { return sum(tanh(matmul(in, t))); }, w) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(sigmoid(add_bias(matmul(in, w.detach()), t))); }, b) < 1e-6);
}

TEST_CASE("gradient is linear in the objective") {
  const Tensor x = random_tensor({2, 3}, 11);
  auto f = [](const Tensor& t) { return sum(tanh(t)); };
  auto g = [](const Tensor& t) { return l2_norm(t * t); };
  const auto gf = testutil::analytic_grad(f, x);
  const auto gg = testutil::analytic_grad(g, x);
  const auto gh = testutil::analytic_grad([&](const Tensor& t) { return f(t) * 2.5 - g(t) * 0.5; }, x);
  for (std::size_t i = 0; i < gh.size(); ++i) CHECK(gh[i] == doctest::Approx(2.5 * gf[i] - 0.5 * gg[i]).epsilon(1e-12));
}

TEST_CASE("leaf gradients accumulate across backward calls until cleared") {
  Tensor x({2}, {1.0, 2.0}, true);
  backward(sum(x * x));
  backward(sum(x * 3.0));
  CHECK(x.grad()[0] == doctest::Approx(2 + 3));
  CHECK(x.grad()[1] == doctest::Approx(4 + 3));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("a replayed tape cannot be reused") {
  Tensor x({2}, {1.0, 2.0}, true);
  Tensor y = x * x;
  Tensor z = sum(y);
  backward(z);
  CHECK_THROWS_AS(backward(z), TapeError);
  CHECK_THROWS_AS(sum(y * 2.0), TapeError);

  Tensor w = sum(x * 4.0);
  ComputationTape tape(w);
  CHECK(tape.size() >= 2);
  tape.replay();
  CHECK_THROWS_AS(tape.replay(), TapeError);
}

TEST_CASE("backward needs a scalar root") {
  Tensor x({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(backward(x * 2.0), TapeError);
}

TEST_CASE("graphs without trainable leaves record nothing") {
  Tensor a({2}, {1.0, 2.0});
  Tensor b = tanh(a) * 3.0;
  CHECK(b.is_leaf());
  CHECK_FALSE(b.requires_grad());
  CHECK_NOTHROW(sum(b * b));
}

TEST_CASE("mutable data is for leaves only") {
  Tensor x({2}, {1.0, 2.0}, true);
  CHECK_NOTHROW(x.mutable_data()[0] = 5.0);
  Tensor y = x * 2.0;
  CHECK_THROWS_AS(y.mutable_data(), TapeError);
}

TEST_CASE("division by zero") {
  Tensor a({2}, {1.0, 2.0});
  Tensor z({2}, {0.0, 1.0});
  CHECK_THROWS_AS(div(a, z), NumericError);
  CHECK_THROWS_AS(div(a, 0.0), NumericError);
  Tensor p = div(a, z, DivByZero::Propagate);
  CHECK(std::isinf(p.data()[0]));
  CHECK(p.data()[1] == 2.0);
}

TEST_CASE("log rejects non-positive input") {
  CHECK_THROWS_AS(log(Tensor({2}, {1.0, 0.0})), NumericError);
  CHECK_THROWS_AS(log(Tensor({1}, {-1.0})), NumericError);
}

TEST_CASE("relu gradient at zero is zero") {
  Tensor x({3}, {-1.0, 0.0, 2.0}, true);
  backward(sum(relu(x)));
  CHECK(x.grad() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("clamp passes gradient only inside the range") {
  Tensor x({4}, {-0.5, 0.0, 0.5, 1.5}, true);
  Tensor y = clamp(x, 0.0, 1.0);
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{0.0, 0.0, 0.5, 1.0});
  backward(sum(y));
  CHECK(x.grad() == std::vector<double>{0.0, 1.0, 1.0, 0.0});
}

TEST_CASE("softmax is stable for large logits") {
  Tensor x({3}, {1000.0, 1001.0, 999.0});
  Tensor p = softmax(x);
  double total = 0;
  for (double v : p.data()) {
    CHECK(std::isfinite(v));
    total += v;
  }
  CHECK(total == doctest::Approx(1.0));
  CHECK(p.data()[1] > p.data()[0]);

  Tensor rows = softmax_rows(Tensor({2, 2}, {-1e4, 1e4, 3.0, 3.0}));
  CHECK(rows.data()[1] == doctest::Approx(1.0));
  CHECK(rows.data()[2] == doctest::Approx(0.5));
}

TEST_CASE("norm adjoint is guarded at zero") {
  Tensor x({2, 2}, 0.0, true);
  backward(l2_norm(x) + sum(frame_l2_norms(x)));
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("property: softmax rows sum to one and stay positive") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t r = 1 + rng() % 5, c = 1 + rng() % 7;
    Tensor p = softmax_rows(random_tensor({r, c}, seed, -30, 30, false));
    for (std::size_t i = 0; i < r; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < c; ++j) {
        CHECK(p.data()[i * c + j] > 0.0);
        total += p.data()[i * c + j];
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("property: frame norms sum to the l2,1 norm and bound the l2 norm") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Tensor x = random_tensor({5, 2, 2, 1}, seed, -1, 1, false);
    const double l21 = sum(frame_l2_norms(x)).item();
    const double l2 = l2_norm(x).item();
    CHECK(l21 >= l2 - 1e-12);
    CHECK(l21 <= std::sqrt(5.0) * l2 + 1e-12);
  }
}

TEST_CASE("detach copies values and drops the graph") {
  Tensor x({2}, {1.0, 2.0}, true);
  Tensor y = x * 3.0;
  Tensor d = y.detach();
  CHECK(d.is_leaf());
  CHECK_FALSE(d.shares_node(y));
  CHECK(d.data()[1] == 6.0);
  CHECK_NOTHROW(d.mutable_data()[0] = 0.0);
  CHECK(y.data()[0] == 3.0);
}
