#include <cmath>

#include "doctest.h"
#include "flowerase/autograd.hpp"
#include "flowerase/error.hpp"
#include "test_support.hpp"

using namespace flowerase;
using flowerase::testing::grad_check;
using flowerase::testing::random_tensor;

TEST_CASE("matmul agrees with a naive triple loop") {
  const auto a = random_tensor({3, 5}, 1);
  const auto b = random_tensor({5, 4}, 2);
  const auto c = ag::matmul(a, b);
  REQUIRE(c.shape() == ag::Shape{3, 4});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += a[i * 5 + k] * b[k * 4 + j];
      CHECK(c[i * 4 + j] == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("linear is x times w transposed") {
  const auto x = random_tensor({2, 3}, 3);
  const auto w = random_tensor({4, 3}, 4);
  const auto y = ag::linear(x, w);
  const auto ref = ag::matmul(x, ag::transpose(w));
  CHECK(testing::max_abs_diff(y, ref) < 1e-14);
}

TEST_CASE("softmax rows sum to one and survive large logits") {
  auto x = random_tensor({4, 7}, 5, 30.0);
  x.mutable_data()[0] = 800.0;
  const auto s = ag::softmax(x, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 7; ++c) sum += s[r * 7 + c];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(s[0] == doctest::Approx(1.0));
}

TEST_CASE("elementwise and reduction gradients match finite differences") {
  auto a = random_tensor({3, 4}, 10);
  auto b = random_tensor({3, 4}, 11);
  for (auto& v : b.mutable_data()) v = 1.5 + std::abs(v);  // keep log/div/sqrt in domain
  auto f = [&] {
    auto y = ag::add(ag::mul(ag::silu(a), ag::log(b)), ag::div(ag::exp(ag::scale(a, 0.3)), ag::sqrt(b)));
    y = ag::sub(y, ag::square(ag::add_scalar(a, -0.2)));
    return ag::add(ag::mean(y), ag::sum(ag::sum_axis(ag::neg(y), 0)));
  };
  const auto g = grad_check(f, {a, b});
  CHECK(g.rel_error < 1e-7);
}

TEST_CASE("matrix, layout and normalization gradients match finite differences") {
  auto a = random_tensor({4, 6}, 20);
  auto w = random_tensor({5, 6}, 21);
  auto f = [&] {
    auto h = ag::layer_norm_rows(ag::linear(a, w));
    h = ag::softmax(h, 1);
    auto cat = ag::concat({h, ag::slice(h, 0, 1, 3)}, 0);
    auto r = ag::reshape(cat, {3, 10});
    auto rows = ag::repeat_rows(ag::slice(r, 0, 0, 1), 2);
    const std::size_t idx[] = {0, 3, 3, 7, 9, 1};
    auto gat = ag::gather(r, idx, {6});
    const std::size_t cols[] = {2, 5};
    auto masked = ag::mask_last_axis(rows, cols);
    return ag::add(ag::add(ag::l2_norm_squared(masked), ag::dot(gat, gat)), ag::sum(ag::transpose(r)));
  };
  CHECK(grad_check(f, {a, w}, 24).rel_error < 1e-6);
}

TEST_CASE("scalar broadcasting in binary ops") {
  const auto a = random_tensor({2, 2}, 30);
  const auto s = ag::Tensor::scalar(2.0);
  const auto m = ag::mul(a, s);
  for (std::size_t i = 0; i < 4; ++i) CHECK(m[i] == doctest::Approx(2.0 * a[i]));
  CHECK_THROWS_AS(ag::add(a, random_tensor({3}, 1)), DimensionError);
}

TEST_CASE("leaf gradients accumulate across backward calls") {
  auto x = ag::Tensor({2}, {1.0, 2.0}, true);
  ag::backward(ag::sum(ag::square(x)));
  ag::backward(ag::sum(ag::square(x)));
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(8.0));
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("no-grad guard records nothing and restores the previous mode") {
  auto x = ag::Tensor({2}, {1.0, 2.0}, true);
  {
    ag::NoGradGuard g;
    CHECK_FALSE(ag::grad_enabled());
    const auto y = ag::sum(ag::square(x));
    CHECK(y.node()->is_leaf());
  }
  CHECK(ag::grad_enabled());
}

TEST_CASE("detach and clone cut the tape") {
  auto x = ag::Tensor({2}, {1.0, 2.0}, true);
  auto d = ag::scale(x, 3.0).detach();
  CHECK(d.node()->is_leaf());
  auto c = x.clone();
  c.mutable_data()[0] = 9.0;
  CHECK(x[0] == 1.0);
}

TEST_CASE("shape errors are reported") {
  CHECK_THROWS_AS(ag::matmul(random_tensor({2, 3}, 1), random_tensor({2, 3}, 2)), DimensionError);
  CHECK_THROWS_AS(ag::reshape(random_tensor({2, 3}, 1), {4, 2}), DimensionError);
  CHECK_THROWS_AS(ag::slice(random_tensor({2, 3}, 1), 1, 2, 5), Error);
  CHECK_THROWS(ag::Tensor({2, 2}, {1.0}));
}
