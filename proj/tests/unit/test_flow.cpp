#include "doctest.h"
#include "flowerase/error.hpp"
#include "flowerase/flow.hpp"
#include "test_support.hpp"

using namespace flowerase;
using testing::max_abs_diff;
using testing::random_tensor;

TEST_CASE("interpolation endpoints and midpoint") {
  const auto u = random_tensor({4, 4, 3}, 1);
  const auto x = random_tensor({4, 4, 3}, 2);
  CHECK(max_abs_diff(flow::noise_interp(u, x, 0.0), u) == 0.0);
  CHECK(max_abs_diff(flow::noise_interp(u, x, 1.0), x) == 0.0);
  const auto mid = flow::noise_interp(u, x, 0.5);
  for (std::size_t i = 0; i < u.numel(); ++i) CHECK(mid[i] == doctest::Approx(0.5 * (u[i] + x[i])));
  CHECK_THROWS_AS(flow::noise_interp(u, x, -0.1), DomainError);
  CHECK_THROWS_AS(flow::noise_interp(u, random_tensor({2}, 3), 0.5), DimensionError);
}

TEST_CASE("velocity target is the constant path derivative") {
  const auto u = random_tensor({2, 2, 3}, 1);
  const auto x = random_tensor({2, 2, 3}, 2);
  const auto s = flow::make_sample(u, x, 0.3);
  const auto v = flow::velocity_target(u, x);
  // u_t + (1 - t) v lands on x_T and u_t - t v lands on u.
  for (std::size_t i = 0; i < u.numel(); ++i) {
    CHECK(s.u_t[i] + 0.7 * v[i] == doctest::Approx(x[i]).epsilon(1e-12));
    CHECK(s.u_t[i] - 0.3 * v[i] == doctest::Approx(u[i]).epsilon(1e-12));
  }
}

TEST_CASE("euler sampling with the exact velocity recovers the data") {
  const ag::Shape shape = {8, 8, 3};
  const auto u = random_tensor(shape, 11);
  const flow::SamplerConfig base{.num_steps = 28, .seed = 5};
  const auto x_T = flow::gaussian_noise(shape, base.seed);
  const auto exact = [&](const ag::Tensor&, double) { return flow::velocity_target(u, x_T); };
  for (std::size_t steps : {1, 7, 28}) {
    const auto out = flow::euler_sample(exact, shape, {.num_steps = steps, .seed = 5});
    CHECK(max_abs_diff(out, u) <= 1e-9);
  }
}

TEST_CASE("euler integration of a linear field") {
  // dx/dt = x from t=1 to t=0 backwards: x(0) = x(1) e^{-1}; Euler gives (1 - 1/n)^n.
  const auto x = ag::Tensor({1}, {2.0});
  const auto field = [](const ag::Tensor& v, double) { return v; };
  const auto out = flow::euler_integrate(field, x, 1.0, 0.0, 4);
  CHECK(out[0] == doctest::Approx(2.0 * std::pow(0.75, 4)).epsilon(1e-14));
  CHECK_THROWS_AS(flow::euler_integrate(field, x, 1.0, 0.0, 0), ConfigError);
}

TEST_CASE("noise is reproducible per seed") {
  const auto a = flow::gaussian_noise({16}, 3);
  const auto b = flow::gaussian_noise({16}, 3);
  const auto c = flow::gaussian_noise({16}, 4);
  CHECK(max_abs_diff(a, b) == 0.0);
  CHECK(max_abs_diff(a, c) > 0.0);
}

TEST_CASE("model sampler is deterministic and does not record gradients") {
  const auto m = testing::tiny_model();
  const auto toks = model::tokenize("a red circle", m.vocab, m.config.text_len).ids;
  const auto a = flow::euler_sample(m.config, m.params, {}, toks, {.num_steps = 4, .seed = 9});
  const auto b = flow::euler_sample(m.config, m.params, {}, toks, {.num_steps = 4, .seed = 9});
  CHECK(max_abs_diff(a, b) == 0.0);
  CHECK(a.node()->is_leaf());
}
