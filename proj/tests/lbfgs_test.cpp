#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "shortcut/lbfgs.hpp"

using shortcut::LbfgsOptions;
using shortcut::LbfgsResult;
using shortcut::lbfgs_minimize;

namespace {

// f(x) = sum (x_i - b_i)^2, minimum 0 at b.
shortcut::Objective shifted_quadratic(std::vector<double> b) {
  return [b = std::move(b)](std::span<const double> x, std::span<double> g) {
    double f = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - b[i];
      f += d * d;
      g[i] = 2.0 * d;
    }
    return f;
  };
}

double rosenbrock(std::span<const double> x, std::span<double> g) {
  const double a = x[0], b = x[1];
  const double t1 = b - a * a, t2 = 1.0 - a;
  g[0] = -400.0 * a * t1 - 2.0 * t2;
  g[1] = 200.0 * t1;
  return 100.0 * t1 * t1 + t2 * t2;
}

}  // namespace

TEST_CASE("a separable quadratic is solved in a handful of steps", "[lbfgs]") {
  std::vector<double> target(10);
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = 0.3 * static_cast<double>(i) - 1.0;
  const std::vector<double> x0(10, 0.0);
  const LbfgsResult res = lbfgs_minimize(shifted_quadratic(target), x0, 50);
  CHECK(res.converged);
  CHECK(res.steps <= 5);
  for (std::size_t i = 0; i < target.size(); ++i) {
    CHECK(std::abs(res.x[i] - target[i]) < 1e-10);
  }
}

TEST_CASE("rosenbrock reaches its minimum from the classic start", "[lbfgs]") {
  const std::vector<double> x0 = {-1.2, 1.0};
  LbfgsOptions opts;
  opts.grad_tol = 1e-10;
  const LbfgsResult res = lbfgs_minimize(rosenbrock, x0, 100, opts);
  CHECK(res.converged);
  CHECK(res.steps <= 100);
  CHECK(std::abs(res.x[0] - 1.0) < 1e-5);
  CHECK(std::abs(res.x[1] - 1.0) < 1e-5);
}

TEST_CASE("starting at the optimum returns immediately", "[lbfgs]") {
  const std::vector<double> target = {2.0, -3.0};
  const LbfgsResult res = lbfgs_minimize(shifted_quadratic(target), target, 50);
  CHECK(res.converged);
  CHECK(res.steps == 0);
  CHECK(res.trace.size() == 1);
  CHECK(res.x == target);
}

TEST_CASE("the trace records f at x0 and never increases", "[lbfgs]") {
  const std::vector<double> x0 = {-1.2, 1.0};
  const LbfgsResult res = lbfgs_minimize(rosenbrock, x0, 40);
  std::vector<double> g(2);
  REQUIRE(res.trace.size() == static_cast<std::size_t>(res.steps) + 1);
  CHECK(res.trace[0] == rosenbrock(x0, g));
  for (std::size_t i = 1; i < res.trace.size(); ++i) {
    CHECK(res.trace[i] <= res.trace[i - 1]);
  }
}

TEST_CASE("non-finite objectives abort with the step number", "[lbfgs]") {
  int calls = 0;
  const shortcut::Objective bad = [&](std::span<const double> x, std::span<double> g) {
    ++calls;
    if (calls > 1) return std::numeric_limits<double>::quiet_NaN();
    g[0] = 2.0 * x[0];
    return x[0] * x[0];
  };
  CHECK_THROWS_WITH(lbfgs_minimize(bad, std::vector<double>{5.0}, 10),
                    Catch::Matchers::ContainsSubstring("non-finite objective") &&
                        Catch::Matchers::ContainsSubstring("step 1"));

  const shortcut::Objective bad_grad = [](std::span<const double> x, std::span<double> g) {
    g[0] = std::numeric_limits<double>::infinity();
    return x[0] * x[0];
  };
  CHECK_THROWS_WITH(lbfgs_minimize(bad_grad, std::vector<double>{5.0}, 10),
                    Catch::Matchers::ContainsSubstring("non-finite gradient") &&
                        Catch::Matchers::ContainsSubstring("step 0"));
}

TEST_CASE("an ill-conditioned quadratic still converges", "[lbfgs]") {
  // f(x) = x0^2 + 1e6 * x1^2: gradient descent would crawl, curvature
  // pairs fix the scaling
  const shortcut::Objective f = [](std::span<const double> x, std::span<double> g) {
    g[0] = 2.0 * x[0];
    g[1] = 2e6 * x[1];
    return x[0] * x[0] + 1e6 * x[1] * x[1];
  };
  LbfgsOptions opts;
  opts.grad_tol = 1e-9;
  const LbfgsResult res = lbfgs_minimize(f, std::vector<double>{1.0, 1.0}, 60, opts);
  CHECK(res.converged);
  CHECK(std::abs(res.x[0]) < 1e-8);
  CHECK(std::abs(res.x[1]) < 1e-8);
}
