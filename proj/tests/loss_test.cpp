#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "shortcut/loss.hpp"
#include "shortcut/prng.hpp"

using shortcut::LossGrad;
using shortcut::Matrix;
using shortcut::Prng;

TEST_CASE("uniform logits give ln k", "[loss]") {
  Matrix logits(3, 10);  // all zero: uniform distribution
  const std::vector<int> labels = {0, 4, 9};
  const LossGrad lg = shortcut::softmax_cross_entropy(logits, labels);
  CHECK(lg.loss == Catch::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(lg.loss == Catch::Approx(2.302585).margin(1e-6));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 10; ++j) {
      const double expect = (0.1 - (static_cast<int>(j) == labels[i] ? 1.0 : 0.0)) / 3.0;
      CHECK(lg.grad(i, j) == Catch::Approx(expect).margin(1e-15));
    }
  }
}

TEST_CASE("huge-margin correct logit drives loss to zero", "[loss]") {
  Matrix logits(1, 4);
  logits(0, 2) = 1000.0;
  const std::vector<int> labels = {2};
  const LossGrad lg = shortcut::softmax_cross_entropy(logits, labels);
  CHECK(lg.loss >= 0.0);
  CHECK(lg.loss < 1e-12);
}

TEST_CASE("loss is stable under large logit shifts", "[loss]") {
  Prng prng(3);
  Matrix logits(5, 6);
  for (double& v : logits.data) v = prng.next_uniform(-2.0, 2.0);
  const std::vector<int> labels = {0, 5, 3, 2, 1};
  const double base = shortcut::softmax_cross_entropy(logits, labels).loss;
  for (double& v : logits.data) v += 5000.0;  // would overflow exp without LSE
  const double shifted = shortcut::softmax_cross_entropy(logits, labels).loss;
  CHECK(std::isfinite(shifted));
  CHECK(shifted == Catch::Approx(base).epsilon(1e-9));
}

TEST_CASE("gradient rows sum to zero and loss is nonnegative", "[loss]") {
  Prng prng(17);
  Matrix logits(8, 5);
  for (double& v : logits.data) v = prng.next_uniform(-3.0, 3.0);
  std::vector<int> labels;
  for (int i = 0; i < 8; ++i) labels.push_back(static_cast<int>(prng.next_below(5)));
  const LossGrad lg = shortcut::softmax_cross_entropy(logits, labels);
  CHECK(lg.loss >= 0.0);
  for (std::size_t i = 0; i < 8; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < 5; ++j) row_sum += lg.grad(i, j);
    CHECK(std::abs(row_sum) < 1e-15);
  }
}

TEST_CASE("gradient matches central finite differences", "[loss]") {
  Prng prng(29);
  Matrix logits(4, 3);
  for (double& v : logits.data) v = prng.next_uniform(-2.0, 2.0);
  const std::vector<int> labels = {2, 0, 1, 1};
  const LossGrad lg = shortcut::softmax_cross_entropy(logits, labels);

  const double h = 1e-6;
  for (std::size_t idx = 0; idx < logits.data.size(); ++idx) {
    Matrix up = logits, down = logits;
    up.data[idx] += h;
    down.data[idx] -= h;
    const double fd = (shortcut::softmax_cross_entropy(up, labels).loss -
                       shortcut::softmax_cross_entropy(down, labels).loss) /
                      (2.0 * h);
    const double a = lg.grad.data[idx];
    const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
    CHECK(rel <= 1e-6);
  }
}

TEST_CASE("label validation", "[loss]") {
  Matrix logits(2, 3);
  CHECK_THROWS_AS(shortcut::softmax_cross_entropy(logits, std::vector<int>{0, 3}),
                  std::invalid_argument);
  CHECK_THROWS_AS(shortcut::softmax_cross_entropy(logits, std::vector<int>{-1, 0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(shortcut::softmax_cross_entropy(logits, std::vector<int>{0}),
                  std::invalid_argument);
  CHECK_THROWS_WITH(shortcut::softmax_cross_entropy(logits, std::vector<int>{0, 3}),
                    Catch::Matchers::ContainsSubstring("row 1"));
}
