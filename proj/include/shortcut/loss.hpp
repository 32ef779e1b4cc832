#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

#include "shortcut/matrix.hpp"

namespace shortcut {

struct LossGrad {
  double loss = 0.0;
  Matrix grad;  // same shape as logits
};

// Mean softmax cross-entropy over rows, with log-sum-exp stabilization.
// grad = (softmax - one_hot) / n.
inline LossGrad softmax_cross_entropy(const Matrix& logits,
                                      std::span<const int> labels) {
  const std::size_t n = logits.rows;
  const std::size_t k = logits.cols;
  if (labels.size() != n) {
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  }
  LossGrad out;
  out.grad = Matrix(n, k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw std::invalid_argument("softmax_cross_entropy: label " +
                                  std::to_string(y) + " out of range [0," +
                                  std::to_string(k) + ") at row " +
                                  std::to_string(i));
    }
    auto row = logits.row(i);
    double m = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - m);
    double lse = m + std::log(sum);
    total += lse - row[static_cast<std::size_t>(y)];
    auto g = out.grad.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      g[j] = std::exp(row[j] - lse) / static_cast<double>(n);
    }
    g[static_cast<std::size_t>(y)] -= 1.0 / static_cast<double>(n);
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

}  // namespace shortcut
