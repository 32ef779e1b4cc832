#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "shortcut/matrix.hpp"
#include "shortcut/prng.hpp"

namespace shortcut {

struct EmbeddingParams {
  double perplexity = 30.0;
  int iters = 1000;
  std::uint64_t seed = 0;
};

struct Embedding {
  Matrix points;  // n x 2
  std::vector<int> labels;
  std::vector<double> kl_trace;  // KL(P||Q) per iteration, unexaggerated P
  EmbeddingParams params;
};

namespace detail {

// Squared Euclidean distances via the Gram matrix.
inline Matrix squared_distances(const Matrix& x) {
  const std::size_t n = x.rows;
  Matrix d2(n, n);
  Eigen::MatrixXd gram = x.as_eigen() * x.as_eigen().transpose();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = gram(i, i) + gram(j, j) - 2.0 * gram(i, j);
      d2(i, j) = v > 0.0 ? v : 0.0;
    }
  }
  return d2;
}

}  // namespace detail

// Symmetrized Gaussian input affinities. Per-row bandwidths are bisected
// until the row perplexity (exp of the Shannon entropy) matches the target
// within 1e-3; the symmetrized matrix sums to 1.
inline Matrix pairwise_affinities(const Matrix& x, double perplexity) {
  const std::size_t n = x.rows;
  if (n < 2) throw std::invalid_argument("pairwise_affinities: need at least 2 points");
  if (perplexity < 5.0 || perplexity > (static_cast<double>(n) - 1.0) / 3.0) {
    throw std::invalid_argument("pairwise_affinities: perplexity must be in [5, (n-1)/3]");
  }
  const Matrix d2 = detail::squared_distances(x);
  Matrix p(n, n);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    bool ok = false;
    for (int step = 0; step < 200 && !ok; ++step) {
      double sum = 0.0, weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
          row[j] = 0.0;
          continue;
        }
        row[j] = std::exp(-beta * d2(i, j));
        sum += row[j];
        weighted += row[j] * d2(i, j);
      }
      if (sum > 0.0) {
        const double entropy = std::log(sum) + beta * weighted / sum;
        if (std::abs(std::exp(entropy) - perplexity) < 1e-3) {
          for (std::size_t j = 0; j < n; ++j) p(i, j) = row[j] / sum;
          ok = true;
          break;
        }
        if (std::exp(entropy) > perplexity) {
          lo = beta;  // kernel too wide
          beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (lo + hi);
        } else {
          hi = beta;
          beta = 0.5 * (lo + hi);
        }
      } else {
        hi = beta;  // all mass underflowed; narrow back
        beta = 0.5 * (lo + hi);
      }
    }
    if (!ok) {
      throw std::runtime_error("pairwise_affinities: perplexity search failed for row " +
                               std::to_string(i) + " (duplicate points?)");
    }
  }
  Matrix sym(n, n);
  const double inv = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) sym(i, j) = (p(i, j) + p(j, i)) * inv;
  }
  return sym;
}

namespace detail {

// Class-proportional subsample of at most cap indices, in original order.
inline std::vector<std::size_t> stratified_subsample(std::span<const int> labels,
                                                     std::size_t cap, Prng& prng) {
  const std::size_t n = labels.size();
  if (n <= cap) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  int k = 0;
  for (int label : labels) k = std::max(k, label + 1);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  std::vector<std::size_t> quota(by_class.size());
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const double exact =
        static_cast<double>(cap) * static_cast<double>(by_class[c].size()) / n;
    quota[c] = static_cast<std::size_t>(exact);
    assigned += quota[c];
    frac.emplace_back(exact - static_cast<double>(quota[c]), c);
  }
  std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (std::size_t r = 0; assigned < cap; ++r) {
    ++quota[frac[r % frac.size()].second];
    ++assigned;
  }
  std::vector<std::size_t> chosen;
  chosen.reserve(cap);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& pool = by_class[c];
    Prng stream = prng.substream("subsample", c);
    for (std::size_t i = pool.size(); i > 1; --i) {
      std::swap(pool[i - 1], pool[stream.next_below(i)]);
    }
    const std::size_t take = std::min(quota[c], pool.size());
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace detail

// Exact t-SNE: gradient descent on KL(P||Q) with a Student-t low-dimensional
// kernel, early exaggeration x12 for the first 250 iterations, learning rate
// 200, momentum 0.5 switching to 0.8 after iteration 250. Inputs larger than
// 3000 points are first reduced by a class-stratified subsample.
inline Embedding tsne_embed(const Matrix& x, std::span<const int> labels,
                            double perplexity, int iters, Prng& prng) {
  if (x.rows != labels.size()) throw std::invalid_argument("tsne_embed: label count mismatch");
  if (x.rows < 10) throw std::invalid_argument("tsne_embed: need at least 10 points");
  if (iters < 1) throw std::invalid_argument("tsne_embed: iters must be >= 1");

  constexpr std::size_t kCap = 3000;
  const std::vector<std::size_t> keep = detail::stratified_subsample(labels, kCap, prng);
  const std::size_t n = keep.size();
  Matrix xs(n, x.cols);
  Embedding result;
  result.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = x.row(keep[i]);
    std::copy(src.begin(), src.end(), xs.row(i).begin());
    result.labels[i] = labels[keep[i]];
  }
  const Matrix p = pairwise_affinities(xs, perplexity);

  result.params = {perplexity, iters, prng.key()};
  result.kl_trace.reserve(static_cast<std::size_t>(iters));
  Matrix y(n, 2);
  Prng init = prng.substream("tsne-init");
  for (double& v : y.data) v = 1e-4 * init.next_normal();

  std::vector<double> velocity(n * 2, 0.0);
  std::vector<double> grad(n * 2);
  Matrix num(n, n);  // Student-t kernel values
  constexpr double kExaggeration = 12.0;
  constexpr double kLearningRate = 200.0;

  for (int iter = 1; iter <= iters; ++iter) {
    double num_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y(i, 0) - y(j, 0);
        const double dy = y(i, 1) - y(j, 1);
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        num(i, j) = v;
        num(j, i) = v;
        num_sum += 2.0 * v;
      }
    }
    const double exag = iter <= 250 ? kExaggeration : 1.0;
    double kl = 0.0;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double q = std::max(num(i, j) / num_sum, 1e-12);
        const double pij = p(i, j);
        const double mult = (exag * pij - q) * num(i, j);
        gx += mult * (y(i, 0) - y(j, 0));
        gy += mult * (y(i, 1) - y(j, 1));
        if (pij > 0.0) kl += pij * std::log(pij / q);
      }
      grad[2 * i] = 4.0 * gx;
      grad[2 * i + 1] = 4.0 * gy;
    }
    const double momentum = iter <= 250 ? 0.5 : 0.8;
    double mean_x = 0.0, mean_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      velocity[2 * i] = momentum * velocity[2 * i] - kLearningRate * grad[2 * i];
      velocity[2 * i + 1] = momentum * velocity[2 * i + 1] - kLearningRate * grad[2 * i + 1];
      y(i, 0) += velocity[2 * i];
      y(i, 1) += velocity[2 * i + 1];
      mean_x += y(i, 0);
      mean_y += y(i, 1);
    }
    mean_x /= static_cast<double>(n);
    mean_y /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y(i, 0) -= mean_x;
      y(i, 1) -= mean_y;
    }
    if (!std::isfinite(kl)) {
      throw std::runtime_error("tsne_embed: non-finite divergence at iteration " +
                               std::to_string(iter));
    }
    result.kl_trace.push_back(kl);
  }
  result.points = std::move(y);
  return result;
}

inline Embedding tsne_embed(const Matrix& x, std::span<const int> labels, Prng& prng) {
  return tsne_embed(x, labels, 30.0, 1000, prng);
}

// Mean silhouette coefficient with Euclidean distance.
inline double silhouette(const Matrix& points, std::span<const int> labels) {
  const std::size_t n = points.rows;
  if (labels.size() != n) throw std::invalid_argument("silhouette: label count mismatch");
  int k = 0;
  for (int label : labels) {
    if (label < 0) throw std::invalid_argument("silhouette: negative label");
    k = std::max(k, label + 1);
  }
  std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
  for (int label : labels) ++count[static_cast<std::size_t>(label)];
  std::size_t present = 0;
  for (std::size_t c = 0; c < count.size(); ++c) {
    if (count[c] == 1) {
      throw std::invalid_argument("silhouette: class " + std::to_string(c) +
                                  " has a single point");
    }
    if (count[c] > 0) ++present;
  }
  if (present < 2) throw std::invalid_argument("silhouette: need at least 2 classes");

  double total = 0.0;
  std::vector<double> class_sum(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(class_sum.begin(), class_sum.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = points(i, 0) - points(j, 0);
      const double dy = points(i, 1) - points(j, 1);
      class_sum[static_cast<std::size_t>(labels[j])] += std::sqrt(dx * dx + dy * dy);
    }
    const std::size_t own = static_cast<std::size_t>(labels[i]);
    const double a = class_sum[own] / static_cast<double>(count[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < class_sum.size(); ++c) {
      if (c == own || count[c] == 0) continue;
      b = std::min(b, class_sum[c] / static_cast<double>(count[c]));
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

inline void write_embedding_csv(const Embedding& embedding, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "x,y,label\n";
  char line[128];
  for (std::size_t i = 0; i < embedding.points.rows; ++i) {
    std::snprintf(line, sizeof(line), "%.17g,%.17g,%d\n", embedding.points(i, 0),
                  embedding.points(i, 1), embedding.labels[i]);
    out << line;
  }
  if (!out) throw std::runtime_error("cannot write " + path);
}

}  // namespace shortcut
