#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "shortcut/dataset.hpp"
#include "shortcut/lbfgs.hpp"
#include "shortcut/loss.hpp"
#include "shortcut/matrix.hpp"
#include "shortcut/prng.hpp"
#include "shortcut/synth.hpp"

namespace shortcut {

struct ProbeReport {
  std::string model_kind;      // "linear" or "two_layer"
  double train_accuracy = 0.0; // percent
  double final_loss = 0.0;
  int steps = 0;
  std::optional<double> control_accuracy;  // percent, shuffled-label run
  std::uint64_t seed = 0;
};

// Full-batch loss/gradient closure over a flat parameter vector. `logits`
// holds the class scores from the most recent evaluation. The features
// matrix is captured by reference and must outlive the objective.
struct ProbeObjective {
  Objective fn;
  std::size_t n_params = 0;
  std::shared_ptr<Matrix> logits;
};

namespace detail {

// n x dim rows scaled to unit L2 norm, promoted to double.
inline Matrix unit_rows(const float* data, std::size_t n, std::size_t dim) {
  Matrix out(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const float* src = data + i * dim;
    auto row = out.row(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      row[j] = static_cast<double>(src[j]);
      sq += row[j] * row[j];
    }
    if (sq == 0.0) {
      throw std::invalid_argument("prepare_features: zero-norm row " + std::to_string(i));
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t j = 0; j < dim; ++j) row[j] *= inv;
  }
  return out;
}

// Column-major view of the transpose of a row-major (rows x cols) buffer.
inline Eigen::Map<const Eigen::MatrixXd> t_view(const double* p, std::size_t rows,
                                                std::size_t cols) {
  return {p, static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(rows)};
}
inline Eigen::Map<Eigen::MatrixXd> t_view(double* p, std::size_t rows, std::size_t cols) {
  return {p, static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(rows)};
}

inline double argmax_accuracy(const Matrix& logits, std::span<const int> labels) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    auto row = logits.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (static_cast<int>(best) == labels[i]) ++hit;
  }
  return 100.0 * static_cast<double>(hit) / static_cast<double>(logits.rows);
}

inline void check_probe_labels(std::span<const int> labels, std::size_t n, int k) {
  if (labels.size() != n) throw std::invalid_argument("probe: label count mismatch");
  for (int label : labels) {
    if (label < 0 || label >= k) throw std::invalid_argument("probe: label out of range");
  }
}

}  // namespace detail

// Flattens each perturbation into a unit-norm row vector.
inline Matrix prepare_features(const PerturbationSet& perts) {
  if (perts.n() == 0) throw std::invalid_argument("prepare_features: empty set");
  return detail::unit_rows(perts.data.data(), perts.n(), perts.sample_dim());
}

// Same preprocessing applied to raw images (the clean-data reference rows).
inline Matrix prepare_features(const LabeledImageSet& images) {
  if (images.n() == 0) throw std::invalid_argument("prepare_features: empty set");
  return detail::unit_rows(images.pixels.data(), images.n(), images.image_dim());
}

// Cross-entropy over logits = X W + b with parameters flattened as
// [W row-major (d x k) | b (k)].
inline ProbeObjective make_linear_objective(const Matrix& features,
                                            std::span<const int> labels, int k) {
  const std::size_t n = features.rows, d = features.cols;
  detail::check_probe_labels(labels, n, k);
  ProbeObjective obj;
  obj.n_params = d * static_cast<std::size_t>(k) + static_cast<std::size_t>(k);
  obj.logits = std::make_shared<Matrix>(n, static_cast<std::size_t>(k));
  obj.fn = [&features, labels = std::vector<int>(labels.begin(), labels.end()), k,
            logits = obj.logits](std::span<const double> theta, std::span<double> grad) {
    const std::size_t nn = features.rows, dd = features.cols;
    const auto xt = detail::t_view(features.data.data(), nn, dd);  // d x n
    const auto wt = detail::t_view(theta.data(), dd, static_cast<std::size_t>(k));
    const auto bias = Eigen::Map<const Eigen::VectorXd>(theta.data() + dd * k, k);
    auto lt = detail::t_view(logits->data.data(), nn, static_cast<std::size_t>(k));  // k x n
    lt.noalias() = wt * xt;
    lt.colwise() += bias;
    LossGrad lg = softmax_cross_entropy(*logits, labels);
    auto dwt = detail::t_view(grad.data(), dd, static_cast<std::size_t>(k));
    const auto glt = detail::t_view(lg.grad.data.data(), nn, static_cast<std::size_t>(k));
    dwt.noalias() = glt * xt.transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + dd * k, k) = glt.rowwise().sum();
    return lg.loss;
  };
  return obj;
}

// Two-layer network d -> width -> k with rectifier hidden units; parameters
// flattened as [W1 (d x width) | b1 | W2 (width x k) | b2].
inline ProbeObjective make_two_layer_objective(const Matrix& features,
                                               std::span<const int> labels, int k,
                                               int width = 30) {
  const std::size_t n = features.rows, d = features.cols;
  detail::check_probe_labels(labels, n, k);
  if (width < 1) throw std::invalid_argument("probe: width must be >= 1");
  const std::size_t wd = static_cast<std::size_t>(width);
  const std::size_t kk = static_cast<std::size_t>(k);
  ProbeObjective obj;
  obj.n_params = d * wd + wd + wd * kk + kk;
  obj.logits = std::make_shared<Matrix>(n, kk);
  auto hidden = std::make_shared<Eigen::MatrixXd>(width, n);  // H^T
  obj.fn = [&features, labels = std::vector<int>(labels.begin(), labels.end()), k, width,
            logits = obj.logits, hidden](std::span<const double> theta, std::span<double> grad) {
    const std::size_t nn = features.rows, dd = features.cols;
    const std::size_t lwd = static_cast<std::size_t>(width), lkk = static_cast<std::size_t>(k);
    const std::size_t off_b1 = dd * lwd;
    const std::size_t off_w2 = off_b1 + lwd;
    const std::size_t off_b2 = off_w2 + lwd * lkk;
    const auto xt = detail::t_view(features.data.data(), nn, dd);  // d x n
    const auto w1t = detail::t_view(theta.data(), dd, lwd);        // width x d
    const auto b1 = Eigen::Map<const Eigen::VectorXd>(theta.data() + off_b1, width);
    const auto w2t = detail::t_view(theta.data() + off_w2, lwd, lkk);  // k x width
    const auto b2 = Eigen::Map<const Eigen::VectorXd>(theta.data() + off_b2, k);

    hidden->noalias() = w1t * xt;
    hidden->colwise() += b1;
    *hidden = hidden->cwiseMax(0.0);
    auto lt = detail::t_view(logits->data.data(), nn, lkk);  // k x n
    lt.noalias() = w2t * (*hidden);
    lt.colwise() += b2;
    LossGrad lg = softmax_cross_entropy(*logits, labels);

    const auto glt = detail::t_view(lg.grad.data.data(), nn, lkk);  // k x n
    auto dw2t = detail::t_view(grad.data() + off_w2, lwd, lkk);
    dw2t.noalias() = glt * hidden->transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + off_b2, k) = glt.rowwise().sum();

    Eigen::MatrixXd dhidden = w2t.transpose() * glt;  // width x n
    dhidden = (hidden->array() > 0.0).select(dhidden, 0.0);
    auto dw1t = detail::t_view(grad.data(), dd, lwd);
    dw1t.noalias() = dhidden * xt.transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + off_b1, width) = dhidden.rowwise().sum();
    return lg.loss;
  };
  return obj;
}

// Full-batch multinomial logistic regression trained with L-BFGS from zero
// initialization. Training accuracy is argmax accuracy on the training
// features themselves.
inline ProbeReport fit_linear(const Matrix& features, std::span<const int> labels,
                              int k, int max_steps = 50, std::uint64_t seed = 0) {
  ProbeObjective obj = make_linear_objective(features, labels, k);
  std::vector<double> theta(obj.n_params, 0.0);
  LbfgsResult opt = lbfgs_minimize(obj.fn, theta, max_steps);
  std::vector<double> grad_unused(obj.n_params);
  obj.fn(opt.x, grad_unused);  // refresh logits at the optimum
  ProbeReport report;
  report.model_kind = "linear";
  report.train_accuracy = detail::argmax_accuracy(*obj.logits, labels);
  report.final_loss = opt.trace.back();
  report.steps = opt.steps;
  report.seed = seed;
  return report;
}

// Width-30 two-layer probe trained with L-BFGS from a seeded scaled-normal
// initialization (std sqrt(2/fan_in); biases zero).
inline ProbeReport fit_two_layer(const Matrix& features, std::span<const int> labels,
                                 int k, int width = 30, int max_steps = 50,
                                 std::uint64_t seed = 0) {
  ProbeObjective obj = make_two_layer_objective(features, labels, k, width);
  const std::size_t d = features.cols;
  const std::size_t wd = static_cast<std::size_t>(width);
  const std::size_t off_b1 = d * wd;
  const std::size_t off_w2 = off_b1 + wd;
  const std::size_t off_b2 = off_w2 + wd * static_cast<std::size_t>(k);

  std::vector<double> theta(obj.n_params, 0.0);
  Prng init = Prng(seed).substream("two-layer-init");
  const double std1 = std::sqrt(2.0 / static_cast<double>(d));
  const double std2 = std::sqrt(2.0 / static_cast<double>(width));
  for (std::size_t i = 0; i < off_b1; ++i) theta[i] = std1 * init.next_normal();
  for (std::size_t i = off_w2; i < off_b2; ++i) theta[i] = std2 * init.next_normal();

  LbfgsResult opt = lbfgs_minimize(obj.fn, theta, max_steps);
  std::vector<double> grad_unused(obj.n_params);
  obj.fn(opt.x, grad_unused);
  ProbeReport report;
  report.model_kind = "two_layer";
  report.train_accuracy = detail::argmax_accuracy(*obj.logits, labels);
  report.final_loss = opt.trace.back();
  report.steps = opt.steps;
  report.seed = seed;
  return report;
}

// Negative control: fit_linear on labels permuted by `perm`. A near-chance
// result here is what makes a high matched-label accuracy meaningful.
// Caveat: with n <= d+1 points in general position even shuffled labels can
// be interpolated, so the control is only informative for n >> d.
inline ProbeReport control_with_permutation(const Matrix& features,
                                            std::span<const int> labels, int k,
                                            std::span<const std::size_t> perm,
                                            int max_steps = 50,
                                            std::uint64_t seed = 0) {
  if (perm.size() != labels.size()) {
    throw std::invalid_argument("control: permutation size mismatch");
  }
  std::vector<int> shuffled(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) shuffled[i] = labels[perm[i]];
  ProbeReport report = fit_linear(features, shuffled, k, max_steps, seed);
  report.control_accuracy = report.train_accuracy;
  return report;
}

inline ProbeReport shuffled_label_control(const Matrix& features,
                                          std::span<const int> labels, int k,
                                          Prng& prng, int max_steps = 50) {
  std::vector<std::size_t> perm(labels.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size(); i > 1; --i) {
    std::swap(perm[i - 1], perm[prng.next_below(i)]);
  }
  return control_with_permutation(features, labels, k, perm, max_steps, prng.key());
}

inline std::vector<int> labels_as_int(std::span<const std::uint16_t> labels) {
  return {labels.begin(), labels.end()};
}

}  // namespace shortcut
