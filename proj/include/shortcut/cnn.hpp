#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "shortcut/dataset.hpp"
#include "shortcut/matrix.hpp"
#include "shortcut/prng.hpp"

namespace shortcut {

struct ConvSpec {
  int out_channels = 0;
  bool pool_after = false;
};

struct ArchConfig {
  int in_channels = 3;
  int in_h = 32;
  int in_w = 32;
  int k = 10;
  // 3x3 kernels, stride 1, zero padding 1; empty list = fc head on raw pixels.
  std::vector<ConvSpec> convs = {{32, false}, {32, true}, {64, true}};
};

// One conv block: 3x3 convolution, rectifier, optional 2x2 max pool.
struct ConvLayer {
  int in_c = 0, out_c = 0;
  int h = 0, w = 0;  // input spatial size at this depth
  bool pool_after = false;
  Matrix weight;  // out_c x in_c*9
  std::vector<double> bias;
};

struct CnnModel {
  ArchConfig arch;
  std::uint64_t seed = 0;
  std::vector<ConvLayer> convs;
  std::size_t flat_dim = 0;
  Matrix fc_weight;  // k x flat_dim
  std::vector<double> fc_bias;
};

// Gradient (or velocity) buffers shaped like the model parameters.
struct CnnGradients {
  std::vector<Matrix> conv_w;
  std::vector<std::vector<double>> conv_b;
  Matrix fc_w;
  std::vector<double> fc_b;

  explicit CnnGradients(const CnnModel& m) : fc_w(m.fc_weight.rows, m.fc_weight.cols) {
    for (const ConvLayer& layer : m.convs) {
      conv_w.emplace_back(layer.weight.rows, layer.weight.cols);
      conv_b.emplace_back(layer.bias.size(), 0.0);
    }
    fc_b.assign(m.fc_bias.size(), 0.0);
  }

  void zero() {
    for (Matrix& w : conv_w) std::fill(w.data.begin(), w.data.end(), 0.0);
    for (auto& b : conv_b) std::fill(b.begin(), b.end(), 0.0);
    std::fill(fc_w.data.begin(), fc_w.data.end(), 0.0);
    std::fill(fc_b.begin(), fc_b.end(), 0.0);
  }
};

// Parameter tensors in a fixed order shared by model and gradient buffers,
// so optimizer updates and gradient checks can iterate both in lockstep.
inline std::vector<std::span<double>> parameter_views(CnnModel& m) {
  std::vector<std::span<double>> views;
  for (ConvLayer& layer : m.convs) {
    views.emplace_back(layer.weight.data);
    views.emplace_back(layer.bias);
  }
  views.emplace_back(m.fc_weight.data);
  views.emplace_back(m.fc_bias);
  return views;
}

inline std::vector<std::span<double>> parameter_views(CnnGradients& g) {
  std::vector<std::span<double>> views;
  for (std::size_t i = 0; i < g.conv_w.size(); ++i) {
    views.emplace_back(g.conv_w[i].data);
    views.emplace_back(g.conv_b[i]);
  }
  views.emplace_back(g.fc_w.data);
  views.emplace_back(g.fc_b);
  return views;
}

inline std::size_t parameter_count(const CnnModel& m) {
  std::size_t total = m.fc_weight.data.size() + m.fc_bias.size();
  for (const ConvLayer& layer : m.convs) total += layer.weight.data.size() + layer.bias.size();
  return total;
}

inline CnnModel build_small_cnn(const ArchConfig& arch, std::uint64_t seed) {
  if (arch.in_channels < 1 || arch.in_h < 1 || arch.in_w < 1 || arch.k < 1) {
    throw std::invalid_argument("build_small_cnn: invalid input shape or class count");
  }
  CnnModel m;
  m.arch = arch;
  m.seed = seed;
  Prng root(seed);
  int c = arch.in_channels, h = arch.in_h, w = arch.in_w;
  for (std::size_t i = 0; i < arch.convs.size(); ++i) {
    const ConvSpec& spec = arch.convs[i];
    if (spec.out_channels < 1) throw std::invalid_argument("build_small_cnn: bad channel count");
    ConvLayer layer;
    layer.in_c = c;
    layer.out_c = spec.out_channels;
    layer.h = h;
    layer.w = w;
    layer.pool_after = spec.pool_after;
    layer.weight = Matrix(static_cast<std::size_t>(layer.out_c),
                          static_cast<std::size_t>(layer.in_c) * 9);
    Prng stream = root.substream("conv", i);
    const double std = std::sqrt(2.0 / (9.0 * layer.in_c));
    for (double& v : layer.weight.data) v = std * stream.next_normal();
    layer.bias.assign(static_cast<std::size_t>(layer.out_c), 0.0);
    if (spec.pool_after) {
      if (h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2) {
        throw std::invalid_argument("build_small_cnn: pool needs even spatial dims, got " +
                                    std::to_string(h) + "x" + std::to_string(w));
      }
      h /= 2;
      w /= 2;
    }
    c = spec.out_channels;
    m.convs.push_back(std::move(layer));
  }
  m.flat_dim = static_cast<std::size_t>(c) * h * w;
  m.fc_weight = Matrix(static_cast<std::size_t>(arch.k), m.flat_dim);
  Prng stream = root.substream("fc");
  const double std = std::sqrt(2.0 / static_cast<double>(m.flat_dim));
  for (double& v : m.fc_weight.data) v = std * stream.next_normal();
  m.fc_bias.assign(static_cast<std::size_t>(arch.k), 0.0);
  return m;
}

namespace detail {

// Unrolls 3x3 neighborhoods (zero padded) into a (c*9) x (h*w) matrix so the
// convolution becomes one dense product per image.
inline void im2col3x3(const double* in, int c, int h, int w, double* cols) {
  for (int ci = 0; ci < c; ++ci) {
    const double* plane = in + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = cols + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) *
                                 (static_cast<std::size_t>(h) * w);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          double* row = dst + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::memset(row, 0, sizeof(double) * w);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sy) * w + (kx - 1);
          const int x0 = kx == 0 ? 1 : 0;
          const int x1 = kx == 2 ? w - 1 : w;
          if (x0 > 0) row[0] = 0.0;
          std::memcpy(row + x0, src + x0, sizeof(double) * (x1 - x0));
          if (x1 < w) row[w - 1] = 0.0;
        }
      }
    }
  }
}

// Adjoint of im2col3x3: scatter-add column gradients back onto the input.
inline void col2im3x3(const double* cols, int c, int h, int w, double* in_grad) {
  std::memset(in_grad, 0, sizeof(double) * c * h * w);
  for (int ci = 0; ci < c; ++ci) {
    double* plane = in_grad + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = cols + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) *
                                       (static_cast<std::size_t>(h) * w);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const int x0 = kx == 0 ? 1 : 0;
          const int x1 = kx == 2 ? w - 1 : w;
          double* dst = plane + static_cast<std::size_t>(sy) * w + (kx - 1);
          const double* row = src + static_cast<std::size_t>(y) * w;
          for (int x = x0; x < x1; ++x) dst[x] += row[x];
        }
      }
    }
  }
}

// Single-image buffers, reused across a batch.
struct CnnWorkspace {
  struct LayerBuf {
    std::vector<double> cols;    // in_c*9 x h*w
    std::vector<double> act;     // out_c x h*w, post-rectifier
    std::vector<double> pooled;  // out_c x h*w/4 when pooling
    std::vector<int> pool_idx;   // winner position within the act plane
    std::vector<double> d_out;   // grad wrt layer output
    std::vector<double> d_act;
    std::vector<double> d_cols;
  };
  std::vector<LayerBuf> layers;
  std::vector<double> logits, probs, d_logits;

  explicit CnnWorkspace(const CnnModel& m) {
    layers.resize(m.convs.size());
    for (std::size_t i = 0; i < m.convs.size(); ++i) {
      const ConvLayer& conv = m.convs[i];
      const std::size_t hw = static_cast<std::size_t>(conv.h) * conv.w;
      layers[i].cols.resize(static_cast<std::size_t>(conv.in_c) * 9 * hw);
      layers[i].act.resize(static_cast<std::size_t>(conv.out_c) * hw);
      layers[i].d_act.resize(layers[i].act.size());
      layers[i].d_cols.resize(layers[i].cols.size());
      if (conv.pool_after) {
        layers[i].pooled.resize(layers[i].act.size() / 4);
        layers[i].pool_idx.resize(layers[i].pooled.size());
      }
      layers[i].d_out.resize(conv.pool_after ? layers[i].pooled.size() : layers[i].act.size());
    }
    logits.resize(m.fc_bias.size());
    probs.resize(m.fc_bias.size());
    d_logits.resize(m.fc_bias.size());
  }
};

// Forward one image; returns a view of the flattened final feature vector.
inline const double* cnn_forward_image(const CnnModel& m, const double* image,
                                       CnnWorkspace& ws) {
  const double* cur = image;
  for (std::size_t i = 0; i < m.convs.size(); ++i) {
    const ConvLayer& conv = m.convs[i];
    CnnWorkspace::LayerBuf& buf = ws.layers[i];
    const std::size_t hw = static_cast<std::size_t>(conv.h) * conv.w;
    im2col3x3(cur, conv.in_c, conv.h, conv.w, buf.cols.data());
    MatrixMap act(buf.act.data(), conv.out_c, static_cast<Eigen::Index>(hw));
    act.noalias() = conv.weight.as_eigen() *
                    ConstMatrixMap(buf.cols.data(), static_cast<Eigen::Index>(conv.in_c) * 9,
                                   static_cast<Eigen::Index>(hw));
    for (int oc = 0; oc < conv.out_c; ++oc) act.row(oc).array() += conv.bias[oc];
    act = act.cwiseMax(0.0);
    if (conv.pool_after) {
      const int ph = conv.h / 2, pw = conv.w / 2;
      for (int oc = 0; oc < conv.out_c; ++oc) {
        const double* plane = buf.act.data() + static_cast<std::size_t>(oc) * hw;
        double* out = buf.pooled.data() + static_cast<std::size_t>(oc) * ph * pw;
        int* idx = buf.pool_idx.data() + static_cast<std::size_t>(oc) * ph * pw;
        for (int y = 0; y < ph; ++y) {
          for (int x = 0; x < pw; ++x) {
            const int base = 2 * y * conv.w + 2 * x;
            int best = base;
            if (plane[base + 1] > plane[best]) best = base + 1;
            if (plane[base + conv.w] > plane[best]) best = base + conv.w;
            if (plane[base + conv.w + 1] > plane[best]) best = base + conv.w + 1;
            out[y * pw + x] = plane[best];
            idx[y * pw + x] = best;
          }
        }
      }
      cur = buf.pooled.data();
    } else {
      cur = buf.act.data();
    }
  }
  return cur;
}

}  // namespace detail

// Logits for a batch of images stored as contiguous (c,h,w) doubles.
inline Matrix forward_batch(const CnnModel& m, std::span<const double> images, std::size_t n) {
  const std::size_t dim =
      static_cast<std::size_t>(m.arch.in_channels) * m.arch.in_h * m.arch.in_w;
  if (images.size() != n * dim) throw std::invalid_argument("forward_batch: size mismatch");
  detail::CnnWorkspace ws(m);
  const std::size_t k = m.fc_bias.size();
  Matrix logits(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* flat = detail::cnn_forward_image(m, images.data() + i * dim, ws);
    Eigen::Map<Eigen::VectorXd>(logits.row(i).data(), static_cast<Eigen::Index>(k)).noalias() =
        m.fc_weight.as_eigen() *
        Eigen::Map<const Eigen::VectorXd>(flat, static_cast<Eigen::Index>(m.flat_dim));
    for (std::size_t j = 0; j < k; ++j) logits(i, j) += m.fc_bias[j];
  }
  return logits;
}

// Mean soft-target cross-entropy over the batch; accumulates parameter
// gradients into `grads` when non-null. Targets are rows of class weights
// (one-hot for plain labels, mixed rows under mixup).
inline double batch_loss_and_grad(const CnnModel& m, std::span<const double> images,
                                  std::size_t n, const Matrix& targets, CnnGradients* grads) {
  const std::size_t dim =
      static_cast<std::size_t>(m.arch.in_channels) * m.arch.in_h * m.arch.in_w;
  const std::size_t k = m.fc_bias.size();
  if (images.size() != n * dim) throw std::invalid_argument("batch size mismatch");
  if (targets.rows != n || targets.cols != k) {
    throw std::invalid_argument("target shape mismatch");
  }
  detail::CnnWorkspace ws(m);
  if (grads) grads->zero();
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t i = 0; i < n; ++i) {
    const double* image = images.data() + i * dim;
    const double* flat = detail::cnn_forward_image(m, image, ws);
    const auto flat_vec =
        Eigen::Map<const Eigen::VectorXd>(flat, static_cast<Eigen::Index>(m.flat_dim));
    auto logit_vec = Eigen::Map<Eigen::VectorXd>(ws.logits.data(), static_cast<Eigen::Index>(k));
    logit_vec.noalias() = m.fc_weight.as_eigen() * flat_vec;
    for (std::size_t j = 0; j < k; ++j) ws.logits[j] += m.fc_bias[j];

    double max_logit = ws.logits[0];
    for (std::size_t j = 1; j < k; ++j) max_logit = std::max(max_logit, ws.logits[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      ws.probs[j] = std::exp(ws.logits[j] - max_logit);
      sum += ws.probs[j];
    }
    const double log_sum = std::log(sum) + max_logit;
    const auto target = targets.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      ws.probs[j] /= sum;
      loss += inv_n * target[j] * (log_sum - ws.logits[j]);
    }
    if (!grads) continue;

    for (std::size_t j = 0; j < k; ++j) {
      ws.d_logits[j] = (ws.probs[j] - target[j]) * inv_n;
      grads->fc_b[j] += ws.d_logits[j];
    }
    const auto d_logit_vec =
        Eigen::Map<const Eigen::VectorXd>(ws.d_logits.data(), static_cast<Eigen::Index>(k));
    grads->fc_w.as_eigen().noalias() += d_logit_vec * flat_vec.transpose();
    if (m.convs.empty()) continue;

    // Flattened feature gradient feeds the last conv block's output slot.
    {
      detail::CnnWorkspace::LayerBuf& last = ws.layers.back();
      Eigen::Map<Eigen::VectorXd>(last.d_out.data(),
                                  static_cast<Eigen::Index>(last.d_out.size()))
          .noalias() = m.fc_weight.as_eigen().transpose() * d_logit_vec;
    }
    for (std::size_t li = m.convs.size(); li-- > 0;) {
      const ConvLayer& conv = m.convs[li];
      detail::CnnWorkspace::LayerBuf& buf = ws.layers[li];
      const std::size_t hw = static_cast<std::size_t>(conv.h) * conv.w;
      if (conv.pool_after) {
        std::memset(buf.d_act.data(), 0, sizeof(double) * buf.d_act.size());
        const std::size_t phw = hw / 4;
        for (int oc = 0; oc < conv.out_c; ++oc) {
          const double* d_out = buf.d_out.data() + static_cast<std::size_t>(oc) * phw;
          const int* idx = buf.pool_idx.data() + static_cast<std::size_t>(oc) * phw;
          double* d_plane = buf.d_act.data() + static_cast<std::size_t>(oc) * hw;
          for (std::size_t j = 0; j < phw; ++j) d_plane[idx[j]] += d_out[j];
        }
      } else {
        std::memcpy(buf.d_act.data(), buf.d_out.data(), sizeof(double) * buf.d_act.size());
      }
      for (std::size_t j = 0; j < buf.d_act.size(); ++j) {
        if (buf.act[j] <= 0.0) buf.d_act[j] = 0.0;
      }
      const ConstMatrixMap d_act(buf.d_act.data(), conv.out_c, static_cast<Eigen::Index>(hw));
      const ConstMatrixMap cols(buf.cols.data(), static_cast<Eigen::Index>(conv.in_c) * 9,
                                static_cast<Eigen::Index>(hw));
      grads->conv_w[li].as_eigen().noalias() += d_act * cols.transpose();
      for (int oc = 0; oc < conv.out_c; ++oc) {
        grads->conv_b[li][oc] += d_act.row(oc).sum();
      }
      if (li == 0) continue;  // input image gradient is not needed
      MatrixMap d_cols(buf.d_cols.data(), static_cast<Eigen::Index>(conv.in_c) * 9,
                       static_cast<Eigen::Index>(hw));
      d_cols.noalias() = conv.weight.as_eigen().transpose() * d_act;
      detail::col2im3x3(buf.d_cols.data(), conv.in_c, conv.h, conv.w,
                        ws.layers[li - 1].d_out.data());
    }
  }
  return loss;
}

inline Matrix one_hot_targets(std::span<const int> labels, std::size_t k) {
  Matrix t(labels.size(), k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw std::invalid_argument("one_hot_targets: label out of range");
    }
    t(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return t;
}

inline double accuracy_from_logits(const Matrix& logits, std::span<const std::uint16_t> labels) {
  if (logits.rows != labels.size()) throw std::invalid_argument("accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    auto row = logits.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (best == labels[i]) ++hit;
  }
  return 100.0 * static_cast<double>(hit) / static_cast<double>(logits.rows);
}

// Argmax accuracy (percent) on unaugmented data.
inline double evaluate(const CnnModel& m, const LabeledImageSet& data) {
  const std::size_t dim = data.image_dim();
  if (dim != static_cast<std::size_t>(m.arch.in_channels) * m.arch.in_h * m.arch.in_w ||
      data.k != m.arch.k) {
    throw std::invalid_argument("evaluate: dataset shape mismatch");
  }
  const std::size_t chunk = 256;
  std::vector<double> buf;
  double correct = 0.0;
  for (std::size_t start = 0; start < data.n(); start += chunk) {
    const std::size_t count = std::min(chunk, data.n() - start);
    buf.assign(data.pixels.begin() + static_cast<std::ptrdiff_t>(start * dim),
               data.pixels.begin() + static_cast<std::ptrdiff_t>((start + count) * dim));
    Matrix logits = forward_batch(m, buf, count);
    std::span<const std::uint16_t> labels(data.labels.data() + start, count);
    correct += accuracy_from_logits(logits, labels) * static_cast<double>(count) / 100.0;
  }
  return 100.0 * correct / static_cast<double>(data.n());
}

// Max relative error between analytic parameter gradients and central finite
// differences (step 1e-5) over a deterministic sample of entries per tensor.
// Differences are measured against max(|analytic|, |numeric|, 1e-5) so that
// zero-gradient entries compare at a fixed absolute scale.
inline double grad_check(const CnnModel& model, std::span<const double> images, std::size_t n,
                         std::span<const int> labels, std::size_t samples_per_tensor = 32) {
  CnnModel probe = model;
  const Matrix targets = one_hot_targets(labels, probe.fc_bias.size());
  CnnGradients analytic(probe);
  batch_loss_and_grad(probe, images, n, targets, &analytic);

  auto params = parameter_views(probe);
  auto grads = parameter_views(analytic);
  Prng picker(0x6ADCEECull);
  const double step = 1e-5;
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    std::span<double> theta = params[t];
    Prng stream = picker.substream("tensor", t);
    const std::size_t count = std::min(samples_per_tensor, theta.size());
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t j = samples_per_tensor < theta.size()
                                ? static_cast<std::size_t>(stream.next_below(theta.size()))
                                : s;
      const double saved = theta[j];
      theta[j] = saved + step;
      const double up = batch_loss_and_grad(probe, images, n, targets, nullptr);
      theta[j] = saved - step;
      const double down = batch_loss_and_grad(probe, images, n, targets, nullptr);
      theta[j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = grads[t][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-5});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace shortcut
