#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "shortcut/augment.hpp"
#include "shortcut/cnn.hpp"
#include "shortcut/dataset.hpp"
#include "shortcut/prng.hpp"

namespace shortcut {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  double lr = 0.05;
  double momentum = 0.9;
  std::vector<int> decay_epochs = {15, 22};  // lr divided by 10 after each
  AugmentOptions augment{.crop_pad = 4, .flip = true};
  std::uint64_t seed = 0;
};

struct EpochStats {
  double train_loss = 0.0;
  double test_accuracy = 0.0;  // percent, clean test set
};

struct TrainRun {
  std::vector<EpochStats> per_epoch;
  double final_test_accuracy = 0.0;
  TrainConfig config;
  double wall_time = 0.0;  // seconds
};

// Epochs are 1-based; the rate drops by 10x after each decay epoch passes.
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int d : cfg.decay_epochs) {
    if (epoch > d) lr *= 0.1;
  }
  return lr;
}

namespace detail {

inline void sgd_step(std::span<std::span<double>> params, std::span<std::span<double>> grads,
                     std::span<std::span<double>> velocity, double lr, double momentum) {
  for (std::size_t t = 0; t < params.size(); ++t) {
    double* w = params[t].data();
    const double* g = grads[t].data();
    double* v = velocity[t].data();
    for (std::size_t j = 0; j < params[t].size(); ++j) {
      v[j] = momentum * v[j] + g[j];
      w[j] -= lr * v[j];
    }
  }
}

}  // namespace detail

// Mini-batch SGD with momentum. Deterministic for a fixed (seed, data, config):
// the epoch shuffle and all augmentation draws come from seeded substreams.
inline TrainRun train(CnnModel& model, const LabeledImageSet& train_set,
                      const LabeledImageSet& test_set, const TrainConfig& cfg) {
  if (cfg.lr <= 0.0) throw std::invalid_argument("train: lr must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) {
    throw std::invalid_argument("train: momentum must be in [0,1)");
  }
  if (cfg.batch_size < 1 || cfg.epochs < 1) {
    throw std::invalid_argument("train: batch_size and epochs must be >= 1");
  }
  const std::size_t dim = train_set.image_dim();
  if (dim != static_cast<std::size_t>(model.arch.in_channels) * model.arch.in_h *
                 model.arch.in_w ||
      train_set.k != model.arch.k) {
    throw std::invalid_argument("train: dataset shape mismatch");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = train_set.n();
  const std::size_t k = static_cast<std::size_t>(train_set.k);
  const int c = model.arch.in_channels, h = model.arch.in_h, w = model.arch.in_w;

  Prng root(cfg.seed);
  CnnGradients grads(model), velocity(model);
  auto param_v = parameter_views(model);
  auto grad_v = parameter_views(grads);
  auto vel_v = parameter_views(velocity);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> batch, mixed;
  TrainRun run;
  run.config = cfg;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Prng shuffle = root.substream("shuffle", static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.next_below(i)]);
    }
    Prng aug = root.substream("augment", static_cast<std::uint64_t>(epoch));
    const double lr = lr_at_epoch(cfg, epoch);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;

    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::size_t bn = std::min<std::size_t>(cfg.batch_size, n - start);
      batch.resize(bn * dim);
      for (std::size_t b = 0; b < bn; ++b) {
        const auto src = train_set.image(order[start + b]);
        double* dst = batch.data() + b * dim;
        for (std::size_t j = 0; j < dim; ++j) dst[j] = static_cast<double>(src[j]);
        augment_image({dst, dim}, c, h, w, aug, cfg.augment);
      }
      Matrix targets(bn, k);
      for (std::size_t b = 0; b < bn; ++b) {
        targets(b, train_set.labels[order[start + b]]) = 1.0;
      }
      const double* input = batch.data();
      if (cfg.augment.mixup_alpha > 0.0) {
        mixed.resize(bn * dim);
        Matrix mixed_targets(bn, k);
        for (std::size_t b = 0; b < bn; ++b) {
          const std::size_t partner = aug.next_below(bn);
          const double lambda = mixup_lambda(aug, cfg.augment.mixup_alpha);
          const double* a = batch.data() + b * dim;
          const double* p = batch.data() + partner * dim;
          double* dst = mixed.data() + b * dim;
          for (std::size_t j = 0; j < dim; ++j) dst[j] = lambda * a[j] + (1.0 - lambda) * p[j];
          for (std::size_t j = 0; j < k; ++j) {
            mixed_targets(b, j) = lambda * targets(b, j) + (1.0 - lambda) * targets(partner, j);
          }
        }
        targets = std::move(mixed_targets);
        input = mixed.data();
      }
      const double loss =
          batch_loss_and_grad(model, {input, bn * dim}, bn, targets, &grads);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                                 " batch " + std::to_string(batch_index));
      }
      loss_sum += loss * static_cast<double>(bn);
      detail::sgd_step(param_v, grad_v, vel_v, lr, cfg.momentum);
    }
    for (const auto& view : param_v) {
      for (double v : view) {
        if (!std::isfinite(v)) {
          throw std::runtime_error("non-finite parameter after epoch " + std::to_string(epoch));
        }
      }
    }
    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(n);
    stats.test_accuracy = evaluate(model, test_set);
    run.per_epoch.push_back(stats);
  }
  run.final_test_accuracy = run.per_epoch.back().test_accuracy;
  run.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

inline void write_train_csv(const TrainRun& run, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "epoch,train_loss,test_acc\n";
  char line[128];
  for (std::size_t i = 0; i < run.per_epoch.size(); ++i) {
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g\n", i + 1, run.per_epoch[i].train_loss,
                  run.per_epoch[i].test_accuracy);
    out << line;
  }
  if (!out) throw std::runtime_error("cannot write " + path);
}

}  // namespace shortcut
