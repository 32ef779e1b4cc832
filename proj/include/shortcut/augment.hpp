#pragma once

#include <cmath>
#include <cstring>
#include <span>
#include <stdexcept>
#include <vector>

#include "shortcut/prng.hpp"

namespace shortcut {

struct AugmentOptions {
  int crop_pad = 0;         // zero-pad margin for random crops; 0 disables
  bool flip = false;        // horizontal flip with probability 1/2
  int cutout = 0;           // side of the zeroed square; 0 disables
  double mixup_alpha = 0.0; // Beta(alpha, alpha) mixing; 0 disables
};

// Shift by (dy, dx) - crop_pad with zero fill: the "pad then crop" form of
// random cropping. dy, dx in [0, 2*crop_pad].
inline void crop_shift(std::span<double> img, int c, int h, int w, int crop_pad, int dy,
                       int dx) {
  if (dy < 0 || dx < 0 || dy > 2 * crop_pad || dx > 2 * crop_pad) {
    throw std::invalid_argument("crop_shift: offset out of range");
  }
  const int oy = dy - crop_pad, ox = dx - crop_pad;
  if (oy == 0 && ox == 0) return;
  std::vector<double> src(img.begin(), img.end());
  std::memset(img.data(), 0, sizeof(double) * img.size());
  for (int ci = 0; ci < c; ++ci) {
    const double* in = src.data() + static_cast<std::size_t>(ci) * h * w;
    double* out = img.data() + static_cast<std::size_t>(ci) * h * w;
    for (int y = 0; y < h; ++y) {
      const int sy = y + oy;
      if (sy < 0 || sy >= h) continue;
      const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
      if (x0 < x1) {
        std::memcpy(out + static_cast<std::size_t>(y) * w + x0,
                    in + static_cast<std::size_t>(sy) * w + x0 + ox,
                    sizeof(double) * (x1 - x0));
      }
    }
  }
}

inline void flip_horizontal(std::span<double> img, int c, int h, int w) {
  for (int ci = 0; ci < c; ++ci) {
    double* plane = img.data() + static_cast<std::size_t>(ci) * h * w;
    for (int y = 0; y < h; ++y) {
      double* row = plane + static_cast<std::size_t>(y) * w;
      for (int x = 0; x < w / 2; ++x) std::swap(row[x], row[w - 1 - x]);
    }
  }
}

// Zero an s x s square centered at (cy, cx), clipped at the borders.
inline void cutout_at(std::span<double> img, int c, int h, int w, int s, int cy, int cx) {
  const int y0 = std::max(0, cy - s / 2), y1 = std::min(h, cy - s / 2 + s);
  const int x0 = std::max(0, cx - s / 2), x1 = std::min(w, cx - s / 2 + s);
  for (int ci = 0; ci < c; ++ci) {
    double* plane = img.data() + static_cast<std::size_t>(ci) * h * w;
    for (int y = y0; y < y1; ++y) {
      std::memset(plane + static_cast<std::size_t>(y) * w + x0, 0, sizeof(double) * (x1 - x0));
    }
  }
}

// Per-image randomized transforms, in crop / flip / cutout order. Mixup is a
// batch-level step; see mixup_lambda and the trainer.
inline void augment_image(std::span<double> img, int c, int h, int w, Prng& prng,
                          const AugmentOptions& opts) {
  if (opts.crop_pad > 0) {
    const int dy = static_cast<int>(prng.next_below(2 * opts.crop_pad + 1));
    const int dx = static_cast<int>(prng.next_below(2 * opts.crop_pad + 1));
    crop_shift(img, c, h, w, opts.crop_pad, dy, dx);
  }
  if (opts.flip && prng.next_bool()) flip_horizontal(img, c, h, w);
  if (opts.cutout > 0) {
    const int cy = static_cast<int>(prng.next_below(static_cast<std::uint64_t>(h)));
    const int cx = static_cast<int>(prng.next_below(static_cast<std::uint64_t>(w)));
    cutout_at(img, c, h, w, opts.cutout, cy, cx);
  }
}

namespace detail {

// Marsaglia-Tsang gamma sampling; the alpha < 1 case is boosted through
// Gamma(alpha + 1) * U^(1/alpha).
inline double gamma_draw(Prng& prng, double alpha) {
  if (alpha < 1.0) {
    double u;
    do {
      u = prng.next_unit();
    } while (u <= 0.0);
    return gamma_draw(prng, alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x, v;
    do {
      x = prng.next_normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = prng.next_unit();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace detail

// Mixing weight lambda ~ Beta(alpha, alpha).
inline double mixup_lambda(Prng& prng, double alpha) {
  if (alpha <= 0.0) throw std::invalid_argument("mixup_lambda: alpha must be positive");
  const double x = detail::gamma_draw(prng, alpha);
  const double y = detail::gamma_draw(prng, alpha);
  return x / (x + y);
}

}  // namespace shortcut
