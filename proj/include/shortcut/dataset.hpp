#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "shortcut/prng.hpp"

namespace shortcut {

// Labeled images with pixels in [0,1], CHW layout, float32 storage.
struct LabeledImageSet {
  int c = 0, h = 0, w = 0;
  int k = 0;  // class count
  std::vector<float> pixels;  // n * c*h*w
  std::vector<std::uint16_t> labels;
  std::string source;

  std::size_t n() const { return labels.size(); }
  std::size_t image_dim() const { return static_cast<std::size_t>(c) * h * w; }
  std::span<const float> image(std::size_t i) const {
    return {pixels.data() + i * image_dim(), image_dim()};
  }
  std::span<float> image(std::size_t i) {
    return {pixels.data() + i * image_dim(), image_dim()};
  }
};

// ---------------------------------------------------------------------------
// CIFAR-10 binary format
// ---------------------------------------------------------------------------

namespace detail {

inline void load_cifar_batch(const std::filesystem::path& file,
                             LabeledImageSet& out) {
  constexpr std::size_t kRecord = 3073;  // 1 label byte + 3*32*32 pixel bytes
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cifar10: cannot open " + file.string());
  }
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (size == 0 || size % kRecord != 0) {
    throw std::runtime_error("cifar10: " + file.string() + " has size " +
                             std::to_string(size) +
                             ", not a multiple of 3073");
  }
  const std::size_t records = size / kRecord;
  std::vector<unsigned char> buf(size);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size))) {
    throw std::runtime_error("cifar10: short read on " + file.string());
  }
  for (std::size_t r = 0; r < records; ++r) {
    const unsigned char* rec = buf.data() + r * kRecord;
    if (rec[0] > 9) {
      throw std::runtime_error("cifar10: " + file.string() + " record " +
                               std::to_string(r) + " has label " +
                               std::to_string(rec[0]) + " > 9");
    }
    out.labels.push_back(rec[0]);
    for (std::size_t i = 0; i < 3072; ++i) {
      out.pixels.push_back(static_cast<float>(rec[1 + i]) / 255.0f);
    }
  }
}

}  // namespace detail

// Loads the published CIFAR-10 binary layout (5 train batches + 1 test
// batch, one label byte then 3072 plane-major RGB bytes per record).
inline std::pair<LabeledImageSet, LabeledImageSet> load_cifar10(
    const std::filesystem::path& dir) {
  LabeledImageSet train, test;
  for (LabeledImageSet* s : {&train, &test}) {
    s->c = 3;
    s->h = 32;
    s->w = 32;
    s->k = 10;
  }
  train.source = "cifar10-train:" + dir.string();
  test.source = "cifar10-test:" + dir.string();
  for (int b = 1; b <= 5; ++b) {
    detail::load_cifar_batch(dir / ("data_batch_" + std::to_string(b) + ".bin"),
                             train);
  }
  detail::load_cifar_batch(dir / "test_batch.bin", test);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Procedural shapes dataset
// ---------------------------------------------------------------------------

namespace detail {

// Boolean rasterizers on a unit-free pixel grid. (cy,cx) is the shape
// center, r the half-size after scaling.
inline bool in_shape(int cls, double y, double x, double r) {
  const double ay = std::abs(y), ax = std::abs(x);
  switch (cls) {
    case 0:  // circle
      return y * y + x * x <= r * r;
    case 1:  // square
      return ay <= r * 0.80 && ax <= r * 0.80;
    case 2:  // triangle (upward)
      return y >= -r && y <= r && ax <= (y + r) * 0.55;
    case 3:  // cross
      return (ax <= r * 0.22 && ay <= r) || (ay <= r * 0.22 && ax <= r);
    case 4:  // ring
      return y * y + x * x <= r * r && y * y + x * x >= (0.62 * r) * (0.62 * r);
    case 5:  // horizontal bar
      return ay <= r * 0.24 && ax <= r;
    case 6:  // vertical bar
      return ax <= r * 0.24 && ay <= r;
    case 7:  // diamond
      return ay + ax <= r;
    case 8:  // L
      return (x >= -r && x <= -r * 0.5 && ay <= r) ||
             (y >= r * 0.5 && y <= r && ax <= r);
    case 9: {  // 3x3 dot grid
      const double s = r * 0.8;
      const double dy = std::abs(std::remainder(y, s));
      const double dx = std::abs(std::remainder(x, s));
      return ay <= 1.25 * s && ax <= 1.25 * s && dy * dy + dx * dx <= (0.26 * r) * (0.26 * r);
    }
    default:
      return false;
  }
}

}  // namespace detail

// Self-contained clean corpus: one of ten shapes per image, random position
// (+/-25% of the frame), scale (+/-30%), and per-sample random foreground
// and background colors under Gaussian pixel noise. Deterministic in the
// generator. Backgrounds are mid-range rather than black so additively
// poisoned copies survive the [0,1] clamp instead of losing every negative
// component on dark pixels.
inline LabeledImageSet gen_shapes_dataset(const Prng& prng, int n_per_class,
                                          int k = 10, int w = 32, int h = 32) {
  if (k < 1 || k > 10) {
    throw std::invalid_argument("shapes: k must be in [1,10]");
  }
  if (n_per_class < 1) throw std::invalid_argument("shapes: n_per_class must be >= 1");
  LabeledImageSet set;
  set.c = 3;
  set.h = h;
  set.w = w;
  set.k = k;
  set.source = "shapes";
  const std::size_t dim = set.image_dim();
  set.pixels.resize(static_cast<std::size_t>(k) * n_per_class * dim);
  set.labels.resize(static_cast<std::size_t>(k) * n_per_class);

  // Small, low-contrast shapes: the corpus has to be slow to learn for a
  // small CNN (like real photos are), otherwise any shortcut study on it is
  // trivial, while still being fully learnable within the default schedule.
  const double base_r = 0.19 * std::min(w, h);
  for (int cls = 0; cls < k; ++cls) {
    Prng class_prng = prng.substream("shapes-class", static_cast<std::uint64_t>(cls));
    for (int i = 0; i < n_per_class; ++i) {
      Prng sp = class_prng.substream("sample", static_cast<std::uint64_t>(i));
      const std::size_t idx = static_cast<std::size_t>(cls) * n_per_class + i;
      set.labels[idx] = static_cast<std::uint16_t>(cls);
      float* img = set.pixels.data() + idx * dim;

      const double cy = 0.5 * (h - 1) + sp.next_uniform(-0.25, 0.25) * h;
      const double cx = 0.5 * (w - 1) + sp.next_uniform(-0.25, 0.25) * w;
      const double r = base_r * sp.next_uniform(0.7, 1.3);
      // Foreground = background plus a faint per-channel contrast of random
      // sign. Keeping the contrast near the noise floor is what makes the
      // corpus slow to learn; bold shapes would be a one-epoch task.
      double fg_color[3], bg_color[3];
      for (int ch = 0; ch < 3; ++ch) {
        const double bg = sp.next_uniform(0.20, 0.65);
        const double contrast = sp.next_uniform(0.05, 0.16);
        const double sign = sp.next_bool() ? 1.0 : -1.0;
        double fg = bg + sign * contrast;
        if (fg < 0.02 || fg > 0.98) fg = bg - sign * contrast;
        bg_color[ch] = bg;
        fg_color[ch] = fg;
      }

      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const bool fg = detail::in_shape(cls, y - cy, x - cx, r);
          for (int ch = 0; ch < 3; ++ch) {
            const double base = fg ? fg_color[ch] : bg_color[ch];
            const double v = base + 0.05 * sp.next_normal();
            img[static_cast<std::size_t>(ch) * h * w + static_cast<std::size_t>(y) * w + x] =
                static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
    }
  }
  return set;
}

}  // namespace shortcut
