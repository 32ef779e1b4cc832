#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "shortcut/matrix.hpp"
#include "shortcut/prng.hpp"

namespace shortcut {

// Parameters of the synthetic-shortcut generator.
//
// Points are sampled around hypercube vertices in a low-dimensional space,
// given a fresh random covariance per class, expanded into p x p patch
// mosaics (when padding_enabled) and scaled onto the L2 ball of radius
// sqrt(d) * eps_prime. With padding disabled, points are generated directly
// at full image dimension and reshaped.
struct SynthConfig {
  int k = 10;                    // class count
  std::vector<int> counts;       // per-class sample counts n_i (size k)
  int w = 32;
  int h = 32;
  int c = 3;
  int p = 8;                     // patch size
  double eps_prime = 6.0 / 255.0;  // per-pixel RMS budget
  double side_scale = 6.0;       // hypercube half-side, in units of the
                                 // per-coordinate cloud std
  std::uint64_t seed = 0;
  bool padding_enabled = true;
  int threads = 1;

  int pixel_dim() const { return c * h * w; }
  double norm_radius() const {
    return std::sqrt(static_cast<double>(pixel_dim())) * eps_prime;
  }

  void validate() const {
    if (k < 2) throw std::invalid_argument("synth: k must be >= 2");
    if (static_cast<int>(counts.size()) != k) {
      throw std::invalid_argument("synth: counts size must equal k");
    }
    for (int ni : counts) {
      if (ni < 1) throw std::invalid_argument("synth: every n_i must be >= 1");
    }
    if (w < 1 || h < 1 || c < 1) throw std::invalid_argument("synth: bad image dims");
    if (p < 1 || p > std::min(w, h)) {
      throw std::invalid_argument("synth: p must satisfy 1 <= p <= min(w,h)");
    }
    if (!(eps_prime > 0.0)) throw std::invalid_argument("synth: eps_prime must be > 0");
    if (!(side_scale > 0.0)) throw std::invalid_argument("synth: side_scale must be > 0");
    if (threads < 1) throw std::invalid_argument("synth: threads must be >= 1");
  }
};

// Per-class point cloud before image expansion.
struct ClassCloud {
  int class_id = 0;
  std::vector<double> vertex;    // entries +/- s_abs
  std::string covariance_seed;   // substream label used for A
  Matrix points;                 // n_i x d'
};

namespace detail {

// Skips value-initialization on resize. Generator and loader buffers are
// written element-by-element before any read, so the default zero fill is
// pure cost (hundreds of MB at full scale).
template <class T>
class NoInitAllocator : public std::allocator<T> {
 public:
  template <class U>
  struct rebind {
    using other = NoInitAllocator<U>;
  };
  using std::allocator<T>::allocator;
  template <class U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

using PertBuffer = std::vector<float, detail::NoInitAllocator<float>>;

// A labeled set of perturbations, stored as 32-bit floats (the on-disk
// precision); all math that consumes them promotes to double.
struct PerturbationSet {
  int c = 0, h = 0, w = 0;
  PertBuffer data;                // n * c*h*w
  std::vector<std::uint16_t> labels;
  double norm_radius = 0.0;
  SynthConfig provenance;

  std::size_t n() const { return labels.size(); }
  std::size_t sample_dim() const {
    return static_cast<std::size_t>(c) * h * w;
  }
  std::span<const float> sample(std::size_t i) const {
    return {data.data() + i * sample_dim(), sample_dim()};
  }
  std::span<float> sample(std::size_t i) {
    return {data.data() + i * sample_dim(), sample_dim()};
  }
};

// Patch-grid dimensions: w' = floor(w/p)+1, h' = floor(h/p)+1.
inline std::pair<int, int> grid_dims(int w, int h, int p) {
  if (p < 1 || p > std::min(w, h)) {
    throw std::invalid_argument("grid_dims: p must satisfy 1 <= p <= min(w,h)");
  }
  return {w / p + 1, h / p + 1};
}

// k pairwise-distinct hypercube vertices with entries +/- s_abs.
// Collisions are resampled.
inline std::vector<std::vector<double>> choose_vertices(Prng& prng, int k,
                                                        int low_dim,
                                                        double s_abs) {
  if (low_dim < 63 && k > (1ll << low_dim)) {
    throw std::invalid_argument("choose_vertices: not enough vertices (k > 2^d')");
  }
  std::vector<std::vector<double>> vertices;
  vertices.reserve(static_cast<std::size_t>(k));
  std::unordered_set<std::string> seen;
  while (static_cast<int>(vertices.size()) < k) {
    std::string bits((static_cast<std::size_t>(low_dim) + 7) / 8, '\0');
    std::vector<double> v(static_cast<std::size_t>(low_dim));
    for (int i = 0; i < low_dim; ++i) {
      bool up = prng.next_bool();
      v[static_cast<std::size_t>(i)] = up ? s_abs : -s_abs;
      if (up) bits[static_cast<std::size_t>(i) / 8] |= static_cast<char>(1 << (i % 8));
    }
    if (seen.insert(bits).second) vertices.push_back(std::move(v));
  }
  return vertices;
}

// Cloud with an explicitly supplied covariance factor A (n_i x d' points:
// D = G A + 1 vertex^T with G standard normal). generate_class_cloud samples
// A itself; tests use this entry point to pin A.
inline ClassCloud make_class_cloud_with(Prng& point_prng, const Matrix& a,
                                        int n_i, std::span<const double> vertex) {
  const std::size_t d = vertex.size();
  if (a.rows != d || a.cols != d) {
    throw std::invalid_argument("class cloud: covariance factor must be d' x d'");
  }
  Matrix g(static_cast<std::size_t>(n_i), d);
  for (double& x : g.data) x = point_prng.next_normal();
  ClassCloud cloud;
  cloud.vertex.assign(vertex.begin(), vertex.end());
  cloud.points = matmul(g, a);
  for (int r = 0; r < n_i; ++r) {
    auto row = cloud.points.row(static_cast<std::size_t>(r));
    for (std::size_t j = 0; j < d; ++j) row[j] += vertex[j];
  }
  return cloud;
}

// Samples a fresh covariance factor A (entries uniform in [-1,1]) from the
// "cov" substream and the Gaussian points from the "points" substream of the
// given class generator.
inline ClassCloud generate_class_cloud(const Prng& class_prng, int n_i,
                                       int low_dim,
                                       std::span<const double> vertex) {
  if (n_i < 1) throw std::invalid_argument("class cloud: n_i must be >= 1");
  Prng cov_prng = class_prng.substream("cov");
  Matrix a(static_cast<std::size_t>(low_dim), static_cast<std::size_t>(low_dim));
  for (double& x : a.data) x = cov_prng.next_uniform(-1.0, 1.0);
  Prng point_prng = class_prng.substream("points");
  ClassCloud cloud = make_class_cloud_with(point_prng, a, n_i, vertex);
  cloud.covariance_seed = "cov";
  return cloud;
}

// Expands a low-dimensional point (layout (c, h', w')) into a (c, h'*p, w'*p)
// mosaic of p x p constant cells and returns the (c, h, w) crop at (dy, dx).
inline std::vector<double> expand_to_image(std::span<const double> point, int w,
                                           int h, int c, int p, int dy, int dx) {
  auto [wp, hp] = grid_dims(w, h, p);
  if (point.size() != static_cast<std::size_t>(wp) * hp * c) {
    throw std::invalid_argument("expand_to_image: point length != w'*h'*c");
  }
  const int mosaic_h = hp * p;
  const int mosaic_w = wp * p;
  if (dy < 0 || dy > mosaic_h - h || dx < 0 || dx > mosaic_w - w) {
    throw std::invalid_argument("expand_to_image: crop offset out of range");
  }
  std::vector<double> out(static_cast<std::size_t>(c) * h * w);
  for (int ch = 0; ch < c; ++ch) {
    const double* cell = point.data() + static_cast<std::size_t>(ch) * hp * wp;
    double* dst = out.data() + static_cast<std::size_t>(ch) * h * w;
    for (int i = 0; i < h; ++i) {
      const double* cell_row = cell + static_cast<std::size_t>((i + dy) / p) * wp;
      double* dst_row = dst + static_cast<std::size_t>(i) * w;
      int j = 0;
      while (j < w) {
        const double v = cell_row[(j + dx) / p];
        // run length until the next cell boundary
        int run = p - (j + dx) % p;
        if (j + run > w) run = w - j;
        for (int r = 0; r < run; ++r) dst_row[j + r] = v;
        j += run;
      }
    }
  }
  return out;
}

// Scales img onto the sphere of radius sqrt(d) * eps_prime.
inline std::vector<double> normalize_perturbation(std::span<const double> img,
                                                  double eps_prime) {
  double sq = 0.0;
  for (double v : img) sq += v * v;
  if (sq == 0.0) {
    throw std::invalid_argument("normalize_perturbation: degenerate sample (zero norm)");
  }
  const double radius =
      std::sqrt(static_cast<double>(img.size())) * eps_prime;
  const double scale = radius / std::sqrt(sq);
  std::vector<double> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] * scale;
  return out;
}

namespace detail {

// Per-coordinate std of G*A rows: entries of A are uniform on [-1,1]
// (variance 1/3), so each output coordinate has variance ~ d'/3.
inline double cloud_coordinate_std(int low_dim) {
  return std::sqrt(static_cast<double>(low_dim) / 3.0);
}

// Expansion, normalization and the float store are fused into one pass over
// each sample. The crop of the mosaic is constant on cell-aligned runs, so
// its squared norm is a multiplicity-weighted sum over the d' cells and each
// output row group is one run-fill plus row copies; no per-sample buffers.
// Equivalent to expand_to_image + normalize_perturbation up to summation
// order in the norm (well inside the 1e-5 norm tolerance).
inline void synthesize_class(const SynthConfig& cfg, const Prng& root, int cls,
                             std::span<const double> vertex, int low_dim,
                             std::size_t out_offset, PerturbationSet& set) {
  const Prng class_prng = root.substream("class", static_cast<std::uint64_t>(cls));
  ClassCloud cloud =
      generate_class_cloud(class_prng, cfg.counts[static_cast<std::size_t>(cls)],
                           low_dim, vertex);
  cloud.class_id = cls;
  const std::size_t dim = set.sample_dim();
  const double radius = cfg.norm_radius();
  const int n_i = cfg.counts[static_cast<std::size_t>(cls)];

  if (!cfg.padding_enabled) {
    for (int i = 0; i < n_i; ++i) {
      const auto point = cloud.points.row(static_cast<std::size_t>(i));
      double sq = 0.0;
      for (double v : point) sq += v * v;
      if (sq == 0.0) {
        throw std::invalid_argument("normalize_perturbation: degenerate sample (zero norm)");
      }
      const double scale = radius / std::sqrt(sq);
      float* dst = set.data.data() + (out_offset + static_cast<std::size_t>(i)) * dim;
      for (std::size_t j = 0; j < dim; ++j) {
        dst[j] = static_cast<float>(point[j] * scale);
      }
    }
    return;
  }

  const auto [wp, hp] = grid_dims(cfg.w, cfg.h, cfg.p);
  const int p = cfg.p;
  const int max_dy = hp * p - cfg.h;
  const int max_dx = wp * p - cfg.w;
  const std::size_t plane = static_cast<std::size_t>(cfg.h) * cfg.w;
  // Per-offset run lengths of the crop against the cell grid.
  std::vector<int> row_len(static_cast<std::size_t>(hp));
  std::vector<int> col_len(static_cast<std::size_t>(wp));
  for (int i = 0; i < n_i; ++i) {
    Prng crop_prng = class_prng.substream("crop", static_cast<std::uint64_t>(i));
    const int dy = static_cast<int>(crop_prng.next_below(static_cast<std::uint64_t>(max_dy + 1)));
    const int dx = static_cast<int>(crop_prng.next_below(static_cast<std::uint64_t>(max_dx + 1)));
    const int gy0 = dy / p;
    const int gx0 = dx / p;
    const int n_gy = (cfg.h - 1 + dy) / p - gy0 + 1;
    const int n_gx = (cfg.w - 1 + dx) / p - gx0 + 1;
    for (int g = 0; g < n_gy; ++g) {
      const int top = (gy0 + g) * p - dy;
      row_len[static_cast<std::size_t>(g)] = std::min(top + p, cfg.h) - std::max(top, 0);
    }
    for (int g = 0; g < n_gx; ++g) {
      const int left = (gx0 + g) * p - dx;
      col_len[static_cast<std::size_t>(g)] = std::min(left + p, cfg.w) - std::max(left, 0);
    }

    const auto point = cloud.points.row(static_cast<std::size_t>(i));
    double sq = 0.0;
    for (int ch = 0; ch < cfg.c; ++ch) {
      const double* cells = point.data() + static_cast<std::size_t>(ch) * hp * wp;
      for (int g = 0; g < n_gy; ++g) {
        const double* cell_row = cells + static_cast<std::size_t>(gy0 + g) * wp + gx0;
        double row_sq = 0.0;
        for (int u = 0; u < n_gx; ++u) {
          row_sq += cell_row[u] * cell_row[u] * col_len[static_cast<std::size_t>(u)];
        }
        sq += row_sq * row_len[static_cast<std::size_t>(g)];
      }
    }
    if (sq == 0.0) {
      throw std::invalid_argument("normalize_perturbation: degenerate sample (zero norm)");
    }
    const double scale = radius / std::sqrt(sq);

    float* dst = set.data.data() + (out_offset + static_cast<std::size_t>(i)) * dim;
    for (int ch = 0; ch < cfg.c; ++ch) {
      const double* cells = point.data() + static_cast<std::size_t>(ch) * hp * wp;
      float* out_plane = dst + static_cast<std::size_t>(ch) * plane;
      int y = 0;
      for (int g = 0; g < n_gy; ++g) {
        float* first = out_plane + static_cast<std::size_t>(y) * cfg.w;
        const double* cell_row = cells + static_cast<std::size_t>(gy0 + g) * wp + gx0;
        int x = 0;
        for (int u = 0; u < n_gx; ++u) {
          const float v = static_cast<float>(cell_row[u] * scale);
          const int len = col_len[static_cast<std::size_t>(u)];
          for (int r = 0; r < len; ++r) first[x + r] = v;
          x += len;
        }
        for (int r = 1; r < row_len[static_cast<std::size_t>(g)]; ++r) {
          std::copy(first, first + cfg.w, first + static_cast<std::size_t>(r) * cfg.w);
        }
        y += row_len[static_cast<std::size_t>(g)];
      }
    }
  }
}

}  // namespace detail

// Runs the full generator. Output is ordered class-major (all of class 0,
// then class 1, ...). Deterministic in cfg.seed and independent of
// cfg.threads: every class writes into a preassigned slot from its own
// substream.
inline PerturbationSet synthesize(const SynthConfig& cfg) {
  cfg.validate();
  const int low_dim = cfg.padding_enabled
                          ? grid_dims(cfg.w, cfg.h, cfg.p).first *
                                grid_dims(cfg.w, cfg.h, cfg.p).second * cfg.c
                          : cfg.pixel_dim();
  if (low_dim < 63 && cfg.k > (1ll << low_dim)) {
    throw std::invalid_argument("synthesize: not enough vertices (k > 2^d')");
  }

  PerturbationSet set;
  set.c = cfg.c;
  set.h = cfg.h;
  set.w = cfg.w;
  set.norm_radius = cfg.norm_radius();
  set.provenance = cfg;
  std::size_t total = 0;
  for (int ni : cfg.counts) total += static_cast<std::size_t>(ni);
  set.data.resize(total * set.sample_dim());
  set.labels.resize(total);

  std::vector<std::size_t> offsets(static_cast<std::size_t>(cfg.k));
  std::size_t off = 0;
  for (int cls = 0; cls < cfg.k; ++cls) {
    offsets[static_cast<std::size_t>(cls)] = off;
    for (int i = 0; i < cfg.counts[static_cast<std::size_t>(cls)]; ++i) {
      set.labels[off + static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(cls);
    }
    off += static_cast<std::size_t>(cfg.counts[static_cast<std::size_t>(cls)]);
  }

  const Prng root(cfg.seed);
  const double s_abs = cfg.side_scale * detail::cloud_coordinate_std(low_dim);
  Prng vertex_prng = root.substream("vertices");
  const auto vertices = choose_vertices(vertex_prng, cfg.k, low_dim, s_abs);

  auto run_range = [&](int first, int last) {
    for (int cls = first; cls < last; ++cls) {
      detail::synthesize_class(cfg, root, cls, vertices[static_cast<std::size_t>(cls)],
                               low_dim, offsets[static_cast<std::size_t>(cls)], set);
    }
  };
  const int workers = std::min(cfg.threads, cfg.k);
  if (workers <= 1) {
    run_range(0, cfg.k);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) {
      const int first = cfg.k * t / workers;
      const int last = cfg.k * (t + 1) / workers;
      pool.emplace_back(run_range, first, last);
    }
    for (auto& th : pool) th.join();
  }
  return set;
}

}  // namespace shortcut
