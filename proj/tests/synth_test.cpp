#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "shortcut/matrix.hpp"
#include "shortcut/prng.hpp"
#include "shortcut/synth.hpp"

using shortcut::Matrix;
using shortcut::PerturbationSet;
using shortcut::Prng;
using shortcut::SynthConfig;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.k = 4;
  cfg.counts = {5, 5, 5, 5};
  cfg.w = 32;
  cfg.h = 32;
  cfg.c = 3;
  cfg.p = 8;
  cfg.seed = 7;
  return cfg;
}

// Reference expansion: build the whole (c, h'*p, w'*p) mosaic, then slice.
std::vector<double> mosaic_then_slice(std::span<const double> point, int w, int h, int c,
                                      int p, int dy, int dx) {
  const auto [wp, hp] = shortcut::grid_dims(w, h, p);
  const int mw = wp * p, mh = hp * p;
  std::vector<double> mosaic(static_cast<std::size_t>(c) * mh * mw);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < mh; ++y) {
      for (int x = 0; x < mw; ++x) {
        const std::size_t cell =
            (static_cast<std::size_t>(ch) * hp + y / p) * wp + x / p;
        mosaic[(static_cast<std::size_t>(ch) * mh + y) * mw + x] = point[cell];
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(c) * h * w);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out[(static_cast<std::size_t>(ch) * h + y) * w + x] =
            mosaic[(static_cast<std::size_t>(ch) * mh + (y + dy)) * mw + (x + dx)];
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("grid dimensions follow floor(w/p)+1", "[synth]") {
  CHECK(shortcut::grid_dims(32, 32, 8) == std::pair<int, int>(5, 5));
  CHECK(shortcut::grid_dims(32, 32, 32) == std::pair<int, int>(2, 2));
  CHECK(shortcut::grid_dims(28, 28, 8) == std::pair<int, int>(4, 4));
  CHECK_THROWS_AS(shortcut::grid_dims(32, 32, 0), std::invalid_argument);
  CHECK_THROWS_AS(shortcut::grid_dims(32, 32, 33), std::invalid_argument);
}

TEST_CASE("vertex selection exhausts the 1-D cube", "[synth]") {
  Prng prng(3);
  const auto vertices = shortcut::choose_vertices(prng, 2, 1, 30.0);
  REQUIRE(vertices.size() == 2);
  std::set<double> seen = {vertices[0][0], vertices[1][0]};
  CHECK(seen == std::set<double>{-30.0, 30.0});
}

TEST_CASE("vertex selection fails when the cube is too small", "[synth]") {
  Prng prng(3);
  CHECK_THROWS_WITH(shortcut::choose_vertices(prng, 3, 1, 30.0),
                    Catch::Matchers::ContainsSubstring("not enough vertices"));
}

TEST_CASE("vertices are pairwise distinct with +-s entries", "[synth]") {
  Prng prng(42);
  const double s = 30.0;
  const auto vertices = shortcut::choose_vertices(prng, 10, 75, s);
  REQUIRE(vertices.size() == 10);
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    REQUIRE(vertices[i].size() == 75);
    for (double v : vertices[i]) REQUIRE(std::abs(v) == s);
    for (std::size_t j = i + 1; j < vertices.size(); ++j) {
      CHECK(vertices[i] != vertices[j]);
    }
  }
}

TEST_CASE("identity covariance leaves unit column variance", "[synth]") {
  const int d = 10, n = 10000;
  std::vector<double> vertex(d, 4.0);
  Prng prng(11);
  const shortcut::ClassCloud cloud =
      shortcut::make_class_cloud_with(prng, Matrix::identity(d), n, vertex);
  REQUIRE(cloud.points.rows == static_cast<std::size_t>(n));
  for (int j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += cloud.points(i, j);
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
      const double dev = cloud.points(i, j) - vertex[static_cast<std::size_t>(j)];
      var += dev * dev;
    }
    var /= n;
    CHECK(var == Catch::Approx(1.0).epsilon(0.05));
    CHECK(std::abs(mean - 4.0) < 6.0 / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("cloud column means concentrate on the vertex", "[synth]") {
  const int d = 12, n = 10000;
  const double sigma = shortcut::detail::cloud_coordinate_std(d);  // sqrt(d/3)
  std::vector<double> vertex(d);
  for (int j = 0; j < d; ++j) vertex[static_cast<std::size_t>(j)] = (j % 2 ? 1 : -1) * 24.0;
  const Prng class_prng = Prng(5).substream("class", 2);
  const shortcut::ClassCloud cloud = shortcut::generate_class_cloud(class_prng, n, d, vertex);
  for (int j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += cloud.points(i, j);
    mean /= n;
    CHECK(std::abs(mean - vertex[static_cast<std::size_t>(j)]) <
          6.0 * sigma / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("cloud generation replays bit-exactly", "[synth]") {
  std::vector<double> vertex(8, 10.0);
  const Prng class_prng = Prng(9).substream("class", 0);
  const auto a = shortcut::generate_class_cloud(class_prng, 50, 8, vertex);
  const auto b = shortcut::generate_class_cloud(class_prng, 50, 8, vertex);
  CHECK(a.points.data == b.points.data);
  CHECK(a.vertex == b.vertex);
}

TEST_CASE("patch expansion duplicates cells into p x p blocks", "[synth]") {
  const int w = 32, h = 32, c = 2, p = 8;
  const auto [wp, hp] = shortcut::grid_dims(w, h, p);
  std::vector<double> point(static_cast<std::size_t>(wp) * hp * c);
  for (std::size_t i = 0; i < point.size(); ++i) point[i] = static_cast<double>(i);
  const auto img = shortcut::expand_to_image(point, w, h, c, p, 0, 0);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double expect =
            point[(static_cast<std::size_t>(ch) * hp + y / p) * wp + x / p];
        REQUIRE(img[(static_cast<std::size_t>(ch) * h + y) * w + x] == expect);
      }
    }
  }
}

TEST_CASE("unit patches reduce to a shifted copy", "[synth]") {
  const int w = 6, h = 6, c = 1, p = 1;
  const auto [wp, hp] = shortcut::grid_dims(w, h, p);  // 7x7
  std::vector<double> point(static_cast<std::size_t>(wp) * hp);
  for (std::size_t i = 0; i < point.size(); ++i) point[i] = static_cast<double>(i);
  const auto img = shortcut::expand_to_image(point, w, h, c, p, 1, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      REQUIRE(img[static_cast<std::size_t>(y) * w + x] ==
              point[static_cast<std::size_t>(y + 1) * wp + (x + 1)]);
    }
  }
}

TEST_CASE("patch expansion equals the mosaic-then-slice oracle", "[synth]") {
  Prng prng(13);
  for (const auto& [w, h, c, p] : std::vector<std::array<int, 4>>{
           {32, 32, 3, 8}, {32, 32, 3, 5}, {28, 28, 1, 8}, {16, 24, 2, 7}}) {
    const auto [wp, hp] = shortcut::grid_dims(w, h, p);
    std::vector<double> point(static_cast<std::size_t>(wp) * hp * c);
    for (double& v : point) v = prng.next_uniform(-1.0, 1.0);
    const int max_dy = hp * p - h, max_dx = wp * p - w;
    for (int rep = 0; rep < 4; ++rep) {
      const int dy = static_cast<int>(prng.next_below(static_cast<std::uint64_t>(max_dy + 1)));
      const int dx = static_cast<int>(prng.next_below(static_cast<std::uint64_t>(max_dx + 1)));
      CHECK(shortcut::expand_to_image(point, w, h, c, p, dy, dx) ==
            mosaic_then_slice(point, w, h, c, p, dy, dx));
    }
    CHECK_THROWS_AS(shortcut::expand_to_image(point, w, h, c, p, max_dy + 1, 0),
                    std::invalid_argument);
  }
}

TEST_CASE("normalization rescales to the budget radius", "[synth]") {
  SynthConfig cfg;
  const double radius = cfg.norm_radius();
  CHECK(radius == Catch::Approx(std::sqrt(3072.0) * 6.0 / 255.0).epsilon(1e-12));
  CHECK(radius == Catch::Approx(1.30413).margin(1e-5));

  std::vector<double> img(3072);
  Prng prng(2);
  for (double& v : img) v = prng.next_normal();
  double norm = 0.0;
  for (double v : img) norm += v * v;
  norm = std::sqrt(norm);
  const double target = 2.0 * radius;
  for (double& v : img) v *= target / norm;  // input norm exactly 2R

  const auto out = shortcut::normalize_perturbation(img, cfg.eps_prime);
  double out_norm = 0.0, dot = 0.0, in_norm = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    out_norm += out[i] * out[i];
    dot += out[i] * img[i];
    in_norm += img[i] * img[i];
  }
  out_norm = std::sqrt(out_norm);
  in_norm = std::sqrt(in_norm);
  CHECK(out_norm == Catch::Approx(radius).epsilon(1e-12));
  CHECK(dot / (out_norm * in_norm) == Catch::Approx(1.0).epsilon(1e-12));

  const std::vector<double> zeros(3072, 0.0);
  CHECK_THROWS_WITH(shortcut::normalize_perturbation(zeros, cfg.eps_prime),
                    Catch::Matchers::ContainsSubstring("degenerate sample"));
}

TEST_CASE("synthesis produces balanced, budgeted, deterministic sets", "[synth]") {
  SynthConfig cfg = small_config();
  const PerturbationSet set = shortcut::synthesize(cfg);
  REQUIRE(set.n() == 20);
  REQUIRE(set.sample_dim() == 3072);

  std::vector<int> counts(static_cast<std::size_t>(cfg.k), 0);
  for (std::uint16_t label : set.labels) {
    REQUIRE(label < cfg.k);
    ++counts[label];
  }
  CHECK(counts == cfg.counts);

  const double radius = cfg.norm_radius();
  for (std::size_t i = 0; i < set.n(); ++i) {
    double norm = 0.0;
    float max_abs = 0.0f;
    for (float v : set.sample(i)) {
      norm += static_cast<double>(v) * v;
      max_abs = std::max(max_abs, std::abs(v));
    }
    CHECK(std::sqrt(norm) == Catch::Approx(radius).epsilon(1e-5));
    CHECK(max_abs <= radius * (1.0 + 1e-6));
  }

  const PerturbationSet again = shortcut::synthesize(cfg);
  CHECK(set.data == again.data);
  CHECK(set.labels == again.labels);
}

TEST_CASE("worker count does not change the output", "[synth]") {
  SynthConfig cfg = small_config();
  const PerturbationSet serial = shortcut::synthesize(cfg);
  cfg.threads = 3;
  const PerturbationSet parallel = shortcut::synthesize(cfg);
  CHECK(serial.data == parallel.data);
  CHECK(serial.labels == parallel.labels);
}

TEST_CASE("expanded samples are constant on an aligned patch grid", "[synth]") {
  SynthConfig cfg = small_config();
  const PerturbationSet set = shortcut::synthesize(cfg);
  for (std::size_t i = 0; i < set.n(); ++i) {
    const auto sample = set.sample(i);
    const std::size_t plane = static_cast<std::size_t>(cfg.h) * cfg.w;
    for (int ch = 0; ch < cfg.c; ++ch) {
      // every horizontal/vertical value change must fall on one global
      // phase of the p-grid
      int hphase = -1, vphase = -1;
      for (int y = 0; y < cfg.h; ++y) {
        for (int x = 1; x < cfg.w; ++x) {
          const std::size_t at = ch * plane + static_cast<std::size_t>(y) * cfg.w + x;
          if (sample[at] != sample[at - 1]) {
            const int phase = x % cfg.p;
            if (hphase < 0) hphase = phase;
            REQUIRE(phase == hphase);
          }
        }
      }
      for (int x = 0; x < cfg.w; ++x) {
        for (int y = 1; y < cfg.h; ++y) {
          const std::size_t at = ch * plane + static_cast<std::size_t>(y) * cfg.w + x;
          if (sample[at] != sample[at - cfg.w]) {
            const int phase = y % cfg.p;
            if (vphase < 0) vphase = phase;
            REQUIRE(phase == vphase);
          }
        }
      }
    }
  }
}

TEST_CASE("no-padding samples keep the budget but not the block layout", "[synth]") {
  SynthConfig cfg = small_config();
  cfg.padding_enabled = false;
  const PerturbationSet set = shortcut::synthesize(cfg);
  REQUIRE(set.n() == 20);
  const double radius = cfg.norm_radius();
  for (std::size_t i = 0; i < set.n(); ++i) {
    double norm = 0.0;
    for (float v : set.sample(i)) norm += static_cast<double>(v) * v;
    CHECK(std::sqrt(norm) == Catch::Approx(radius).epsilon(1e-5));
  }
  const PerturbationSet again = shortcut::synthesize(cfg);
  CHECK(set.data == again.data);
}

TEST_CASE("paired clouds split cleanly at the midpoint hyperplane", "[synth]") {
  const int d = 75, n = 500;
  Prng vprng = Prng(1).substream("vertices");
  const double s_abs = 6.0 * shortcut::detail::cloud_coordinate_std(d);
  const auto vertices = shortcut::choose_vertices(vprng, 2, d, s_abs);
  const Prng root(1);
  const auto c0 = shortcut::generate_class_cloud(root.substream("class", 0), n, d, vertices[0]);
  const auto c1 = shortcut::generate_class_cloud(root.substream("class", 1), n, d, vertices[1]);

  std::vector<double> normal(d), midpoint(d);
  for (int j = 0; j < d; ++j) {
    normal[static_cast<std::size_t>(j)] =
        vertices[1][static_cast<std::size_t>(j)] - vertices[0][static_cast<std::size_t>(j)];
    midpoint[static_cast<std::size_t>(j)] =
        0.5 * (vertices[0][static_cast<std::size_t>(j)] + vertices[1][static_cast<std::size_t>(j)]);
  }
  int correct = 0;
  auto side = [&](const Matrix& points, int row) {
    double dot = 0.0;
    for (int j = 0; j < d; ++j) {
      dot += (points(static_cast<std::size_t>(row), static_cast<std::size_t>(j)) -
              midpoint[static_cast<std::size_t>(j)]) *
             normal[static_cast<std::size_t>(j)];
    }
    return dot;
  };
  for (int i = 0; i < n; ++i) {
    if (side(c0.points, i) < 0.0) ++correct;
    if (side(c1.points, i) > 0.0) ++correct;
  }
  CHECK(correct >= 990);  // >= 99% of 1000
}
