#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "shortcut/matrix.hpp"
#include "shortcut/prng.hpp"
#include "shortcut/tsne.hpp"

using shortcut::Embedding;
using shortcut::Matrix;
using shortcut::Prng;

namespace {

Matrix gaussian_points(std::size_t n, std::size_t d, std::uint64_t seed) {
  Prng prng(seed);
  Matrix x(n, d);
  for (double& v : x.data) v = prng.next_normal();
  return x;
}

// n points split across `centers`, sigma 1 around each, centers scaled by
// `spread`.
Matrix blobs(std::size_t n_per, const std::vector<std::pair<double, double>>& centers,
             double spread, std::vector<int>& labels, std::uint64_t seed) {
  Prng prng(seed);
  Matrix x(n_per * centers.size(), 2);
  labels.clear();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (std::size_t i = 0; i < n_per; ++i) {
      const std::size_t row = c * n_per + i;
      x(row, 0) = centers[c].first * spread + prng.next_normal();
      x(row, 1) = centers[c].second * spread + prng.next_normal();
      labels.push_back(static_cast<int>(c));
    }
  }
  return x;
}

// Independent conditional-affinity solver: plain bisection on a bracketed
// interval, fixed 200 halvings, no early exit.
Matrix oracle_affinities(const Matrix& x, double perplexity) {
  const std::size_t n = x.rows;
  Matrix d2(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sq = 0.0;
      for (std::size_t f = 0; f < x.cols; ++f) {
        const double diff = x(i, f) - x(j, f);
        sq += diff * diff;
      }
      d2(i, j) = sq;
    }
  }
  auto row_perplexity = [&](std::size_t i, double beta, std::vector<double>& out) {
    double sum = 0.0, weighted = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = j == i ? 0.0 : std::exp(-beta * d2(i, j));
      sum += out[j];
      weighted += out[j] * d2(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= sum;
    return std::exp(std::log(sum) + beta * weighted / sum);
  };
  Matrix cond(n, n);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    double lo = 1.0, hi = 1.0;
    while (row_perplexity(i, lo, row) < perplexity) lo /= 4.0;
    while (row_perplexity(i, hi, row) > perplexity) hi *= 4.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (row_perplexity(i, mid, row) > perplexity) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    row_perplexity(i, 0.5 * (lo + hi), row);
    for (std::size_t j = 0; j < n; ++j) cond(i, j) = row[j];
  }
  Matrix sym(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      sym(i, j) = (cond(i, j) + cond(j, i)) / (2.0 * static_cast<double>(n));
    }
  }
  return sym;
}

}  // namespace

TEST_CASE("affinities form a symmetric distribution over pairs", "[tsne]") {
  const Matrix x = gaussian_points(60, 5, 3);
  const Matrix p = shortcut::pairwise_affinities(x, 10.0);
  double total = 0.0;
  for (std::size_t i = 0; i < 60; ++i) {
    CHECK(p(i, i) == 0.0);
    for (std::size_t j = 0; j < 60; ++j) {
      REQUIRE(p(i, j) >= 0.0);
      REQUIRE(p(i, j) == p(j, i));
      total += p(i, j);
    }
  }
  CHECK(total == Catch::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("affinities match an independent bisection oracle", "[tsne]") {
  const Matrix x = gaussian_points(120, 8, 11);
  const double perplexity = 15.0;
  const Matrix p = shortcut::pairwise_affinities(x, perplexity);
  const Matrix q = oracle_affinities(x, perplexity);
  double worst = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    worst = std::max(worst, std::abs(p.data[i] - q.data[i]));
  }
  INFO("max affinity deviation " << worst);
  // both solvers stop within 1e-3 of the target perplexity; entries are
  // O(1/n) so the band below is comfortably past the convergence slack
  CHECK(worst <= 2e-5);
}

TEST_CASE("nearer neighbours receive more affinity", "[tsne]") {
  Matrix x(20, 1);
  for (std::size_t i = 0; i < 20; ++i) x(i, 0) = static_cast<double>(i);
  const Matrix p = shortcut::pairwise_affinities(x, 5.0);
  CHECK(p(0, 1) > p(0, 5));
  CHECK(p(7, 8) > p(7, 12));
}

TEST_CASE("affinity preconditions reject bad input", "[tsne]") {
  const Matrix x = gaussian_points(30, 3, 5);
  CHECK_THROWS_WITH(shortcut::pairwise_affinities(x, 4.9),
                    Catch::Matchers::ContainsSubstring("perplexity must be in"));
  CHECK_THROWS_AS(shortcut::pairwise_affinities(x, 10.0), std::invalid_argument);
  // (30-1)/3 < 10: still out of range
  Matrix one(1, 3);
  CHECK_THROWS_WITH(shortcut::pairwise_affinities(one, 5.0),
                    Catch::Matchers::ContainsSubstring("at least 2 points"));
}

TEST_CASE("an all-duplicate cloud cannot match a perplexity", "[tsne]") {
  Matrix x(20, 2);  // all points at the origin
  CHECK_THROWS_WITH(shortcut::pairwise_affinities(x, 5.0),
                    Catch::Matchers::ContainsSubstring("duplicate points?"));
}

TEST_CASE("stratified subsampling keeps class proportions", "[tsne]") {
  std::vector<int> labels;
  labels.insert(labels.end(), 600, 0);
  labels.insert(labels.end(), 300, 1);
  labels.insert(labels.end(), 100, 2);
  Prng prng(8);
  const auto chosen = shortcut::detail::stratified_subsample(labels, 50, prng);
  REQUIRE(chosen.size() == 50);
  CHECK(std::is_sorted(chosen.begin(), chosen.end()));
  std::vector<int> per_class(3, 0);
  for (std::size_t i : chosen) ++per_class[static_cast<std::size_t>(labels[i])];
  CHECK(per_class == std::vector<int>{30, 15, 5});

  Prng replay(8);
  CHECK(shortcut::detail::stratified_subsample(labels, 50, replay) == chosen);

  const auto all = shortcut::detail::stratified_subsample(labels, 2000, prng);
  REQUIRE(all.size() == labels.size());  // under the cap: identity
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
}

TEST_CASE("well-separated blobs embed into separated clusters", "[tsne]") {
  // the fixed learning rate is sized for the tool's operating range of
  // hundreds-to-thousands of points; tiny inputs overshoot by design
  std::vector<int> labels;
  const Matrix x = blobs(150, {{0, 0}, {1, 0}, {0, 1}}, 50.0, labels, 21);
  Prng prng(1);
  const Embedding e = shortcut::tsne_embed(x, labels, 30.0, 400, prng);
  REQUIRE(e.points.rows == 450);
  REQUIRE(e.kl_trace.size() == 400);
  for (double kl : e.kl_trace) {
    REQUIRE(std::isfinite(kl));
    REQUIRE(kl >= 0.0);
  }
  CHECK(shortcut::silhouette(e.points, e.labels) >= 0.5);
  CHECK(e.labels == labels);
  // trace index 249 is the last exaggerated iteration; the plain objective
  // must keep improving afterwards
  CHECK(e.kl_trace.back() < e.kl_trace[249]);
}

TEST_CASE("structure found in noise is negligible", "[tsne]") {
  const Matrix x = gaussian_points(300, 10, 33);
  std::vector<int> labels(300);
  Prng label_prng(4);
  for (int& y : labels) y = static_cast<int>(label_prng.next_below(3));
  Prng prng(2);
  const Embedding e = shortcut::tsne_embed(x, labels, 30.0, 260, prng);
  const double s = shortcut::silhouette(e.points, e.labels);
  INFO("noise silhouette " << s);
  CHECK(std::abs(s) <= 0.08);
}

TEST_CASE("embeddings replay bit-identically per seed", "[tsne]") {
  std::vector<int> labels;
  const Matrix x = blobs(10, {{0, 0}, {1, 1}}, 30.0, labels, 9);
  Prng a(7), b(7), c(8);
  const Embedding ea = shortcut::tsne_embed(x, labels, 5.0, 60, a);
  const Embedding eb = shortcut::tsne_embed(x, labels, 5.0, 60, b);
  const Embedding ec = shortcut::tsne_embed(x, labels, 5.0, 60, c);
  CHECK(ea.points.data == eb.points.data);
  CHECK(ea.kl_trace == eb.kl_trace);
  CHECK(ea.points.data != ec.points.data);
  CHECK(ea.params.seed == Prng(7).key());
}

TEST_CASE("embedding preconditions", "[tsne]") {
  const Matrix x = gaussian_points(9, 3, 1);
  std::vector<int> labels(9, 0);
  Prng prng(0);
  CHECK_THROWS_WITH(shortcut::tsne_embed(x, labels, 5.0, 10, prng),
                    Catch::Matchers::ContainsSubstring("at least 10 points"));
  const Matrix x2 = gaussian_points(20, 3, 2);
  std::vector<int> labels2(19, 0);
  CHECK_THROWS_WITH(shortcut::tsne_embed(x2, labels2, 5.0, 10, prng),
                    Catch::Matchers::ContainsSubstring("label count mismatch"));
  std::vector<int> labels3(20, 0);
  CHECK_THROWS_AS(shortcut::tsne_embed(x2, labels3, 5.0, 0, prng), std::invalid_argument);
  // perplexity out of range for n=20 surfaces from the affinity stage
  CHECK_THROWS_AS(shortcut::tsne_embed(x2, labels3, 30.0, 10, prng), std::invalid_argument);
}

TEST_CASE("silhouette scores behave at the extremes", "[tsne]") {
  Matrix tight(8, 2);
  std::vector<int> labels = {0, 0, 0, 0, 1, 1, 1, 1};
  Prng prng(5);
  for (std::size_t i = 0; i < 8; ++i) {
    tight(i, 0) = (i < 4 ? 0.0 : 100.0) + 0.01 * prng.next_normal();
    tight(i, 1) = 0.01 * prng.next_normal();
  }
  CHECK(shortcut::silhouette(tight, labels) > 0.9);

  std::vector<int> single = {0, 1, 0, 0, 1, 1, 1, 1};
  single[1] = 2;  // class 2 appears once
  CHECK_THROWS_WITH(shortcut::silhouette(tight, single),
                    Catch::Matchers::ContainsSubstring("class 2 has a single point"));

  std::vector<int> lone(8, 0);
  CHECK_THROWS_WITH(shortcut::silhouette(tight, lone),
                    Catch::Matchers::ContainsSubstring("at least 2 classes"));
  CHECK_THROWS_AS(shortcut::silhouette(tight, std::vector<int>{0, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(shortcut::silhouette(tight, std::vector<int>(8, -1)),
                  std::invalid_argument);

  // random labels on one blob: scores stay in [-1, 1] and near zero
  Matrix blob = gaussian_points(40, 2, 12);
  std::vector<int> noisy(40);
  for (std::size_t i = 0; i < 40; ++i) noisy[i] = static_cast<int>(i % 2);
  const double s = shortcut::silhouette(blob, noisy);
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);
  CHECK(std::abs(s) < 0.3);
}

TEST_CASE("embedding csv round-trips", "[tsne]") {
  Embedding e;
  e.points = Matrix(3, 2);
  e.points.data = {1.5, -2.25, 0.0, 3.0, -1.0, 0.125};
  e.labels = {2, 0, 1};
  const auto path =
      (std::filesystem::temp_directory_path() / "tsne_test_embed.csv").string();
  shortcut::write_embedding_csv(e, path);

  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "x,y,label");
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(std::getline(in, line));
    std::istringstream ss(line);
    std::string xs, ys, ls;
    REQUIRE(std::getline(ss, xs, ','));
    REQUIRE(std::getline(ss, ys, ','));
    REQUIRE(std::getline(ss, ls, ','));
    CHECK(std::stod(xs) == e.points(i, 0));
    CHECK(std::stod(ys) == e.points(i, 1));
    CHECK(std::stoi(ls) == e.labels[i]);
  }
  CHECK_FALSE(std::getline(in, line));
  std::filesystem::remove(path);
}

TEST_CASE("many separated blobs stay separated at scale", "[tsne][slow]") {
  std::vector<int> labels;
  const Matrix x = blobs(200, {{0, 0}, {1, 0}, {0, 1}}, 50.0, labels, 42);
  Prng prng(6);
  const Embedding e = shortcut::tsne_embed(x, labels, 30.0, 500, prng);
  const double s = shortcut::silhouette(e.points, e.labels);
  INFO("blob silhouette " << s);
  CHECK(s >= 0.5);
}
