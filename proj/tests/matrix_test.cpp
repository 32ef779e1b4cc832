#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>

#include "shortcut/matrix.hpp"
#include "shortcut/prng.hpp"

using shortcut::Matrix;
using shortcut::Prng;

namespace {

Matrix random_matrix(Prng& prng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = prng.next_uniform(-1.0, 1.0);
  return m;
}

// Schoolbook product, the independent reference for matmul.
Matrix triple_loop(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  }
  return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  REQUIRE(a.rows == b.rows);
  REQUIRE(a.cols == b.cols);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("matrix storage is row-major", "[matrix]") {
  Matrix m(2, 3);
  m(1, 2) = 42.0;
  CHECK(m.data[1 * 3 + 2] == 42.0);
  CHECK(m.row(1)[2] == 42.0);
  CHECK(m.data.size() == 6);
}

TEST_CASE("scalar product and identity", "[matrix]") {
  Matrix a(1, 1), b(1, 1);
  a(0, 0) = 2.0;
  b(0, 0) = 3.0;
  CHECK(shortcut::matmul(a, b)(0, 0) == 6.0);

  Prng prng(21);
  const Matrix m = random_matrix(prng, 4, 4);
  const Matrix mi = shortcut::matmul(m, Matrix::identity(4));
  CHECK(max_abs_diff(m, mi) == 0.0);
}

TEST_CASE("matmul agrees with the triple-loop oracle", "[matrix]") {
  Prng prng(33);
  const Matrix a = random_matrix(prng, 7, 5);
  const Matrix b = random_matrix(prng, 5, 4);
  CHECK(max_abs_diff(shortcut::matmul(a, b), triple_loop(a, b)) <= 1e-12);
}

TEST_CASE("matmul associativity", "[matrix]") {
  Prng prng(34);
  const Matrix a = random_matrix(prng, 6, 8);
  const Matrix b = random_matrix(prng, 8, 5);
  const Matrix c = random_matrix(prng, 5, 7);
  const Matrix left = shortcut::matmul(shortcut::matmul(a, b), c);
  const Matrix right = shortcut::matmul(a, shortcut::matmul(b, c));
  CHECK(max_abs_diff(left, right) <= 1e-9);
}

TEST_CASE("matmul rejects mismatched shapes", "[matrix]") {
  Matrix a(2, 3), b(4, 2);
  CHECK_THROWS_AS(shortcut::matmul(a, b), std::invalid_argument);
}
