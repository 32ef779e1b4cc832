#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace shortcut {

// Objective callback: fills grad (same length as x) and returns f(x).
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct LbfgsOptions {
  int history = 10;        // number of (s, y) correction pairs kept
  double grad_tol = 1e-8;  // stop when ||g||_2 < grad_tol
  double armijo_c1 = 1e-4; // sufficient-decrease coefficient
  double min_step = 1e-20; // line search gives up below this step size
};

struct LbfgsResult {
  std::vector<double> x;
  std::vector<double> trace;  // f at x0 and after each accepted step
  int steps = 0;
  bool converged = false;  // gradient tolerance reached
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline void check_finite(double f, std::span<const double> g, int step) {
  if (!std::isfinite(f)) {
    throw std::runtime_error("lbfgs: non-finite objective value at step " +
                             std::to_string(step));
  }
  for (double v : g) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("lbfgs: non-finite gradient at step " +
                               std::to_string(step));
    }
  }
}

}  // namespace detail

// Limited-memory BFGS with backtracking Armijo line search (step halving).
//
// The search direction comes from the standard two-loop recursion over the
// last `history` correction pairs, with the initial inverse-Hessian scaling
// gamma = s'y / y'y. A pair is only stored when s'y is safely positive;
// otherwise the whole history is dropped (a restart), since an Armijo-only
// search can accept negative-curvature steps that would leave the stored
// model permanently inconsistent. Directions that fail the descent test
// fall back to steepest descent.
inline LbfgsResult lbfgs_minimize(const Objective& objective,
                                  std::span<const double> x0, int max_steps,
                                  const LbfgsOptions& opts = {}) {
  const std::size_t dim = x0.size();
  LbfgsResult res;
  res.x.assign(x0.begin(), x0.end());
  std::vector<double> grad(dim), new_grad(dim), direction(dim), trial(dim);

  double f = objective(res.x, grad);
  detail::check_finite(f, grad, 0);
  res.trace.push_back(f);
  if (detail::norm2(grad) < opts.grad_tol) {
    res.converged = true;
    return res;
  }

  struct Pair {
    std::vector<double> s, y;
    double rho;
  };
  std::deque<Pair> history;

  for (int step = 1; step <= max_steps; ++step) {
    // two-loop recursion: direction = -H * grad
    for (std::size_t i = 0; i < dim; ++i) direction[i] = -grad[i];
    std::vector<double> alphas(history.size());
    for (std::size_t h = history.size(); h-- > 0;) {
      const Pair& p = history[h];
      alphas[h] = p.rho * detail::dot(p.s, direction);
      for (std::size_t i = 0; i < dim; ++i) direction[i] -= alphas[h] * p.y[i];
    }
    if (!history.empty()) {
      const Pair& last = history.back();
      const double gamma = detail::dot(last.s, last.y) / detail::dot(last.y, last.y);
      for (double& v : direction) v *= gamma;
    }
    for (std::size_t h = 0; h < history.size(); ++h) {
      const Pair& p = history[h];
      const double beta = p.rho * detail::dot(p.y, direction);
      for (std::size_t i = 0; i < dim; ++i) direction[i] += (alphas[h] - beta) * p.s[i];
    }

    double dg = detail::dot(direction, grad);
    if (!(dg < 0.0)) {
      for (std::size_t i = 0; i < dim; ++i) direction[i] = -grad[i];
      dg = -detail::dot(grad, grad);
    }

    // backtracking Armijo search
    double alpha = 1.0;
    double f_new = f;
    bool accepted = false;
    while (alpha >= opts.min_step) {
      for (std::size_t i = 0; i < dim; ++i) trial[i] = res.x[i] + alpha * direction[i];
      f_new = objective(trial, new_grad);
      detail::check_finite(f_new, new_grad, step);
      if (f_new <= f + opts.armijo_c1 * alpha * dg) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;  // no representable step decreases f

    Pair pair;
    pair.s.resize(dim);
    pair.y.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      pair.s[i] = trial[i] - res.x[i];
      pair.y[i] = new_grad[i] - grad[i];
    }
    const double sy = detail::dot(pair.s, pair.y);
    if (sy > 1e-10 * detail::norm2(pair.s) * detail::norm2(pair.y)) {
      pair.rho = 1.0 / sy;
      history.push_back(std::move(pair));
      if (static_cast<int>(history.size()) > opts.history) history.pop_front();
    } else {
      history.clear();
    }

    res.x = trial;
    grad = new_grad;
    f = f_new;
    res.trace.push_back(f);
    res.steps = step;
    if (detail::norm2(grad) < opts.grad_tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace shortcut
