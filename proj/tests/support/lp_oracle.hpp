#pragma once

// Brute-force LP oracle: enumerates every basic solution of a box-bounded
// program and keeps the best feasible one.  Only usable for a handful of
// variables; independent of the simplex code it checks.

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "classdrift/lp_solver.hpp"

namespace classdrift::testing {

struct VertexOptimum {
  bool feasible = false;
  double objective = 0.0;
  std::vector<double> x;
};

namespace detail {

inline std::optional<std::vector<double>> solve_square(std::vector<std::vector<double>> a,
                                                       std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    }
    if (std::abs(a[p][c]) < 1e-10) return std::nullopt;
    std::swap(a[p], a[c]);
    std::swap(b[p], b[c]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      if (f == 0.0) continue;
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = b[i] / a[i][i];
  return x;
}

inline bool feasible_point(const lp::LinearProgram& lp, const std::vector<double>& x,
                           double tol) {
  for (std::size_t j = 0; j < lp.n_vars; ++j) {
    if (x[j] < lp.bounds[j].lo - tol || x[j] > lp.bounds[j].hi + tol) return false;
  }
  auto dot = [&](const std::vector<double>& a) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * x[j];
    return s;
  };
  for (const auto& c : lp.equalities) {
    if (std::abs(dot(c.coeffs) - c.rhs) > tol) return false;
  }
  for (const auto& c : lp.inequalities) {
    if (dot(c.coeffs) - c.rhs > tol) return false;
  }
  return true;
}

}  // namespace detail

// Requires every variable to have finite bounds so the region is a polytope.
inline VertexOptimum enumerate_vertices(const lp::LinearProgram& lp, double tol = 1e-9) {
  const std::size_t n = lp.n_vars;
  std::vector<std::vector<double>> planes;
  std::vector<double> rhs;
  for (const auto* group : {&lp.equalities, &lp.inequalities}) {
    for (const auto& c : *group) {
      planes.push_back(c.coeffs);
      rhs.push_back(c.rhs);
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> e(n, 0.0);
    e[j] = 1.0;
    planes.push_back(e);
    rhs.push_back(lp.bounds[j].lo);
    planes.push_back(e);
    rhs.push_back(lp.bounds[j].hi);
  }

  VertexOptimum best;
  std::vector<std::size_t> pick(n);
  const std::size_t total = planes.size();
  // Iterate n-combinations of the hyperplanes in lexicographic order.
  for (std::size_t i = 0; i < n; ++i) pick[i] = i;
  while (true) {
    std::vector<std::vector<double>> a(n);
    std::vector<double> b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = planes[pick[i]];
      b[i] = rhs[pick[i]];
    }
    if (auto x = detail::solve_square(a, b); x && detail::feasible_point(lp, *x, tol)) {
      double obj = 0.0;
      for (std::size_t j = 0; j < n; ++j) obj += lp.objective[j] * (*x)[j];
      if (!best.feasible || obj < best.objective) {
        best.feasible = true;
        best.objective = obj;
        best.x = *x;
      }
    }
    std::size_t i = n;
    while (i > 0 && pick[i - 1] == total - n + (i - 1)) --i;
    if (i == 0) break;
    ++pick[i - 1];
    for (std::size_t r = i; r < n; ++r) pick[r] = pick[r - 1] + 1;
  }
  return best;
}

// Random box-bounded program: up to 6 variables and 6 constraints.
inline lp::LinearProgram random_box_program(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_dist(1, 6);
  std::uniform_int_distribution<int> m_dist(0, 6);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  std::uniform_real_distribution<double> width(0.2, 2.0);
  std::bernoulli_distribution zero_lo(0.5);
  std::bernoulli_distribution is_eq(0.25);

  const auto n = static_cast<std::size_t>(n_dist(rng));
  lp::LinearProgram lp(n);
  for (std::size_t j = 0; j < n; ++j) {
    lp.objective[j] = coef(rng);
    const double lo = zero_lo(rng) ? 0.0 : coef(rng);
    lp.bounds[j] = {lo, lo + width(rng)};
  }
  const int m = m_dist(rng);
  for (int r = 0; r < m; ++r) {
    std::vector<double> a(n);
    for (double& v : a) v = coef(rng);
    const double b = coef(rng);
    if (is_eq(rng)) {
      lp.add_equality(std::move(a), b);
    } else {
      lp.add_less_equal(std::move(a), b);
    }
  }
  return lp;
}

}  // namespace classdrift::testing
