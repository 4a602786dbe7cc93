#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace classdrift::lp {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct Constraint {
  std::vector<double> coeffs;
  double rhs = 0.0;
};

struct Bound {
  double lo = 0.0;
  double hi = kInfinity;
};

// minimize c.x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  lo <= x <= hi.
struct LinearProgram {
  std::size_t n_vars = 0;
  std::vector<double> objective;
  std::vector<Constraint> equalities;
  std::vector<Constraint> inequalities;
  std::vector<Bound> bounds;

  LinearProgram() = default;
  explicit LinearProgram(std::size_t n)
      : n_vars(n), objective(n, 0.0), bounds(n) {}

  void add_equality(std::vector<double> coeffs, double rhs) {
    equalities.push_back({std::move(coeffs), rhs});
  }
  void add_less_equal(std::vector<double> coeffs, double rhs) {
    inequalities.push_back({std::move(coeffs), rhs});
  }
  void add_greater_equal(std::vector<double> coeffs, double rhs) {
    for (double& a : coeffs) a = -a;
    inequalities.push_back({std::move(coeffs), -rhs});
  }

  // Throws Error{Malformed} on dimension mismatches or inverted bounds.
  void validate() const;
};

enum class Status { Optimal, Infeasible, Unbounded };

const char* to_string(Status status) noexcept;

struct Solution {
  Status status = Status::Infeasible;
  std::vector<double> x;  // filled when Optimal
  double objective_value = 0.0;
  std::size_t pivots = 0;
};

struct SolverOptions {
  double feasibility_tol = 1e-9;
  double optimality_tol = 1e-9;
  // Phase-1 optimum above this means no feasible point.
  double infeasibility_threshold = 1e-7;
  // Switch from Dantzig to Bland pricing after this many degenerate pivots,
  // expressed as a multiple of (variables + constraints).
  std::size_t degenerate_factor = 10;
};

Solution solve(const LinearProgram& lp, const SolverOptions& options = {});

struct Residuals {
  double max_equality = 0.0;    // max |a.x - b| over equalities
  double max_inequality = 0.0;  // max (a.x - b)+ over inequalities
  double max_bound = 0.0;       // max violation of any bound
};

Residuals check_point(const LinearProgram& lp, std::span<const double> x);

// Plain-text listing for debugging.  Not a stable format.
std::string to_listing(const LinearProgram& lp);

}  // namespace classdrift::lp
