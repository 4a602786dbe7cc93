#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "classdrift/core_types.hpp"
#include "classdrift/lp_solver.hpp"

namespace classdrift::synthesis {

enum class Method4Route {
  Auto,       // direct when the full program is small, projected otherwise
  Direct,     // one variable per (class, subset, target) in a single program
  Projected,  // row-generation over T, then recover the per-subset policies
};

struct Config {
  double xi = 0.01;                // cap on the off-diagonal floors L
  bool method2_relax_eta = true;   // false: t_ij <= r'_ij is a hard bound
  bool method4_laplace = true;
  bool method4_zero_singleton = true;
  Method4Route method4_route = Method4Route::Auto;
  // Auto switches to the projected route above this many subset variables.
  std::size_t method4_direct_limit = 1500;

  // Requires 0 < xi < 1/(2k).
  void validate(std::size_t k) const;
};

enum class Status { Optimal, Infeasible };

const char* to_string(Status status) noexcept;

// Target distribution for inputs of one source class that reach exactly
// `subset`; `weight` is P(subset | source).
struct SubsetPolicy {
  std::size_t source = 0;
  ClassMask subset = 0;
  double weight = 0.0;
  std::vector<double> targets;  // length k, zero outside `subset`
};

struct Result {
  Status status = Status::Infeasible;
  std::optional<TransitionMatrix> matrix;
  double objective = 0.0;
  std::size_t lp_vars = 0;
  std::size_t lp_constraints = 0;
  double wall_ms = 0.0;

  DenseMatrix floors;       // L (methods 1 and 2)
  DenseMatrix slack;        // eta_ij (method 2)
  DenseMatrix multipliers;  // Q (method 3)
  double cap = 0.0;         // scalar eta (method 3)
  std::vector<SubsetPolicy> policies;  // V (method 4)

  bool ok() const noexcept { return status == Status::Optimal; }
  // Throws Error{NumericalFailure} when no matrix was produced.
  const TransitionMatrix& value() const;
};

struct Verification {
  double max_residual = 0.0;       // max_j |(P T)_j - target_j|
  double max_row_deviation = 0.0;  // max_i |sum_j t_ij - 1|
  double min_entry = 0.0;
  double diagonal_mass = 0.0;      // sum_i t_ii
};

Verification verify_matrix(const DenseMatrix& t, const ProbabilityVector& p,
                           const ProbabilityVector& target);
Verification verify_matrix(const TransitionMatrix& t, const ProbabilityVector& p,
                           const ProbabilityVector& target);

Result method1(const ProbabilityVector& p, const ProbabilityVector& target,
               const Config& cfg = {});
Result method2(const ProbabilityVector& p, const ProbabilityVector& target,
               const ReachabilityStats& stats, const Config& cfg = {});
Result method3(const ProbabilityVector& p, const ProbabilityVector& target,
               const ReachabilityStats& stats, const Config& cfg = {});
// Method 3 on an explicit success-rate matrix R-hat (entries in [0, 1]).
Result method3(const ProbabilityVector& p, const ProbabilityVector& target,
               const DenseMatrix& r_hat, const Config& cfg = {});
Result method4(const ProbabilityVector& p, const ProbabilityVector& target,
               const ReachabilityStats& stats, const Config& cfg = {});

// Add-one smoothing over all 2^(k-1) subsets containing `source`.  Raw
// counts are recovered as probability * n.
SubsetDistribution laplace_smooth(const SubsetDistribution& row, std::size_t n,
                                  std::size_t k, std::size_t source);

// Removes the mass of {source} and renormalizes.  A row whose only mass is the
// singleton is returned unchanged.
SubsetDistribution zero_singleton(const SubsetDistribution& row, std::size_t source);

// The per-class subset table Method 4 optimizes over, after the configured
// smoothing and singleton zeroing.
std::vector<SubsetDistribution> method4_subset_table(const ReachabilityStats& stats,
                                                     const Config& cfg);

struct SubsetVariable {
  std::size_t source;
  ClassMask subset;
  std::size_t target;
};

struct Method4Program {
  lp::LinearProgram lp;
  std::vector<SubsetVariable> variables;  // parallel to lp columns
};

// The full program over V: one column per (class, subset, member).
Method4Program method4_program(const ProbabilityVector& p, const ProbabilityVector& target,
                               const std::vector<SubsetDistribution>& table);

// Upper bound on Method 4's variable count, 2^k * k^2.
std::size_t method4_variable_bound(std::size_t k);

}  // namespace classdrift::synthesis
