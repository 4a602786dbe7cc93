#include "classdrift/lp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "classdrift/error.hpp"

namespace classdrift::lp {

const char* to_string(Status status) noexcept {
  switch (status) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
  }
  return "unknown";
}

void LinearProgram::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::Malformed, what); };
  if (objective.size() != n_vars) fail("objective length differs from n_vars");
  if (bounds.size() != n_vars) fail("bounds length differs from n_vars");
  for (const auto* group : {&equalities, &inequalities}) {
    for (const auto& c : *group) {
      if (c.coeffs.size() != n_vars) fail("constraint row length differs from n_vars");
      if (!std::isfinite(c.rhs)) fail("constraint right-hand side is not finite");
    }
  }
  for (std::size_t j = 0; j < n_vars; ++j) {
    const auto& b = bounds[j];
    if (!std::isfinite(b.lo)) fail("variable " + std::to_string(j) + " needs a finite lower bound");
    if (std::isnan(b.hi) || b.hi < b.lo) fail("variable " + std::to_string(j) + " has lo > hi");
  }
}

namespace {

constexpr std::size_t kNone = static_cast<std::size_t>(-1);
constexpr double kPivotTol = 1e-9;
constexpr std::size_t kRefreshInterval = 128;

enum class VarState : std::uint8_t { Basic, AtLower, AtUpper };

// Bounded-variable primal simplex on a dense tableau.  Structural variables
// are shifted so every column has bounds [0, upper]; rows are sign-flipped to
// a non-negative right-hand side and given a slack or artificial unit column.
class Tableau {
 public:
  Tableau(const LinearProgram& lp, const SolverOptions& opt) : lp_(lp), opt_(opt) {
    n_ = lp.n_vars;
    const std::size_t n_eq = lp.equalities.size();
    const std::size_t n_ub = lp.inequalities.size();
    m_ = n_eq + n_ub;

    std::vector<std::vector<double>> rows;
    std::vector<double> rhs;
    std::vector<bool> is_ub;
    rows.reserve(m_);
    for (const auto* group : {&lp.equalities, &lp.inequalities}) {
      for (const auto& c : *group) {
        double b = c.rhs;
        for (std::size_t j = 0; j < n_; ++j) b -= c.coeffs[j] * lp.bounds[j].lo;
        rows.push_back(c.coeffs);
        rhs.push_back(b);
        is_ub.push_back(group == &lp.inequalities);
      }
    }

    std::size_t n_art = 0;
    std::vector<double> sign(m_, 1.0);
    for (std::size_t r = 0; r < m_; ++r) {
      if (rhs[r] < 0.0) sign[r] = -1.0;
      if (!is_ub[r] || sign[r] < 0.0) ++n_art;
    }
    slack_begin_ = n_;
    art_begin_ = n_ + n_ub;
    cols_ = art_begin_ + n_art;

    tab_.assign(m_ * cols_, 0.0);
    upper_.assign(cols_, kInfinity);
    for (std::size_t j = 0; j < n_; ++j) upper_[j] = lp.bounds[j].hi - lp.bounds[j].lo;
    state_.assign(cols_, VarState::AtLower);
    basis_.assign(m_, kNone);
    unit_col_.assign(m_, kNone);
    rhs_.assign(m_, 0.0);

    std::size_t next_slack = slack_begin_;
    std::size_t next_art = art_begin_;
    for (std::size_t r = 0; r < m_; ++r) {
      double* row = &tab_[r * cols_];
      for (std::size_t j = 0; j < n_; ++j) row[j] = sign[r] * rows[r][j];
      rhs_[r] = sign[r] * rhs[r];
      std::size_t unit = kNone;
      if (is_ub[r]) {
        row[next_slack] = sign[r];
        if (sign[r] > 0.0) unit = next_slack;
        ++next_slack;
      }
      if (unit == kNone) {
        row[next_art] = 1.0;
        unit = next_art++;
      }
      unit_col_[r] = unit;
      basis_[r] = unit;
      state_[unit] = VarState::Basic;
    }
    original_ = tab_;
    beta_ = rhs_;
    degenerate_limit_ = opt_.degenerate_factor * (cols_ + m_);
    iteration_limit_ = 200 * (cols_ + m_) + 10000;
  }

  Solution run() {
    Solution sol;
    if (art_begin_ < cols_) {
      std::vector<double> cost(cols_, 0.0);
      for (std::size_t j = art_begin_; j < cols_; ++j) cost[j] = 1.0;
      if (iterate(cost) == Status::Unbounded) {
        throw Error(ErrorCode::NumericalFailure, "phase 1 reported an unbounded ray");
      }
      refresh_basic_values();
      double infeasibility = 0.0;
      for (std::size_t r = 0; r < m_; ++r) {
        if (basis_[r] >= art_begin_) infeasibility += std::max(0.0, beta_[r]);
      }
      if (infeasibility > opt_.infeasibility_threshold) {
        sol.status = Status::Infeasible;
        sol.pivots = pivots_;
        return sol;
      }
      drive_out_artificials();
    }

    std::vector<double> cost(cols_, 0.0);
    std::copy(lp_.objective.begin(), lp_.objective.end(), cost.begin());
    const Status status = iterate(cost);
    sol.pivots = pivots_;
    if (status == Status::Unbounded) {
      sol.status = Status::Unbounded;
      return sol;
    }
    refresh_basic_values();

    sol.status = Status::Optimal;
    sol.x.assign(n_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
      const auto& b = lp_.bounds[j];
      double v = b.lo + value_of(j);
      sol.x[j] = std::clamp(v, b.lo, b.hi);
    }
    sol.objective_value = 0.0;
    for (std::size_t j = 0; j < n_; ++j) sol.objective_value += lp_.objective[j] * sol.x[j];

    const Residuals res = check_point(lp_, sol.x);
    if (res.max_equality > opt_.infeasibility_threshold ||
        res.max_inequality > opt_.infeasibility_threshold) {
      throw Error(ErrorCode::NumericalFailure,
                  "optimal basis fails re-verification against the constraints");
    }
    return sol;
  }

 private:
  double* row(std::size_t r) { return &tab_[r * cols_]; }

  double value_of(std::size_t col) const {
    switch (state_[col]) {
      case VarState::AtLower: return 0.0;
      case VarState::AtUpper: return upper_[col];
      case VarState::Basic: break;
    }
    for (std::size_t r = 0; r < m_; ++r) {
      if (basis_[r] == col) return beta_[r];
    }
    return 0.0;
  }

  void compute_reduced_costs(const std::vector<double>& cost) {
    d_ = cost;
    for (std::size_t r = 0; r < m_; ++r) {
      const double cb = cost[basis_[r]];
      if (cb == 0.0) continue;
      const double* tr = &tab_[r * cols_];
      for (std::size_t j = 0; j < cols_; ++j) d_[j] -= cb * tr[j];
    }
    for (std::size_t r = 0; r < m_; ++r) d_[basis_[r]] = 0.0;
  }

  // Recomputes basic values as B^-1 (b - N x_N) using the columns that held
  // the identity at the start; this keeps drift from accumulating in beta.
  void refresh_basic_values() {
    std::vector<double> w = rhs_;
    for (std::size_t j = 0; j < cols_; ++j) {
      if (state_[j] != VarState::AtUpper) continue;
      const double u = upper_[j];
      for (std::size_t r = 0; r < m_; ++r) w[r] -= original_[r * cols_ + j] * u;
    }
    for (std::size_t i = 0; i < m_; ++i) {
      const double* ti = &tab_[i * cols_];
      double v = 0.0;
      for (std::size_t r = 0; r < m_; ++r) v += ti[unit_col_[r]] * w[r];
      if (std::abs(v) < 1e-13) v = 0.0;
      beta_[i] = v;
    }
  }

  struct Entering {
    std::size_t col = kNone;
    double dir = 1.0;
  };

  Entering choose_entering(bool bland) const {
    Entering best;
    double best_score = 0.0;
    for (std::size_t j = 0; j < art_begin_; ++j) {
      double score = 0.0;
      double dir = 1.0;
      if (state_[j] == VarState::AtLower) {
        if (d_[j] >= -opt_.optimality_tol || upper_[j] <= 0.0) continue;
        score = -d_[j];
      } else if (state_[j] == VarState::AtUpper) {
        if (d_[j] <= opt_.optimality_tol) continue;
        score = d_[j];
        dir = -1.0;
      } else {
        continue;
      }
      if (bland) return {j, dir};
      if (score > best_score) {
        best_score = score;
        best = {j, dir};
      }
    }
    return best;
  }

  Status iterate(const std::vector<double>& cost) {
    compute_reduced_costs(cost);
    bool bland = false;
    std::size_t degenerate = 0;
    std::size_t since_refresh = 0;
    for (std::size_t iter = 0;; ++iter) {
      if (iter > iteration_limit_) {
        throw Error(ErrorCode::NumericalFailure, "simplex iteration limit exceeded");
      }
      const Entering e = choose_entering(bland);
      if (e.col == kNone) return Status::Optimal;
      const std::size_t q = e.col;

      // Ratio test.  A finite bound flip wins ties with a basic variable.
      double best_limit = kInfinity;
      std::size_t leave = kNone;
      double leave_alpha = 0.0;
      for (std::size_t i = 0; i < m_; ++i) {
        const double alpha = e.dir * tab_[i * cols_ + q];
        double limit;
        if (alpha > kPivotTol) {
          limit = std::max(beta_[i], 0.0) / alpha;
        } else if (alpha < -kPivotTol && std::isfinite(upper_[basis_[i]])) {
          limit = std::max(upper_[basis_[i]] - beta_[i], 0.0) / -alpha;
        } else {
          continue;
        }
        bool take = false;
        if (leave == kNone || limit < best_limit - 1e-12) {
          take = true;
        } else if (limit <= best_limit + 1e-12) {
          take = bland ? basis_[i] < basis_[leave]
                       : std::abs(alpha) > std::abs(leave_alpha);
        }
        if (take) {
          best_limit = std::min(limit, best_limit);
          leave = i;
          leave_alpha = alpha;
        }
      }
      double theta = best_limit;
      if (leave == kNone || upper_[q] <= best_limit) {
        leave = kNone;
        theta = upper_[q];
      }
      if (!std::isfinite(theta)) return Status::Unbounded;

      if (theta <= opt_.feasibility_tol) {
        if (++degenerate > degenerate_limit_) bland = true;
      }

      for (std::size_t i = 0; i < m_; ++i) {
        const double a = tab_[i * cols_ + q];
        if (a != 0.0) beta_[i] -= e.dir * a * theta;
      }

      if (leave == kNone) {
        state_[q] = state_[q] == VarState::AtLower ? VarState::AtUpper : VarState::AtLower;
        continue;
      }

      const double entering_value =
          state_[q] == VarState::AtLower ? theta : upper_[q] - theta;
      const std::size_t out = basis_[leave];
      state_[out] = leave_alpha > 0.0 ? VarState::AtLower : VarState::AtUpper;
      pivot(leave, q);
      beta_[leave] = entering_value;

      if (++since_refresh >= kRefreshInterval) {
        refresh_basic_values();
        since_refresh = 0;
      }
    }
  }

  void pivot(std::size_t r, std::size_t q) {
    double* pr = row(r);
    const double inv = 1.0 / pr[q];
    nonzero_.clear();
    for (std::size_t j = 0; j < cols_; ++j) {
      if (pr[j] == 0.0) continue;
      pr[j] *= inv;
      if (std::abs(pr[j]) < 1e-14) {
        pr[j] = 0.0;
        continue;
      }
      nonzero_.push_back(j);
    }
    pr[q] = 1.0;
    for (std::size_t i = 0; i < m_; ++i) {
      if (i == r) continue;
      double* ti = row(i);
      const double f = ti[q];
      if (f == 0.0) continue;
      for (std::size_t j : nonzero_) ti[j] -= f * pr[j];
      ti[q] = 0.0;
    }
    const double f = d_[q];
    if (f != 0.0) {
      for (std::size_t j : nonzero_) d_[j] -= f * pr[j];
      d_[q] = 0.0;
    }
    basis_[r] = q;
    state_[q] = VarState::Basic;
    ++pivots_;
  }

  void drive_out_artificials() {
    for (std::size_t r = 0; r < m_; ++r) {
      if (basis_[r] < art_begin_) continue;
      const double* tr = row(r);
      std::size_t best = kNone;
      double best_abs = kPivotTol;
      for (std::size_t j = 0; j < art_begin_; ++j) {
        if (state_[j] == VarState::Basic) continue;
        if (std::abs(tr[j]) > best_abs) {
          best_abs = std::abs(tr[j]);
          best = j;
        }
      }
      if (best == kNone) continue;  // redundant row; artificial stays at zero
      const double value = state_[best] == VarState::AtUpper ? upper_[best] : 0.0;
      state_[basis_[r]] = VarState::AtLower;
      d_.assign(cols_, 0.0);
      pivot(r, best);
      beta_[r] = value;
    }
    for (std::size_t j = art_begin_; j < cols_; ++j) upper_[j] = 0.0;
    refresh_basic_values();
  }

  const LinearProgram& lp_;
  const SolverOptions& opt_;
  std::size_t n_ = 0;
  std::size_t m_ = 0;
  std::size_t cols_ = 0;
  std::size_t slack_begin_ = 0;
  std::size_t art_begin_ = 0;
  std::vector<double> tab_;
  std::vector<double> original_;
  std::vector<double> rhs_;
  std::vector<double> beta_;
  std::vector<double> upper_;
  std::vector<double> d_;
  std::vector<VarState> state_;
  std::vector<std::size_t> basis_;
  std::vector<std::size_t> unit_col_;
  std::vector<std::size_t> nonzero_;
  std::size_t degenerate_limit_ = 0;
  std::size_t iteration_limit_ = 0;
  std::size_t pivots_ = 0;
};

}  // namespace

Solution solve(const LinearProgram& lp, const SolverOptions& options) {
  lp.validate();
  Tableau tableau(lp, options);
  return tableau.run();
}

Residuals check_point(const LinearProgram& lp, std::span<const double> x) {
  Residuals res;
  auto dot = [&](const std::vector<double>& a) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * x[j];
    return s;
  };
  for (const auto& c : lp.equalities) {
    res.max_equality = std::max(res.max_equality, std::abs(dot(c.coeffs) - c.rhs));
  }
  for (const auto& c : lp.inequalities) {
    res.max_inequality = std::max(res.max_inequality, dot(c.coeffs) - c.rhs);
  }
  for (std::size_t j = 0; j < lp.n_vars; ++j) {
    res.max_bound = std::max({res.max_bound, lp.bounds[j].lo - x[j], x[j] - lp.bounds[j].hi});
  }
  return res;
}

std::string to_listing(const LinearProgram& lp) {
  std::ostringstream out;
  out.precision(12);
  auto term_list = [&](const std::vector<double>& a) {
    bool first = true;
    for (std::size_t j = 0; j < a.size(); ++j) {
      if (a[j] == 0.0) continue;
      out << (a[j] < 0.0 ? " - " : (first ? " " : " + ")) << std::abs(a[j]) << " x" << j;
      first = false;
    }
    if (first) out << " 0";
  };
  out << "minimize\n obj:";
  term_list(lp.objective);
  out << "\nsubject to\n";
  std::size_t idx = 0;
  for (const auto& c : lp.equalities) {
    out << " e" << idx++ << ":";
    term_list(c.coeffs);
    out << " = " << c.rhs << "\n";
  }
  idx = 0;
  for (const auto& c : lp.inequalities) {
    out << " u" << idx++ << ":";
    term_list(c.coeffs);
    out << " <= " << c.rhs << "\n";
  }
  out << "bounds\n";
  for (std::size_t j = 0; j < lp.n_vars; ++j) {
    out << " " << lp.bounds[j].lo << " <= x" << j << " <= ";
    if (std::isfinite(lp.bounds[j].hi)) out << lp.bounds[j].hi; else out << "inf";
    out << "\n";
  }
  out << "end\n";
  return out.str();
}

}  // namespace classdrift::lp
