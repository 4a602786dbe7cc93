#include "classdrift/synthesis.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <sstream>

#include "max_flow.hpp"

namespace classdrift::synthesis {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void check_pair(const ProbabilityVector& p, const ProbabilityVector& target) {
  if (p.size() != target.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "initial and target distributions differ in length");
  }
  if (p.size() < 2) {
    throw Error(ErrorCode::Malformed, "at least two classes are required");
  }
}

void check_stats(const ReachabilityStats& stats, std::size_t k) {
  if (stats.k != k) {
    throw Error(ErrorCode::DimensionMismatch,
                "reachability stats have a different class count");
  }
  if (auto empty = stats.empty_classes(); !empty.empty()) {
    throw Error(ErrorCode::EmptyClass,
                "class " + std::to_string(empty.front()) + " has no samples");
  }
}

// Clamps solver noise and validates the result as a transition matrix.
TransitionMatrix finalize(DenseMatrix t) {
  for (double& v : t.data) v = std::clamp(v, 0.0, 1.0);
  return TransitionMatrix::validate(t);
}

std::vector<double> unit_row(std::size_t n) { return std::vector<double>(n, 0.0); }

// Methods 1 and 2 share their layout: t_ij first, then the off-diagonal
// floors l_ij, then (method 2, relaxed) the slacks eta_ij.
struct FloorLayout {
  std::size_t k;
  std::size_t t(std::size_t i, std::size_t j) const { return i * k + j; }
  std::size_t l(std::size_t i, std::size_t j) const {
    return k * k + i * (k - 1) + (j < i ? j : j - 1);
  }
  std::size_t eta(std::size_t i, std::size_t j) const { return k * k + k * (k - 1) + i * k + j; }
};

void add_transition_constraints(lp::LinearProgram& lp, const ProbabilityVector& p,
                                const ProbabilityVector& target, std::size_t k,
                                auto&& t_index) {
  for (std::size_t j = 0; j < k; ++j) {
    auto a = unit_row(lp.n_vars);
    for (std::size_t i = 0; i < k; ++i) a[t_index(i, j)] = p[i];
    lp.add_equality(std::move(a), target[j]);
  }
  for (std::size_t i = 0; i < k; ++i) {
    auto a = unit_row(lp.n_vars);
    for (std::size_t j = 0; j < k; ++j) a[t_index(i, j)] = 1.0;
    lp.add_equality(std::move(a), 1.0);
  }
}

Result floor_method(const ProbabilityVector& p, const ProbabilityVector& target,
                    const DenseMatrix* r_prime, const Config& cfg) {
  const auto start = Clock::now();
  const std::size_t k = p.size();
  const FloorLayout at{k};
  const bool with_eta = r_prime != nullptr && cfg.method2_relax_eta;
  const std::size_t n = k * k + k * (k - 1) + (with_eta ? k * k : 0);

  lp::LinearProgram lp(n);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      lp.bounds[at.t(i, j)] = {0.0, 1.0};
      if (i == j) {
        lp.objective[at.t(i, i)] = 1.0;
        continue;
      }
      lp.bounds[at.l(i, j)] = {0.0, cfg.xi};
      lp.objective[at.l(i, j)] = -1.0;
    }
  }
  add_transition_constraints(lp, p, target, k, [&](auto i, auto j) { return at.t(i, j); });
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      auto a = unit_row(n);
      a[at.t(i, j)] = -1.0;
      a[at.l(i, j)] = 1.0;
      lp.add_less_equal(std::move(a), 0.0);
    }
  }
  if (r_prime != nullptr) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double cap = (*r_prime)(i, j);
        if (!with_eta) {
          lp.bounds[at.t(i, j)].hi = std::min(1.0, cap);
          continue;
        }
        lp.bounds[at.eta(i, j)] = {0.0, 1.0};
        lp.objective[at.eta(i, j)] = 1.0;
        auto a = unit_row(n);
        a[at.t(i, j)] = 1.0;
        a[at.eta(i, j)] = -1.0;
        lp.add_less_equal(std::move(a), cap);
      }
    }
  }

  Result result;
  result.lp_vars = n;
  result.lp_constraints = lp.equalities.size() + lp.inequalities.size();
  const auto sol = lp::solve(lp);
  result.wall_ms = elapsed_ms(start);
  if (sol.status != lp::Status::Optimal) return result;

  DenseMatrix t(k, k);
  result.floors = DenseMatrix(k, k);
  if (with_eta) result.slack = DenseMatrix(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      t(i, j) = sol.x[at.t(i, j)];
      if (i != j) result.floors(i, j) = sol.x[at.l(i, j)];
      if (with_eta) result.slack(i, j) = sol.x[at.eta(i, j)];
    }
  }
  result.status = Status::Optimal;
  result.objective = sol.objective_value;
  result.matrix = finalize(std::move(t));
  return result;
}

// g(A) = sum of w_S over subsets S that meet A, for every mask A.
std::vector<double> coverage_function(const SubsetDistribution& row, std::size_t k) {
  const std::size_t size = std::size_t{1} << k;
  std::vector<double> inside(size, 0.0);  // mass of subsets contained in A
  double total = 0.0;
  for (const auto& [mask, w] : row) {
    inside[mask] += w;
    total += w;
  }
  for (std::size_t bit = 0; bit < k; ++bit) {
    for (std::size_t a = 0; a < size; ++a) {
      if (a & (std::size_t{1} << bit)) inside[a] += inside[a ^ (std::size_t{1} << bit)];
    }
  }
  std::vector<double> g(size);
  const std::size_t all = size - 1;
  for (std::size_t a = 0; a < size; ++a) g[a] = total - inside[all ^ a];
  return g;
}

std::vector<SubsetPolicy> collect_policies(const std::vector<SubsetDistribution>& table,
                                           std::size_t k) {
  std::vector<SubsetPolicy> out;
  for (std::size_t i = 0; i < k; ++i) {
    for (const auto& [mask, w] : table[i]) {
      if (w > 0.0) out.push_back({i, mask, w, std::vector<double>(k, 0.0)});
    }
  }
  return out;
}

// Normalizes each policy and assembles t_ij = sum_S V^S_ij P(S | y_i).
DenseMatrix assemble(std::vector<SubsetPolicy>& policies, std::size_t k) {
  DenseMatrix t(k, k);
  for (auto& pol : policies) {
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (!mask_contains(pol.subset, j)) pol.targets[j] = 0.0;
      pol.targets[j] = std::max(pol.targets[j], 0.0);
      sum += pol.targets[j];
    }
    if (sum <= 0.0) {
      pol.targets[pol.source] = 1.0;
      sum = 1.0;
    }
    for (double& v : pol.targets) v /= sum;
  }
  std::vector<double> row_weight(k, 0.0);
  for (const auto& pol : policies) row_weight[pol.source] += pol.weight;
  for (const auto& pol : policies) {
    const double w = pol.weight / row_weight[pol.source];
    for (std::size_t j = 0; j < k; ++j) t(pol.source, j) += w * pol.targets[j];
  }
  return t;
}

Result method4_direct(const ProbabilityVector& p, const ProbabilityVector& target,
                      const std::vector<SubsetDistribution>& table, Clock::time_point start) {
  const std::size_t k = p.size();
  auto program = method4_program(p, target, table);
  Result result;
  result.lp_vars = program.lp.n_vars;
  result.lp_constraints = program.lp.equalities.size() + program.lp.inequalities.size();
  const auto sol = lp::solve(program.lp);
  if (sol.status != lp::Status::Optimal) {
    result.wall_ms = elapsed_ms(start);
    return result;
  }
  auto policies = collect_policies(table, k);
  std::size_t cursor = 0;
  for (std::size_t c = 0; c < program.variables.size(); ++c) {
    const auto& var = program.variables[c];
    while (policies[cursor].source != var.source || policies[cursor].subset != var.subset) {
      ++cursor;
    }
    policies[cursor].targets[var.target] = sol.x[c];
  }
  auto t = assemble(policies, k);
  result.status = Status::Optimal;
  result.objective = sol.objective_value;
  result.policies = std::move(policies);
  result.matrix = finalize(std::move(t));
  result.wall_ms = elapsed_ms(start);
  return result;
}

// Solves the same program over T alone.  Each row t_i must be a mixture of
// per-subset distributions, which (by the supply-demand theorem) holds iff
// sum_{j in A} t_ij <= g_i(A) for every class set A.  Violated inequalities
// are added until none remain, then the policies are recovered by max flow.
Result method4_projected(const ProbabilityVector& p, const ProbabilityVector& target,
                         const std::vector<SubsetDistribution>& table,
                         Clock::time_point start) {
  const std::size_t k = p.size();
  const std::size_t size = std::size_t{1} << k;
  constexpr double kCutTol = 1e-10;

  std::vector<std::vector<double>> g(k);
  for (std::size_t i = 0; i < k; ++i) g[i] = coverage_function(table[i], k);

  lp::LinearProgram master(k * k);
  auto t_at = [k](std::size_t i, std::size_t j) { return i * k + j; };
  for (std::size_t i = 0; i < k; ++i) {
    master.objective[t_at(i, i)] = 1.0;
    for (std::size_t j = 0; j < k; ++j) {
      master.bounds[t_at(i, j)] = {0.0, std::clamp(g[i][class_bit(j)], 0.0, 1.0)};
    }
  }
  add_transition_constraints(master, p, target, k, t_at);

  Result result;
  auto policies = collect_policies(table, k);
  for (const auto& pol : policies) result.lp_vars += mask_size(pol.subset);

  std::vector<double> subset_sum(size);
  lp::Solution sol;
  const std::size_t max_rounds = 64 * size;
  for (std::size_t round = 0;; ++round) {
    if (round > max_rounds) {
      throw Error(ErrorCode::NumericalFailure, "method 4 cut generation did not converge");
    }
    sol = lp::solve(master);
    if (sol.status != lp::Status::Optimal) {
      result.lp_constraints = master.equalities.size() + master.inequalities.size();
      result.wall_ms = elapsed_ms(start);
      return result;
    }
    bool added = false;
    for (std::size_t i = 0; i < k; ++i) {
      subset_sum[0] = 0.0;
      double worst = kCutTol;
      std::size_t worst_mask = 0;
      for (std::size_t a = 1; a < size; ++a) {
        const std::size_t low = a & (~a + 1);
        subset_sum[a] = subset_sum[a ^ low] + sol.x[t_at(i, std::countr_zero(low))];
        const double violation = subset_sum[a] - g[i][a];
        if (violation > worst) {
          worst = violation;
          worst_mask = a;
        }
      }
      if (worst_mask == 0) continue;
      auto a = unit_row(k * k);
      for (std::size_t j = 0; j < k; ++j) {
        if (worst_mask & (std::size_t{1} << j)) a[t_at(i, j)] = 1.0;
      }
      master.add_less_equal(std::move(a), g[i][worst_mask]);
      added = true;
    }
    if (!added) break;
  }
  result.lp_constraints = master.equalities.size() + master.inequalities.size();

  // Recover V by routing each subset's mass to the classes it contains.
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<std::size_t> members;
    for (std::size_t c = 0; c < policies.size(); ++c) {
      if (policies[c].source == i) members.push_back(c);
    }
    const std::size_t m = members.size();
    const std::size_t source = 0;
    const std::size_t sink = m + k + 1;
    detail::MaxFlow flow(m + k + 2);
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> edges(m);
    for (std::size_t s = 0; s < m; ++s) {
      const auto& pol = policies[members[s]];
      flow.add_edge(source, 1 + s, pol.weight);
      for (std::size_t j : mask_members(pol.subset)) {
        edges[s].push_back({j, flow.add_edge(1 + s, 1 + m + j, pol.weight)});
      }
    }
    for (std::size_t j = 0; j < k; ++j) flow.add_edge(1 + m + j, sink, sol.x[t_at(i, j)]);
    flow.run(source, sink);
    for (std::size_t s = 0; s < m; ++s) {
      auto& pol = policies[members[s]];
      for (const auto& [j, e] : edges[s]) pol.targets[j] = flow.flow(e) / pol.weight;
      // Cut tolerance can leave a sliver unrouted; keep it on the largest target.
      double routed = 0.0;
      for (double v : pol.targets) routed += v;
      if (routed < 1.0) {
        auto it = std::max_element(pol.targets.begin(), pol.targets.end());
        if (*it <= 0.0) it = pol.targets.begin() + static_cast<std::ptrdiff_t>(pol.source);
        *it += 1.0 - routed;
      }
    }
  }

  auto t = assemble(policies, k);
  result.status = Status::Optimal;
  for (std::size_t i = 0; i < k; ++i) result.objective += t(i, i);
  result.policies = std::move(policies);
  result.matrix = finalize(std::move(t));
  result.wall_ms = elapsed_ms(start);
  return result;
}

}  // namespace

const char* to_string(Status status) noexcept {
  return status == Status::Optimal ? "optimal" : "infeasible";
}

void Config::validate(std::size_t k) const {
  if (!(xi > 0.0) || !(xi < 1.0 / (2.0 * static_cast<double>(k)))) {
    std::ostringstream msg;
    msg << "xi must lie in (0, 1/(2k)) = (0, " << 1.0 / (2.0 * static_cast<double>(k))
        << "), got " << xi;
    throw Error(ErrorCode::Malformed, msg.str());
  }
}

const TransitionMatrix& Result::value() const {
  if (!matrix) throw Error(ErrorCode::NumericalFailure, "no feasible transition matrix");
  return *matrix;
}

Verification verify_matrix(const DenseMatrix& t, const ProbabilityVector& p,
                           const ProbabilityVector& target) {
  const std::size_t k = p.size();
  if (t.rows != k || t.cols != k || target.size() != k) {
    throw Error(ErrorCode::DimensionMismatch, "matrix and distributions disagree in size");
  }
  Verification v;
  v.min_entry = t.data.empty() ? 0.0 : *std::min_element(t.data.begin(), t.data.end());
  for (std::size_t j = 0; j < k; ++j) {
    double mass = 0.0;
    for (std::size_t i = 0; i < k; ++i) mass += p[i] * t(i, j);
    v.max_residual = std::max(v.max_residual, std::abs(mass - target[j]));
  }
  for (std::size_t i = 0; i < k; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += t(i, j);
    v.max_row_deviation = std::max(v.max_row_deviation, std::abs(sum - 1.0));
    v.diagonal_mass += t(i, i);
  }
  return v;
}

Verification verify_matrix(const TransitionMatrix& t, const ProbabilityVector& p,
                           const ProbabilityVector& target) {
  return verify_matrix(t.dense(), p, target);
}

Result method1(const ProbabilityVector& p, const ProbabilityVector& target,
               const Config& cfg) {
  check_pair(p, target);
  cfg.validate(p.size());
  return floor_method(p, target, nullptr, cfg);
}

Result method2(const ProbabilityVector& p, const ProbabilityVector& target,
               const ReachabilityStats& stats, const Config& cfg) {
  check_pair(p, target);
  cfg.validate(p.size());
  check_stats(stats, p.size());
  const auto props = normalize_proportions(stats);
  return floor_method(p, target, &props.r_prime, cfg);
}

Result method3(const ProbabilityVector& p, const ProbabilityVector& target,
               const ReachabilityStats& stats, const Config& cfg) {
  check_pair(p, target);
  cfg.validate(p.size());
  check_stats(stats, p.size());
  return method3(p, target, normalize_proportions(stats).r_hat.dense(), cfg);
}

Result method3(const ProbabilityVector& p, const ProbabilityVector& target,
               const DenseMatrix& r_hat, const Config& cfg) {
  check_pair(p, target);
  cfg.validate(p.size());
  const std::size_t k = p.size();
  if (r_hat.rows != k || r_hat.cols != k) {
    throw Error(ErrorCode::DimensionMismatch, "success-rate matrix has the wrong shape");
  }
  for (double v : r_hat.data) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorCode::Malformed, "success rates must lie in [0, 1]");
    }
  }
  const auto start = Clock::now();
  const std::size_t n = k * k + 1;
  const std::size_t cap = k * k;
  auto q_at = [k](std::size_t i, std::size_t j) { return i * k + j; };

  lp::LinearProgram lp(n);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double r = r_hat(i, j);
      lp.bounds[q_at(i, j)] = {0.0, r > 0.0 ? 1.0 / r : lp::kInfinity};
    }
    lp.objective[q_at(i, i)] = r_hat(i, i);
  }
  lp.objective[cap] = 1.0;
  for (std::size_t j = 0; j < k; ++j) {
    auto a = unit_row(n);
    for (std::size_t i = 0; i < k; ++i) a[q_at(i, j)] = p[i] * r_hat(i, j);
    lp.add_equality(std::move(a), target[j]);
  }
  for (std::size_t i = 0; i < k; ++i) {
    auto a = unit_row(n);
    for (std::size_t j = 0; j < k; ++j) a[q_at(i, j)] = r_hat(i, j);
    lp.add_equality(std::move(a), 1.0);
  }
  for (std::size_t c = 0; c < k * k; ++c) {
    auto a = unit_row(n);
    a[c] = 1.0;
    a[cap] = -1.0;
    lp.add_less_equal(std::move(a), 0.0);
  }

  Result result;
  result.lp_vars = n;
  result.lp_constraints = lp.equalities.size() + lp.inequalities.size();
  auto sol = lp::solve(lp);
  if (sol.status != lp::Status::Optimal) {
    result.wall_ms = elapsed_ms(start);
    return result;
  }
  const double best = sol.objective_value;

  // The cap term makes optimal faces common.  Among optimal Q, prefer the one
  // with the least diagonal mass in T.
  {
    auto tie_break = lp;
    tie_break.add_less_equal(lp.objective, best + 1e-9 * std::max(1.0, std::abs(best)));
    std::fill(tie_break.objective.begin(), tie_break.objective.end(), 0.0);
    for (std::size_t i = 0; i < k; ++i) tie_break.objective[q_at(i, i)] = r_hat(i, i);
    if (auto refined = lp::solve(tie_break); refined.status == lp::Status::Optimal) {
      sol = std::move(refined);
    }
  }

  DenseMatrix t(k, k);
  result.multipliers = DenseMatrix(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      result.multipliers(i, j) = sol.x[q_at(i, j)];
      t(i, j) = r_hat(i, j) * sol.x[q_at(i, j)];
    }
  }
  result.cap = sol.x[cap];
  result.objective = 0.0;
  for (std::size_t c = 0; c < n; ++c) result.objective += lp.objective[c] * sol.x[c];
  result.status = Status::Optimal;
  result.matrix = finalize(std::move(t));
  result.wall_ms = elapsed_ms(start);
  return result;
}

SubsetDistribution laplace_smooth(const SubsetDistribution& row, std::size_t n,
                                  std::size_t k, std::size_t source) {
  if (k > kMaxClasses) {
    throw Error(ErrorCode::SubsetOverflow,
                "subset enumeration supports at most " + std::to_string(kMaxClasses) +
                    " classes");
  }
  if (source >= k) throw Error(ErrorCode::DimensionMismatch, "source class out of range");
  const double support = std::ldexp(1.0, static_cast<int>(k) - 1);
  const double denom = static_cast<double>(n) + support;
  const ClassMask others = full_mask(k) & ~class_bit(source);
  SubsetDistribution out;
  // Enumerate every subset of the other classes, then add the source.
  ClassMask sub = others;
  while (true) {
    const ClassMask mask = sub | class_bit(source);
    double count = 0.0;
    if (auto it = row.find(mask); it != row.end()) count = it->second * static_cast<double>(n);
    out.emplace(mask, (count + 1.0) / denom);
    if (sub == 0) break;
    sub = (sub - 1) & others;
  }
  return out;
}

SubsetDistribution zero_singleton(const SubsetDistribution& row, std::size_t source) {
  SubsetDistribution out;
  double rest = 0.0;
  for (const auto& [mask, w] : row) {
    if (mask != class_bit(source) && w > 0.0) rest += w;
  }
  if (rest <= 0.0) return row;
  for (const auto& [mask, w] : row) {
    if (mask != class_bit(source) && w > 0.0) out.emplace(mask, w / rest);
  }
  return out;
}

std::vector<SubsetDistribution> method4_subset_table(const ReachabilityStats& stats,
                                                     const Config& cfg) {
  const std::size_t k = stats.k;
  if (k > kMaxClasses) {
    throw Error(ErrorCode::SubsetOverflow, "method 4 supports at most 16 classes");
  }
  std::vector<SubsetDistribution> table(k);
  for (std::size_t i = 0; i < k; ++i) {
    table[i] = stats.subset_table[i];
    if (cfg.method4_laplace) table[i] = laplace_smooth(table[i], stats.per_class_n[i], k, i);
    if (cfg.method4_zero_singleton) table[i] = zero_singleton(table[i], i);
  }
  return table;
}

Method4Program method4_program(const ProbabilityVector& p, const ProbabilityVector& target,
                               const std::vector<SubsetDistribution>& table) {
  const std::size_t k = p.size();
  Method4Program out;
  for (std::size_t i = 0; i < k; ++i) {
    for (const auto& [mask, w] : table[i]) {
      if (w <= 0.0) continue;
      for (std::size_t j : mask_members(mask)) out.variables.push_back({i, mask, j});
    }
  }
  const std::size_t n = out.variables.size();
  auto& lp = out.lp;
  lp = lp::LinearProgram(n);
  std::vector<std::vector<double>> coupling(k, unit_row(n));
  std::vector<double> block;
  for (std::size_t c = 0; c < n; ++c) {
    const auto& var = out.variables[c];
    const double w = table[var.source].at(var.subset);
    lp.bounds[c] = {0.0, 1.0};
    if (var.target == var.source) lp.objective[c] = w;
    coupling[var.target][c] = p[var.source] * w;
  }
  for (std::size_t j = 0; j < k; ++j) lp.add_equality(std::move(coupling[j]), target[j]);
  for (std::size_t c = 0; c < n;) {
    auto a = unit_row(n);
    std::size_t e = c;
    while (e < n && out.variables[e].source == out.variables[c].source &&
           out.variables[e].subset == out.variables[c].subset) {
      a[e++] = 1.0;
    }
    lp.add_equality(std::move(a), 1.0);
    c = e;
  }
  return out;
}

std::size_t method4_variable_bound(std::size_t k) { return (std::size_t{1} << k) * k * k; }

Result method4(const ProbabilityVector& p, const ProbabilityVector& target,
               const ReachabilityStats& stats, const Config& cfg) {
  check_pair(p, target);
  cfg.validate(p.size());
  if (p.size() > kMaxClasses) {
    throw Error(ErrorCode::SubsetOverflow, "method 4 supports at most 16 classes");
  }
  check_stats(stats, p.size());
  const auto start = Clock::now();
  const auto table = method4_subset_table(stats, cfg);

  std::size_t n_vars = 0;
  for (const auto& row : table) {
    for (const auto& [mask, w] : row) {
      if (w > 0.0) n_vars += mask_size(mask);
    }
  }
  bool direct = cfg.method4_route == Method4Route::Direct;
  if (cfg.method4_route == Method4Route::Auto) direct = n_vars <= cfg.method4_direct_limit;
  return direct ? method4_direct(p, target, table, start)
                : method4_projected(p, target, table, start);
}

}  // namespace classdrift::synthesis
