#include "classdrift/oracle_attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace classdrift::attacks {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

std::vector<double> to_vector(std::span<const double> x) { return {x.begin(), x.end()}; }

AdversarialExample finish(const AffineClassifier& clf, std::span<const double> x,
                          std::vector<double> x_adv, std::size_t target,
                          const AttackBudget& budget, std::size_t iterations) {
  AdversarialExample out;
  out.x = to_vector(x);
  out.v.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out.v[i] = x_adv[i] - x[i];
  out.predicted = clf.predict(x_adv);
  out.distortion = distance(x, x_adv, budget.norm);
  out.success = out.predicted == target && out.distortion <= budget.epsilon;
  out.target = target;
  out.iterations = iterations;
  out.x_adv = std::move(x_adv);
  return out;
}

void check_target(const AffineClassifier& clf, std::size_t target) {
  if (target >= clf.classes()) {
    throw Error(ErrorCode::DimensionMismatch, "target class out of range");
  }
}

}  // namespace

std::string_view to_string(Norm norm) noexcept { return norm == Norm::L2 ? "l2" : "linf"; }

std::string_view to_string(AttackKind kind) noexcept {
  switch (kind) {
    case AttackKind::DeepFool: return "deepfool";
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Pgd: return "pgd";
    case AttackKind::CarliniWagner: return "cw";
  }
  return "unknown";
}

AttackKind parse_attack(std::string_view name) {
  for (auto kind : {AttackKind::DeepFool, AttackKind::Fgsm, AttackKind::Pgd,
                    AttackKind::CarliniWagner}) {
    if (name == to_string(kind)) return kind;
  }
  throw Error(ErrorCode::Parse, "unknown attack '" + std::string(name) +
                                    "' (expected deepfool, fgsm, pgd or cw)");
}

Norm default_norm(AttackKind kind) noexcept {
  return kind == AttackKind::Fgsm || kind == AttackKind::Pgd ? Norm::LInf : Norm::L2;
}

AttackBudget AttackBudget::for_attack(AttackKind kind, double epsilon) {
  AttackBudget b{epsilon, default_norm(kind), 30};
  b.validate();
  return b;
}

void AttackBudget::validate() const {
  if (!(epsilon >= 0.0)) throw Error(ErrorCode::Malformed, "epsilon must be non-negative");
  if (max_iters < 1) throw Error(ErrorCode::Malformed, "max_iters must be at least 1");
}

double distance(std::span<const double> a, std::span<const double> b, Norm norm) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "vector lengths differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    acc = norm == Norm::L2 ? acc + d * d : std::max(acc, d);
  }
  return norm == Norm::L2 ? std::sqrt(acc) : acc;
}

AffineClassifier::AffineClassifier(DenseMatrix weights, std::vector<double> bias)
    : w_(std::move(weights)), b_(std::move(bias)) {
  if (w_.rows < 2 || w_.cols < 1) {
    throw Error(ErrorCode::Malformed, "classifier needs at least 2 classes and 1 input");
  }
  if (w_.rows > kMaxClasses) throw Error(ErrorCode::SubsetOverflow, "too many classes");
  if (b_.size() != w_.rows) {
    throw Error(ErrorCode::DimensionMismatch, "bias length differs from class count");
  }
  for (double v : w_.data) {
    if (!std::isfinite(v)) throw Error(ErrorCode::Malformed, "non-finite weight");
  }
  for (double v : b_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::Malformed, "non-finite bias");
  }
}

void AffineClassifier::check_input(std::span<const double> x) const {
  if (x.size() != dims()) {
    throw Error(ErrorCode::DimensionMismatch, "input has " + std::to_string(x.size()) +
                                                  " entries, classifier expects " +
                                                  std::to_string(dims()));
  }
}

std::vector<double> AffineClassifier::logits(std::span<const double> x) const {
  check_input(x);
  std::vector<double> out(b_);
  for (std::size_t j = 0; j < classes(); ++j) {
    for (std::size_t i = 0; i < dims(); ++i) out[j] += w_(j, i) * x[i];
  }
  return out;
}

std::size_t AffineClassifier::predict(std::span<const double> x) const {
  const auto f = logits(x);
  return static_cast<std::size_t>(std::max_element(f.begin(), f.end()) - f.begin());
}

double AffineClassifier::cross_entropy(std::span<const double> x, std::size_t target) const {
  const auto f = logits(x);
  const double top = *std::max_element(f.begin(), f.end());
  double sum = 0.0;
  for (double v : f) sum += std::exp(v - top);
  return top + std::log(sum) - f.at(target);
}

std::vector<double> AffineClassifier::cross_entropy_gradient(std::span<const double> x,
                                                             std::size_t target) const {
  auto s = logits(x);
  const double top = *std::max_element(s.begin(), s.end());
  double sum = 0.0;
  for (double& v : s) {
    v = std::exp(v - top);
    sum += v;
  }
  for (double& v : s) v /= sum;
  s.at(target) -= 1.0;
  std::vector<double> grad(dims(), 0.0);
  for (std::size_t j = 0; j < classes(); ++j) {
    for (std::size_t i = 0; i < dims(); ++i) grad[i] += w_(j, i) * s[j];
  }
  return grad;
}

AdversarialExample targeted_deepfool(const AffineClassifier& clf, std::span<const double> x,
                                     std::size_t target, const AttackBudget& budget,
                                     double overshoot) {
  budget.validate();
  check_target(clf, target);
  const std::size_t origin = clf.predict(x);
  const std::size_t d = clf.dims();
  const auto& w = clf.weights();

  std::vector<double> dir(d);
  double dir_norm2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    dir[i] = w(target, i) - w(origin, i);
    dir_norm2 += dir[i] * dir[i];
  }

  std::vector<double> total(d, 0.0);
  std::vector<double> x_adv = to_vector(x);
  std::size_t iters = 0;
  while (iters < budget.max_iters && clf.predict(x_adv) != target && dir_norm2 > 0.0) {
    const auto f = clf.logits(x_adv);
    const double gap = std::abs(f[target] - f[origin]);
    for (std::size_t i = 0; i < d; ++i) total[i] += gap / dir_norm2 * dir[i];
    for (std::size_t i = 0; i < d; ++i) x_adv[i] = x[i] + overshoot * total[i];
    ++iters;
  }
  return finish(clf, x, std::move(x_adv), target, budget, iters);
}

AdversarialExample targeted_fgsm(const AffineClassifier& clf, std::span<const double> x,
                                 std::size_t target, const AttackBudget& budget) {
  budget.validate();
  check_target(clf, target);
  const auto grad = clf.cross_entropy_gradient(x, target);
  std::vector<double> x_adv(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    x_adv[i] = std::clamp(x[i] - budget.epsilon * sign(grad[i]), 0.0, 1.0);
  }
  return finish(clf, x, std::move(x_adv), target, budget, 1);
}

AdversarialExample targeted_pgd(const AffineClassifier& clf, std::span<const double> x,
                                std::size_t target, const AttackBudget& budget,
                                double step_alpha, std::vector<std::vector<double>>* trace) {
  budget.validate();
  check_target(clf, target);
  if (!(step_alpha > 0.0)) throw Error(ErrorCode::Malformed, "PGD step must be positive");
  const double eps = budget.epsilon;
  std::vector<double> x_adv = to_vector(x);
  std::size_t iters = 0;
  while (iters < budget.max_iters) {
    const auto grad = clf.cross_entropy_gradient(x_adv, target);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double moved = x_adv[i] - step_alpha * sign(grad[i]);
      x_adv[i] = std::clamp(std::clamp(moved, x[i] - eps, x[i] + eps), 0.0, 1.0);
    }
    ++iters;
    if (trace) trace->push_back(x_adv);
    if (clf.predict(x_adv) == target) break;
  }
  return finish(clf, x, std::move(x_adv), target, budget, iters);
}

AdversarialExample targeted_cw(const AffineClassifier& clf, std::span<const double> x,
                               std::size_t target, const AttackBudget& budget,
                               const CwOptions& options) {
  budget.validate();
  check_target(clf, target);
  if (options.binary_search_steps < 1 || options.opt_steps < options.binary_search_steps) {
    throw Error(ErrorCode::Malformed, "C&W needs at least one step per search round");
  }
  const std::size_t d = clf.dims();
  const auto& w = clf.weights();
  for (double v : x) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::Malformed, "C&W input outside [0,1]");
  }

  // Pull the endpoints in slightly so atanh stays finite on box corners.
  std::vector<double> w0(d);
  for (std::size_t i = 0; i < d; ++i) w0[i] = std::atanh((2.0 * x[i] - 1.0) * (1.0 - 1e-6));

  std::optional<std::vector<double>> best;
  double best_dist = std::numeric_limits<double>::infinity();
  std::vector<double> last = to_vector(x);
  double lo = options.c_min;
  double hi = options.c_max;
  std::size_t used = 0;

  for (std::size_t round = 0; round < options.binary_search_steps; ++round) {
    const double c = std::sqrt(lo * hi);
    std::size_t steps = options.opt_steps / options.binary_search_steps;
    if (round == 0) steps += options.opt_steps % options.binary_search_steps;
    auto wv = w0;
    std::vector<double> xp(d), th(d), grad(d);
    bool found = false;
    for (std::size_t s = 0; s < steps; ++s) {
      for (std::size_t i = 0; i < d; ++i) {
        th[i] = std::tanh(wv[i]);
        xp[i] = 0.5 * (th[i] + 1.0);
      }
      const auto f = clf.logits(xp);
      std::size_t rival = target == 0 ? 1 : 0;
      for (std::size_t j = 0; j < f.size(); ++j) {
        if (j != target && f[j] > f[rival]) rival = j;
      }
      const bool active = f[rival] - f[target] > -options.kappa;
      for (std::size_t i = 0; i < d; ++i) {
        double g = 2.0 * (xp[i] - x[i]);
        if (active) g += c * (w(rival, i) - w(target, i));
        grad[i] = g * 0.5 * (1.0 - th[i] * th[i]);
      }
      for (std::size_t i = 0; i < d; ++i) wv[i] -= options.step * grad[i];
      ++used;

      for (std::size_t i = 0; i < d; ++i) xp[i] = 0.5 * (std::tanh(wv[i]) + 1.0);
      if (clf.predict(xp) == target) {
        found = true;
        const double dist = distance(x, xp, Norm::L2);
        if (dist < best_dist) {
          best_dist = dist;
          best = xp;
        }
      }
    }
    last = xp;
    (found ? hi : lo) = c;
  }
  return finish(clf, x, best ? std::move(*best) : std::move(last), target, budget, used);
}

AdversarialExample run_attack(AttackKind kind, const AffineClassifier& clf,
                              std::span<const double> x, std::size_t target,
                              const AttackBudget& budget, const AttackOptions& options) {
  switch (kind) {
    case AttackKind::DeepFool:
      return targeted_deepfool(clf, x, target, budget, options.overshoot);
    case AttackKind::Fgsm:
      return targeted_fgsm(clf, x, target, budget);
    case AttackKind::Pgd: {
      double alpha = options.pgd_alpha;
      if (alpha <= 0.0) alpha = budget.epsilon > 0.0 ? budget.epsilon / 4.0 : 1.0;
      return targeted_pgd(clf, x, target, budget, alpha);
    }
    case AttackKind::CarliniWagner:
      return targeted_cw(clf, x, target, budget, options.cw);
  }
  throw Error(ErrorCode::Malformed, "unknown attack");
}

Probe probe_classifier(const AffineClassifier& clf, std::span<const double> x,
                       std::size_t source, AttackKind kind, const AttackBudget& budget,
                       const AttackOptions& options) {
  const std::size_t k = clf.classes();
  if (source >= k) throw Error(ErrorCode::DimensionMismatch, "source class out of range");
  ClassMask mask = class_bit(source);
  std::vector<std::optional<AdversarialExample>> examples(k);
  for (std::size_t j = 0; j < k; ++j) {
    if (j == source) continue;
    auto ex = run_attack(kind, clf, x, j, budget, options);
    if (ex.success) {
      mask |= class_bit(j);
      examples[j] = std::move(ex);
    }
  }
  return {ReachableSet(mask, source), std::move(examples)};
}

SyntheticOracle::SyntheticOracle(std::vector<SubsetDistribution> table, std::uint64_t seed)
    : table_(std::move(table)), rng_(seed, "oracle") {
  const std::size_t k = table_.size();
  if (k < 2) throw Error(ErrorCode::Malformed, "oracle needs at least two classes");
  if (k > kMaxClasses) throw Error(ErrorCode::SubsetOverflow, "too many classes");
  for (std::size_t i = 0; i < k; ++i) {
    double sum = 0.0;
    for (const auto& [mask, prob] : table_[i]) {
      if (!mask_contains(mask, i) || (mask & ~full_mask(k)) != 0) {
        throw Error(ErrorCode::Malformed, "oracle subset for class " + std::to_string(i) +
                                              " must contain it and name known classes");
      }
      if (!(prob >= 0.0)) throw Error(ErrorCode::NegativeEntry, "negative subset probability");
      sum += prob;
    }
    if (std::abs(sum - 1.0) > kDistributionTolerance) {
      throw Error(ErrorCode::SumNotOne,
                  "oracle subset probabilities for class " + std::to_string(i) +
                      " sum to " + std::to_string(sum));
    }
  }
}

ReachableSet SyntheticOracle::sample(std::size_t source, double u) const {
  const auto& row = table_.at(source);
  double acc = 0.0;
  ClassMask last = class_bit(source);
  for (const auto& [mask, prob] : row) {
    if (prob <= 0.0) continue;
    acc += prob;
    last = mask;
    if (u < acc) return ReachableSet(mask, source);
  }
  return ReachableSet(last, source);
}

ReachabilityStats SyntheticOracle::exact_stats() const {
  const std::size_t k = classes();
  ReachabilityStats stats;
  stats.k = k;
  stats.counts = DenseMatrix(k, k);
  stats.per_class_n.assign(k, 1);
  stats.subset_table = table_;
  stats.subset_counts.assign(k, {});
  for (std::size_t i = 0; i < k; ++i) {
    for (const auto& [mask, prob] : table_[i]) {
      for (std::size_t j : mask_members(mask)) stats.counts(i, j) += prob;
    }
  }
  return stats;
}

SyntheticOracle SyntheticOracle::independent(std::size_t k, double reach, std::uint64_t seed) {
  if (!(reach >= 0.0 && reach <= 1.0)) {
    throw Error(ErrorCode::Malformed, "reach probability must lie in [0, 1]");
  }
  if (k < 2 || k > kMaxClasses) throw Error(ErrorCode::SubsetOverflow, "bad class count");
  std::vector<SubsetDistribution> table(k);
  for (std::size_t i = 0; i < k; ++i) {
    const ClassMask others = full_mask(k) & ~class_bit(i);
    ClassMask sub = others;
    while (true) {
      const auto hits = static_cast<int>(mask_size(sub));
      const auto misses = static_cast<int>(k - 1) - hits;
      const double prob = std::pow(reach, hits) * std::pow(1.0 - reach, misses);
      if (prob > 0.0) table[i][sub | class_bit(i)] = prob;
      if (sub == 0) break;
      sub = (sub - 1) & others;
    }
    // Products of powers drift by a few ulps; renormalize.
    double sum = 0.0;
    for (const auto& [m, p] : table[i]) sum += p;
    for (auto& [m, p] : table[i]) p /= sum;
  }
  return SyntheticOracle(std::move(table), seed);
}

SyntheticOracle SyntheticOracle::full(std::size_t k, std::uint64_t seed) {
  std::vector<SubsetDistribution> table(k);
  for (std::size_t i = 0; i < k; ++i) table[i][full_mask(k)] = 1.0;
  return SyntheticOracle(std::move(table), seed);
}

}  // namespace classdrift::attacks
