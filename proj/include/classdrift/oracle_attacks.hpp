#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "classdrift/core_types.hpp"
#include "classdrift/random.hpp"

namespace classdrift::attacks {

enum class Norm { L2, LInf };
enum class AttackKind { DeepFool, Fgsm, Pgd, CarliniWagner };

std::string_view to_string(Norm norm) noexcept;
std::string_view to_string(AttackKind kind) noexcept;
// Accepts "deepfool", "fgsm", "pgd", "cw".  Throws Error{Parse}.
AttackKind parse_attack(std::string_view name);

// DeepFool and C&W are measured in l2, FGSM and PGD in l-infinity.
Norm default_norm(AttackKind kind) noexcept;

struct AttackBudget {
  double epsilon = 0.0;
  Norm norm = Norm::L2;
  std::size_t max_iters = 30;

  static AttackBudget for_attack(AttackKind kind, double epsilon);
  void validate() const;
};

double distance(std::span<const double> a, std::span<const double> b, Norm norm);

// logits = W x + b on inputs in [0, 1]^d.
class AffineClassifier {
 public:
  AffineClassifier(DenseMatrix weights, std::vector<double> bias);

  std::size_t classes() const noexcept { return w_.rows; }
  std::size_t dims() const noexcept { return w_.cols; }
  const DenseMatrix& weights() const noexcept { return w_; }
  const std::vector<double>& bias() const noexcept { return b_; }

  std::vector<double> logits(std::span<const double> x) const;
  // Argmax of the logits; ties go to the lowest index.
  std::size_t predict(std::span<const double> x) const;
  // -log softmax(logits)[target]
  double cross_entropy(std::span<const double> x, std::size_t target) const;
  // Gradient of cross_entropy with respect to x: W^T (softmax - e_target).
  std::vector<double> cross_entropy_gradient(std::span<const double> x,
                                             std::size_t target) const;

 private:
  void check_input(std::span<const double> x) const;

  DenseMatrix w_;
  std::vector<double> b_;
};

struct AdversarialExample {
  std::vector<double> x;
  std::vector<double> x_adv;
  std::vector<double> v;  // x_adv - x
  std::size_t target = 0;
  std::size_t predicted = 0;
  bool success = false;  // predicted == target and distortion <= epsilon
  double distortion = 0.0;
  std::size_t iterations = 0;
};

struct CwOptions {
  double kappa = 0.0;
  std::size_t binary_search_steps = 9;
  std::size_t opt_steps = 1000;  // total across the binary search
  double step = 0.01;
  double c_min = 1e-3;
  double c_max = 1e6;
};

struct AttackOptions {
  double overshoot = 1.02;  // DeepFool
  double pgd_alpha = 0.0;   // 0 selects epsilon / 4
  CwOptions cw;
};

AdversarialExample targeted_deepfool(const AffineClassifier& clf, std::span<const double> x,
                                     std::size_t target, const AttackBudget& budget,
                                     double overshoot = 1.02);
AdversarialExample targeted_fgsm(const AffineClassifier& clf, std::span<const double> x,
                                 std::size_t target, const AttackBudget& budget);
// `trace`, when given, receives every iterate.
AdversarialExample targeted_pgd(const AffineClassifier& clf, std::span<const double> x,
                                std::size_t target, const AttackBudget& budget,
                                double step_alpha,
                                std::vector<std::vector<double>>* trace = nullptr);
AdversarialExample targeted_cw(const AffineClassifier& clf, std::span<const double> x,
                               std::size_t target, const AttackBudget& budget,
                               const CwOptions& options = {});

AdversarialExample run_attack(AttackKind kind, const AffineClassifier& clf,
                              std::span<const double> x, std::size_t target,
                              const AttackBudget& budget, const AttackOptions& options = {});

// Reachability of one input, with the successful perturbation per target.
struct Probe {
  ReachableSet reachable;
  std::vector<std::optional<AdversarialExample>> examples;  // indexed by target
};

// Attacks every class other than `source`; a class is reachable when the
// attack succeeds within the budget.
Probe probe_classifier(const AffineClassifier& clf, std::span<const double> x,
                       std::size_t source, AttackKind kind, const AttackBudget& budget,
                       const AttackOptions& options = {});

// Ground-truth reachability: each input of class i reaches subset S with
// probability table[i][S].
class SyntheticOracle {
 public:
  explicit SyntheticOracle(std::vector<SubsetDistribution> table, std::uint64_t seed = 0);

  std::size_t classes() const noexcept { return table_.size(); }
  const std::vector<SubsetDistribution>& table() const noexcept { return table_; }

  // Inverse-CDF draw over the subsets of `source` in mask order, u in [0, 1).
  ReachableSet sample(std::size_t source, double u) const;
  // Draw from the oracle's own stream.
  ReachableSet draw(std::size_t source) { return sample(source, rng_.uniform()); }

  // Stats whose subset table is the oracle's table exactly.  Counts hold
  // expected reach frequencies per unit sample.
  ReachabilityStats exact_stats() const;

  // Every off-diagonal class is reachable independently with probability
  // `reach`.
  static SyntheticOracle independent(std::size_t k, double reach, std::uint64_t seed = 0);
  // Every input reaches every class.
  static SyntheticOracle full(std::size_t k, std::uint64_t seed = 0);

 private:
  std::vector<SubsetDistribution> table_;
  RandomStream rng_;
};

}  // namespace classdrift::attacks
