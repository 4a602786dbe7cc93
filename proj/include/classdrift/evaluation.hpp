#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "classdrift/core_types.hpp"
#include "classdrift/oracle_attacks.hpp"
#include "classdrift/pipeline.hpp"
#include "classdrift/synthesis.hpp"

namespace classdrift::evaluation {

inline constexpr double kKlFloor = 1e-12;

struct KlResult {
  double value = 0.0;
  bool floored = false;  // some q_j was 0 where p_j > 0
};

// sum_j p_j ln(p_j / q_j) in nats.
KlResult kl_divergence(std::span<const double> p, std::span<const double> q);

// Pearson correlation of average ranks.  Throws Error{DegenerateRanks} when
// either input is constant.
double spearman(std::span<const double> p, std::span<const double> q);

struct AbsDiffs {
  double max = 0.0;
  double mean = 0.0;
};
AbsDiffs abs_diffs(std::span<const double> p, std::span<const double> q);

// Peak perturbation level relative to the peak signal level, in dB.  Zero
// entries are ignored; throws Error{AllZero} if either vector is all zero.
double db_distortion(std::span<const double> x, std::span<const double> v);

// The distribution of predicted classes the pipeline induces on average,
// enumerating every reachable subset exactly.
std::vector<double> expected_distribution(const TransitionMatrix& t,
                                          const ReachabilityStats& stats,
                                          const ProbabilityVector& p,
                                          pipeline::Fallback fallback = pipeline::Fallback::StayPut);

// n flat Dirichlet draws, draw i from the stream ("dirichlet", i).
std::vector<ProbabilityVector> sample_dirichlet_targets(std::size_t k, std::size_t n,
                                                        std::uint64_t seed);

struct MetricReport {
  double kl = 0.0;
  bool kl_floored = false;
  std::optional<double> spearman;  // empty when ranks are degenerate
  double max_abs_diff = 0.0;
  double mean_abs_diff = 0.0;
  double fooling_rate = 0.0;
  double max_fooling_rate = 0.0;
};

// Compares the induced distribution against the desired one (KL of the
// target against the induced distribution).
MetricReport compare(const ProbabilityVector& target, std::span<const double> induced,
                     double fooling_rate, double max_fooling_rate);

// A synthesis method with its ablation switches.
struct MethodVariant {
  int method = 1;
  bool strict = false;            // method 2: no eta relaxation
  bool laplace = true;            // method 4
  bool zero_singleton = true;     // method 4

  // "1", "2", "2:strict", "3", "4", "4:no-laplace", "4:no-zero",
  // "4:no-laplace+no-zero".  Throws Error{Parse}.
  static MethodVariant parse(std::string_view text);
  std::string label() const;    // inverse of parse
  std::string variant() const;  // the part after ':' or "default"
  synthesis::Config config(double xi) const;
  synthesis::Result run(const ProbabilityVector& p, const ProbabilityVector& target,
                        const ReachabilityStats& stats, double xi) const;

  friend bool operator==(const MethodVariant&, const MethodVariant&) = default;
};

struct ExperimentPlan {
  std::size_t k = 12;
  std::vector<double> epsilons{0.01};
  std::size_t n_targets = 100;
  std::size_t n_repeats = 50;
  std::size_t folds = 2;
  std::vector<std::size_t> samples_per_class{500};
  std::vector<MethodVariant> methods;
  std::uint64_t seed = 0;
  double xi = 0.01;
  pipeline::Fallback fallback = pipeline::Fallback::StayPut;

  // Throws Error{Malformed} or Error{PlanInfeasible}.
  void validate() const;
};

// Where reachable sets come from.  The oracle ignores epsilon; the classifier
// backend draws inputs uniformly from [0,1]^d and attacks them.
struct ExperimentBackend {
  std::optional<attacks::SyntheticOracle> oracle;
  std::optional<attacks::AffineClassifier> classifier;
  attacks::AttackKind attack = attacks::AttackKind::DeepFool;
  attacks::AttackOptions options;
  // Uniform draws allowed per requested input before giving up on a class.
  std::size_t draws_per_input = 2000;

  std::size_t classes() const;
};

struct ExperimentOptions {
  std::size_t jobs = 1;
  bool timing = false;  // fill wall_ms; makes the CSV non-reproducible
  std::function<void(const std::string&)> progress;
};

struct TrialRow {
  MethodVariant method;
  std::size_t n_per_class = 0;
  double epsilon = 0.0;
  std::size_t target_id = 0;
  std::size_t repeat = 0;
  std::size_t fold = 0;
  bool optimal = false;
  std::optional<MetricReport> metrics;
  std::size_t lp_vars = 0;
  double wall_ms = 0.0;
};

struct MetricMeans {
  std::size_t count = 0;
  double kl = 0.0;
  std::size_t kl_floored = 0;
  std::optional<double> spearman;
  double max_abs_diff = 0.0;
  double mean_abs_diff = 0.0;
  double fooling_rate = 0.0;
  double max_fooling_rate = 0.0;
};

struct CellSummary {
  MethodVariant method;
  std::size_t n_per_class = 0;
  double epsilon = 0.0;
  std::size_t trials = 0;
  std::size_t successful_trials = 0;
  double success_pct = 0.0;
  std::size_t folds_total = 0;
  std::size_t folds_optimal = 0;
  MetricMeans per_trial;  // folds of trials where every fold succeeded
  MetricMeans per_fold;   // every optimal fold
  double lp_vars = 0.0;   // mean over optimal folds
};

struct ExperimentResult {
  std::vector<TrialRow> rows;
  std::vector<CellSummary> cells;
  bool timing = false;
};

ExperimentResult run_experiment(const ExperimentPlan& plan, const ExperimentBackend& backend,
                                const ExperimentOptions& options = {});

inline constexpr std::string_view kCsvHeader =
    "method,variant,epsilon,target_id,repeat,fold,status,kl,spearman,max_abs_diff,"
    "mean_abs_diff,fooling_rate,max_fooling_rate,lp_vars,wall_ms,n_per_class,success_pct";

// One row per fold, then one aggregate row per cell.
void write_csv(std::ostream& out, const ExperimentResult& result);

}  // namespace classdrift::evaluation
