#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "classdrift/core_types.hpp"
#include "classdrift/oracle_attacks.hpp"

namespace classdrift::pipeline {

// What to do when every reachable class has zero probability in the row.
enum class Fallback {
  StayPut,           // all mass on the source class
  UniformReachable,  // spread evenly over the reachable set
};

// Restricts a transition row to the reachable classes and renormalizes.
std::vector<double> renormalize_row(std::span<const double> row, const ReachableSet& reachable,
                                    Fallback fallback = Fallback::StayPut);

// Inverse-CDF draw; u in [0, 1).  Never returns an index with zero mass.
std::size_t sample_index(std::span<const double> probs, double u);

struct OracleBackend {
  const attacks::SyntheticOracle* oracle = nullptr;
};

struct ClassifierBackend {
  const attacks::AffineClassifier* classifier = nullptr;
  attacks::AttackKind attack = attacks::AttackKind::DeepFool;
  attacks::AttackBudget budget;
  attacks::AttackOptions options;
};

using Backend = std::variant<OracleBackend, ClassifierBackend>;

std::size_t backend_classes(const Backend& backend);

struct Sample {
  std::string id;
  std::size_t true_class = 0;
  std::vector<double> x;  // empty for the oracle backend
};

struct PipelineRun {
  TransitionMatrix matrix;
  std::uint64_t seed = 0;
  Fallback fallback = Fallback::StayPut;
};

struct AttackOutcome {
  std::string id;
  std::size_t true_class = 0;
  ReachableSet reachable = ReachableSet::only_source(0);
  std::size_t target = 0;
  std::size_t predicted = 0;
  bool fooled = false;
  std::optional<double> distortion;    // classifier backend only
  std::vector<double> x_adv;           // classifier backend only
};

// Sample `index` draws from the streams ("reach", index) and ("target", index)
// of the run seed, so results do not depend on batch partitioning.
AttackOutcome attack_one(const Sample& sample, std::size_t index, const PipelineRun& run,
                         const Backend& backend);

struct BatchResult {
  std::vector<AttackOutcome> outcomes;  // in sample order
  std::vector<double> empirical;        // fraction predicted as each class
  double fooling_rate = 0.0;
  double max_fooling_rate = 0.0;  // fraction whose reachable set leaves the source
};

BatchResult run_batch(const std::vector<Sample>& samples, const PipelineRun& run,
                      const Backend& backend, std::size_t jobs = 1);

// Oracle samples with classes drawn from `p` on the ("class", i) streams.
std::vector<Sample> oracle_samples(const ProbabilityVector& p, std::size_t n,
                                   std::uint64_t seed);

}  // namespace classdrift::pipeline
