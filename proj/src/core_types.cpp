#include "classdrift/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace classdrift {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NegativeEntry: return "NegativeEntry";
    case ErrorCode::SumNotOne: return "SumNotOne";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::Malformed: return "Malformed";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::SubsetOverflow: return "SubsetOverflow";
    case ErrorCode::DegenerateRanks: return "DegenerateRanks";
    case ErrorCode::AllZero: return "AllZero";
    case ErrorCode::PlanInfeasible: return "PlanInfeasible";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::Parse: return "Parse";
  }
  return "Unknown";
}

std::vector<std::size_t> mask_members(ClassMask mask) {
  std::vector<std::size_t> out;
  out.reserve(mask_size(mask));
  while (mask != 0) {
    out.push_back(static_cast<std::size_t>(std::countr_zero(mask)));
    mask &= mask - 1;
  }
  return out;
}

ClassMask mask_from_members(std::span<const std::size_t> members) {
  ClassMask mask = 0;
  for (std::size_t j : members) {
    if (j >= kMaxClasses) {
      throw Error(ErrorCode::SubsetOverflow,
                  "class index " + std::to_string(j) + " exceeds the class cap");
    }
    mask |= class_bit(j);
  }
  return mask;
}

ClassSet::ClassSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.size() < 2) {
    throw Error(ErrorCode::Malformed, "a class set needs at least two classes");
  }
  if (labels_.size() > kMaxClasses) {
    throw Error(ErrorCode::SubsetOverflow,
                "at most " + std::to_string(kMaxClasses) + " classes are supported");
  }
  std::set<std::string_view> seen(labels_.begin(), labels_.end());
  if (seen.size() != labels_.size()) {
    throw Error(ErrorCode::Malformed, "class labels must be unique");
  }
}

ClassSet ClassSet::numbered(std::size_t k) {
  std::vector<std::string> labels(k);
  for (std::size_t i = 0; i < k; ++i) labels[i] = std::to_string(i);
  return ClassSet(std::move(labels));
}

std::optional<std::size_t> ClassSet::index_of(std::string_view label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - labels_.begin());
}

ProbabilityVector ProbabilityVector::validate(std::span<const double> p) {
  if (p.empty()) {
    throw Error(ErrorCode::Malformed, "distribution is empty");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (!std::isfinite(p[j])) {
      throw Error(ErrorCode::Malformed,
                  "entry " + std::to_string(j) + " is not a finite number");
    }
    if (p[j] < 0.0) {
      throw Error(ErrorCode::NegativeEntry,
                  "entry " + std::to_string(j) + " is negative");
    }
    sum += p[j];
  }
  if (std::abs(sum - 1.0) > kDistributionTolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "entries sum to " << sum << ", not 1";
    throw Error(ErrorCode::SumNotOne, msg.str());
  }
  return ProbabilityVector({p.begin(), p.end()});
}

ProbabilityVector ProbabilityVector::uniform(std::size_t k) {
  if (k == 0) throw Error(ErrorCode::Malformed, "distribution is empty");
  return ProbabilityVector(std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

ProbabilityVector ProbabilityVector::renormalize(std::span<const double> weights) {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw Error(ErrorCode::NegativeEntry, "weights must be finite and non-negative");
    }
    sum += w;
  }
  if (sum <= 0.0) {
    throw Error(ErrorCode::SumNotOne, "weights have zero total mass");
  }
  std::vector<double> p(weights.begin(), weights.end());
  for (double& v : p) v /= sum;
  return ProbabilityVector(std::move(p));
}

ProbabilityVector validate_distribution(std::span<const double> p) {
  return ProbabilityVector::validate(p);
}

TransitionMatrix TransitionMatrix::validate(const DenseMatrix& t) {
  if (t.rows == 0 || t.rows != t.cols || t.data.size() != t.rows * t.cols) {
    throw Error(ErrorCode::DimensionMismatch, "transition matrix must be square");
  }
  for (std::size_t i = 0; i < t.rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < t.cols; ++j) {
      double v = t(i, j);
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw Error(ErrorCode::NegativeEntry,
                    "entry (" + std::to_string(i) + ", " + std::to_string(j) +
                        ") is outside [0, 1]");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      throw Error(ErrorCode::SumNotOne,
                  "row " + std::to_string(i) + " does not sum to 1");
    }
  }
  return TransitionMatrix(t);
}

TransitionMatrix TransitionMatrix::from_rows(
    const std::vector<std::vector<double>>& rows) {
  const std::size_t k = rows.size();
  DenseMatrix t(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    if (rows[i].size() != k) {
      throw Error(ErrorCode::DimensionMismatch, "transition matrix must be square");
    }
    std::copy(rows[i].begin(), rows[i].end(), t.row(i).begin());
  }
  return validate(t);
}

TransitionMatrix TransitionMatrix::identity(std::size_t k) {
  DenseMatrix t(k, k);
  for (std::size_t i = 0; i < k; ++i) t(i, i) = 1.0;
  return TransitionMatrix(std::move(t));
}

std::vector<std::vector<double>> TransitionMatrix::rows() const {
  std::vector<std::vector<double>> out(size());
  for (std::size_t i = 0; i < size(); ++i) {
    auto r = row(i);
    out[i].assign(r.begin(), r.end());
  }
  return out;
}

ReachableSet::ReachableSet(ClassMask mask, std::size_t source)
    : mask_(mask), source_(source) {
  if (source >= kMaxClasses) {
    throw Error(ErrorCode::SubsetOverflow, "source class exceeds the class cap");
  }
  if (!mask_contains(mask, source)) {
    throw Error(ErrorCode::Malformed,
                "reachable set must contain its source class " +
                    std::to_string(source));
  }
}

std::vector<std::size_t> ReachabilityStats::empty_classes() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < per_class_n.size(); ++i) {
    if (per_class_n[i] == 0) out.push_back(i);
  }
  return out;
}

ReachabilityStats stats_from_subset_counts(
    std::size_t k, const std::vector<std::map<ClassMask, std::size_t>>& counts) {
  if (counts.size() != k) {
    throw Error(ErrorCode::DimensionMismatch, "one subset-count row per class expected");
  }
  if (k > kMaxClasses) {
    throw Error(ErrorCode::SubsetOverflow, "too many classes");
  }
  ReachabilityStats stats;
  stats.k = k;
  stats.counts = DenseMatrix(k, k);
  stats.per_class_n.assign(k, 0);
  stats.subset_table.assign(k, {});
  stats.subset_counts = counts;
  for (std::size_t i = 0; i < k; ++i) {
    for (const auto& [mask, n] : counts[i]) {
      if (!mask_contains(mask, i) || (mask & ~full_mask(k)) != 0) {
        throw Error(ErrorCode::Malformed, "subset does not contain its source class "
                                          "or names an unknown class");
      }
      stats.per_class_n[i] += n;
      for (std::size_t j : mask_members(mask)) {
        stats.counts(i, j) += static_cast<double>(n);
      }
    }
    if (stats.per_class_n[i] == 0) continue;
    const double total = static_cast<double>(stats.per_class_n[i]);
    for (const auto& [mask, n] : counts[i]) {
      if (n > 0) stats.subset_table[i][mask] = static_cast<double>(n) / total;
    }
  }
  return stats;
}

ReachabilityStats tally_records(std::span<const ReachabilityRecord> records,
                                const ClassSet& classes) {
  const std::size_t k = classes.size();
  std::vector<std::map<ClassMask, std::size_t>> counts(k);
  for (const auto& rec : records) {
    if (rec.true_class >= k || (rec.reachable.mask() & ~full_mask(k)) != 0) {
      throw Error(ErrorCode::DimensionMismatch,
                  "record '" + rec.id + "' names a class outside the class set");
    }
    if (rec.reachable.source() != rec.true_class) {
      throw Error(ErrorCode::Malformed,
                  "record '" + rec.id + "' reachable set has a different source");
    }
    ++counts[rec.true_class][rec.reachable.mask()];
  }
  return stats_from_subset_counts(k, counts);
}

ReachabilityStats stats_from_records(std::span<const ReachabilityRecord> records,
                                     const ClassSet& classes) {
  auto stats = tally_records(records, classes);
  auto empty = stats.empty_classes();
  if (!empty.empty()) {
    throw Error(ErrorCode::EmptyClass,
                "class " + classes.label(empty.front()) + " has no records");
  }
  return stats;
}

Proportions normalize_proportions(const ReachabilityStats& stats) {
  const std::size_t k = stats.k;
  DenseMatrix r_prime(k, k);
  DenseMatrix r_hat(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    if (stats.per_class_n[i] == 0) {
      throw Error(ErrorCode::EmptyClass, "class " + std::to_string(i) + " has no samples");
    }
    const double n = static_cast<double>(stats.per_class_n[i]);
    double row_sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) row_sum += stats.counts(i, j);
    for (std::size_t j = 0; j < k; ++j) {
      r_prime(i, j) = stats.counts(i, j) / n;
      r_hat(i, j) = stats.counts(i, j) / row_sum;
    }
  }
  return {std::move(r_prime), TransitionMatrix::validate(r_hat)};
}

}  // namespace classdrift
