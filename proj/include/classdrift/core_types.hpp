#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "classdrift/error.hpp"

namespace classdrift {

// Reachable sets are bitmasks, so the class count is capped.  Subset
// enumeration is 2^k per source class, which stays tractable at this size.
inline constexpr std::size_t kMaxClasses = 16;

inline constexpr double kDistributionTolerance = 1e-9;
inline constexpr double kRowSumTolerance = 1e-7;

using ClassMask = std::uint32_t;

constexpr ClassMask class_bit(std::size_t j) { return ClassMask{1} << j; }
constexpr ClassMask full_mask(std::size_t k) { return (ClassMask{1} << k) - 1; }
constexpr bool mask_contains(ClassMask mask, std::size_t j) {
  return (mask >> j) & 1U;
}
inline std::size_t mask_size(ClassMask mask) {
  return static_cast<std::size_t>(std::popcount(mask));
}
std::vector<std::size_t> mask_members(ClassMask mask);
ClassMask mask_from_members(std::span<const std::size_t> members);

// Row-major dense matrix of doubles.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return data[i * cols + j];
  }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
};

class ClassSet {
 public:
  explicit ClassSet(std::vector<std::string> labels);

  // Classes labelled "0", "1", ..., "k-1".
  static ClassSet numbered(std::size_t k);

  std::size_t size() const noexcept { return labels_.size(); }
  const std::string& label(std::size_t i) const { return labels_.at(i); }
  std::optional<std::size_t> index_of(std::string_view label) const;

 private:
  std::vector<std::string> labels_;
};

// A point on the probability simplex.  Construction validates; nothing in the
// library renormalizes silently.
class ProbabilityVector {
 public:
  static ProbabilityVector validate(std::span<const double> p);
  static ProbabilityVector uniform(std::size_t k);
  // Explicit renormalization of non-negative weights with positive mass.
  static ProbabilityVector renormalize(std::span<const double> weights);

  std::size_t size() const noexcept { return p_.size(); }
  double operator[](std::size_t j) const { return p_[j]; }
  std::span<const double> values() const noexcept { return p_; }

 private:
  explicit ProbabilityVector(std::vector<double> p) : p_(std::move(p)) {}
  std::vector<double> p_;
};

ProbabilityVector validate_distribution(std::span<const double> p);

// Row-stochastic k x k matrix; t(i, j) is the probability of steering an
// input of class i towards class j.
class TransitionMatrix {
 public:
  static TransitionMatrix validate(const DenseMatrix& t);
  static TransitionMatrix from_rows(const std::vector<std::vector<double>>& rows);
  static TransitionMatrix identity(std::size_t k);

  std::size_t size() const noexcept { return t_.rows; }
  double operator()(std::size_t i, std::size_t j) const { return t_(i, j); }
  std::span<const double> row(std::size_t i) const { return t_.row(i); }
  const DenseMatrix& dense() const noexcept { return t_; }
  std::vector<std::vector<double>> rows() const;

 private:
  explicit TransitionMatrix(DenseMatrix t) : t_(std::move(t)) {}
  DenseMatrix t_;
};

// Classes reachable from one input.  The source (ground-truth) class is always
// a member.
class ReachableSet {
 public:
  ReachableSet(ClassMask mask, std::size_t source);

  static ReachableSet only_source(std::size_t source) {
    return {class_bit(source), source};
  }

  ClassMask mask() const noexcept { return mask_; }
  std::size_t source() const noexcept { return source_; }
  bool contains(std::size_t j) const noexcept { return mask_contains(mask_, j); }
  std::size_t count() const noexcept { return mask_size(mask_); }
  std::vector<std::size_t> members() const { return mask_members(mask_); }
  // True when some class other than the source is reachable.
  bool can_fool() const noexcept { return mask_ != class_bit(source_); }

  friend bool operator==(const ReachableSet&, const ReachableSet&) = default;

 private:
  ClassMask mask_;
  std::size_t source_;
};

// P(S | y_i) for one source class, keyed by reachable-set mask.
using SubsetDistribution = std::map<ClassMask, double>;

struct ReachabilityStats {
  std::size_t k = 0;
  DenseMatrix counts;                         // r[i][j]
  std::vector<std::size_t> per_class_n;       // samples of each source class
  std::vector<SubsetDistribution> subset_table;
  // Raw subset counts behind subset_table; Laplace smoothing needs them.
  std::vector<std::map<ClassMask, std::size_t>> subset_counts;

  std::size_t count(std::size_t i, std::size_t j) const {
    return static_cast<std::size_t>(counts(i, j));
  }
  std::vector<std::size_t> empty_classes() const;
};

struct ReachabilityRecord {
  std::string id;
  std::size_t true_class = 0;
  ReachableSet reachable = ReachableSet::only_source(0);
  std::optional<std::vector<double>> per_target_distortion;
};

// Counts without the non-empty requirement; rows of empty classes stay zero.
ReachabilityStats tally_records(std::span<const ReachabilityRecord> records,
                                const ClassSet& classes);

// As tally_records, but every class must have at least one record.
ReachabilityStats stats_from_records(std::span<const ReachabilityRecord> records,
                                     const ClassSet& classes);

// Builds stats directly from per-class subset counts.
ReachabilityStats stats_from_subset_counts(
    std::size_t k, const std::vector<std::map<ClassMask, std::size_t>>& counts);

struct Proportions {
  DenseMatrix r_prime;     // r[i][j] / n_i
  TransitionMatrix r_hat;  // rows of R divided by their sums
};

Proportions normalize_proportions(const ReachabilityStats& stats);

}  // namespace classdrift
