#include <doctest.h>

#include <algorithm>
#include <random>

#include "classdrift/core_types.hpp"

using namespace classdrift;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Malformed;
}

ReachabilityRecord record(std::string id, std::size_t cls, std::vector<std::size_t> reach) {
  return {std::move(id), cls, ReachableSet(mask_from_members(reach), cls), std::nullopt};
}

}  // namespace

TEST_CASE("validate_distribution") {
  const std::vector<double> ok{0.5, 0.5};
  CHECK(validate_distribution(ok).size() == 2);

  const std::vector<double> too_much{0.5, 0.6};
  CHECK(code_of([&] { validate_distribution(too_much); }) == ErrorCode::SumNotOne);

  const std::vector<double> negative{-0.1, 1.1};
  CHECK(code_of([&] { validate_distribution(negative); }) == ErrorCode::NegativeEntry);

  CHECK(code_of([] { validate_distribution(std::vector<double>{}); }) == ErrorCode::Malformed);

  // Within tolerance is accepted as-is, beyond it is not.
  const std::vector<double> close{0.5, 0.5 + 5e-10};
  CHECK(validate_distribution(close)[1] == 0.5 + 5e-10);
  const std::vector<double> off{0.5, 0.5 + 5e-9};
  CHECK(code_of([&] { validate_distribution(off); }) == ErrorCode::SumNotOne);
}

TEST_CASE("explicit renormalization") {
  const std::vector<double> w{1.0, 3.0};
  const auto p = ProbabilityVector::renormalize(w);
  CHECK(p[0] == doctest::Approx(0.25));
  CHECK(p[1] == doctest::Approx(0.75));
  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(ProbabilityVector::renormalize(zero), Error);
}

TEST_CASE("class sets") {
  CHECK_THROWS_AS(ClassSet({"a"}), Error);
  CHECK_THROWS_AS(ClassSet({"a", "a"}), Error);
  CHECK(code_of([] { ClassSet::numbered(17); }) == ErrorCode::SubsetOverflow);
  const ClassSet yes_no({"yes", "no"});
  CHECK(yes_no.index_of("no") == 1);
  CHECK_FALSE(yes_no.index_of("up").has_value());
}

TEST_CASE("transition matrix validation") {
  CHECK_NOTHROW(TransitionMatrix::from_rows({{0.0, 1.0}, {1.0, 0.0}}));
  CHECK(code_of([] { TransitionMatrix::from_rows({{0.5, 0.6}, {1.0, 0.0}}); }) ==
        ErrorCode::SumNotOne);
  CHECK(code_of([] { TransitionMatrix::from_rows({{-0.5, 1.5}, {1.0, 0.0}}); }) ==
        ErrorCode::NegativeEntry);
  CHECK(code_of([] { TransitionMatrix::from_rows({{1.0}, {1.0, 0.0}}); }) ==
        ErrorCode::DimensionMismatch);
  CHECK_NOTHROW(TransitionMatrix::from_rows({{0.5, 0.5 + 5e-8}, {1.0, 0.0}}));
}

TEST_CASE("reachable sets always contain their source") {
  CHECK_THROWS_AS(ReachableSet(0b10, 0), Error);
  const ReachableSet s(0b101, 2);
  CHECK(s.contains(0));
  CHECK_FALSE(s.contains(1));
  CHECK(s.count() == 2);
  CHECK(s.can_fool());
  CHECK_FALSE(ReachableSet::only_source(3).can_fool());
}

TEST_CASE("stats_from_records counts reachability") {
  const auto classes = ClassSet::numbered(2);
  const std::vector<ReachabilityRecord> recs{
      record("a", 0, {0, 1}), record("b", 0, {0, 1}), record("c", 1, {1})};
  const auto stats = stats_from_records(recs, classes);
  CHECK(stats.count(0, 0) == 2);
  CHECK(stats.count(0, 1) == 2);
  CHECK(stats.count(1, 0) == 0);
  CHECK(stats.count(1, 1) == 1);
  CHECK(stats.per_class_n == std::vector<std::size_t>{2, 1});
  CHECK(stats.subset_table[0].at(0b11) == 1.0);
  CHECK(stats.subset_table[1].at(0b10) == 1.0);
}

TEST_CASE("empty classes are an error, not imputed") {
  const auto classes = ClassSet::numbered(2);
  const std::vector<ReachabilityRecord> recs{record("a", 0, {0})};
  const auto tally = tally_records(recs, classes);
  CHECK(tally.count(0, 0) == 1);
  CHECK(tally.count(0, 1) == 0);
  CHECK(tally.count(1, 0) == 0);
  CHECK(tally.count(1, 1) == 0);
  CHECK(tally.empty_classes() == std::vector<std::size_t>{1});
  CHECK(code_of([&] { stats_from_records(recs, classes); }) == ErrorCode::EmptyClass);
  CHECK(code_of([&] { normalize_proportions(tally); }) == ErrorCode::EmptyClass);
}

TEST_CASE("records outside the class set are rejected") {
  const auto classes = ClassSet::numbered(2);
  const std::vector<ReachabilityRecord> recs{record("a", 2, {2})};
  CHECK(code_of([&] { tally_records(recs, classes); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("full reach gives r_ij = n_i") {
  const auto classes = ClassSet::numbered(3);
  std::vector<ReachabilityRecord> recs;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t n = 0; n < i + 2; ++n) {
      recs.push_back(record("r" + std::to_string(i) + "_" + std::to_string(n), i, {0, 1, 2}));
    }
  }
  const auto stats = stats_from_records(recs, classes);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(stats.count(i, j) == stats.per_class_n[i]);
  }
  const auto props = normalize_proportions(stats);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(props.r_hat(i, j) == doctest::Approx(1.0 / 3.0));
      CHECK(props.r_prime(i, j) == 1.0);
    }
  }
}

TEST_CASE("normalize_proportions on the hand example") {
  const auto classes = ClassSet::numbered(2);
  const std::vector<ReachabilityRecord> recs{
      record("a", 0, {0, 1}), record("b", 0, {0, 1}), record("c", 1, {1})};
  const auto props = normalize_proportions(stats_from_records(recs, classes));
  CHECK(props.r_prime(0, 0) == 1.0);
  CHECK(props.r_prime(0, 1) == 1.0);
  CHECK(props.r_prime(1, 0) == 0.0);
  CHECK(props.r_prime(1, 1) == 1.0);
  CHECK(props.r_hat(0, 0) == 0.5);
  CHECK(props.r_hat(0, 1) == 0.5);
  CHECK(props.r_hat(1, 0) == 0.0);
  CHECK(props.r_hat(1, 1) == 1.0);
}

TEST_CASE("diagonal reach normalizes to the identity") {
  const auto classes = ClassSet::numbered(3);
  const std::vector<ReachabilityRecord> recs{
      record("a", 0, {0}), record("b", 1, {1}), record("c", 2, {2}), record("d", 2, {2})};
  const auto props = normalize_proportions(stats_from_records(recs, classes));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      const double expect = i == j ? 1.0 : 0.0;
      CHECK(props.r_prime(i, j) == expect);
      CHECK(props.r_hat(i, j) == expect);
    }
  }
}

TEST_CASE("stats invariants hold on random records") {
  std::mt19937_64 rng(99);
  const std::size_t k = 5;
  const auto classes = ClassSet::numbered(k);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<ReachabilityRecord> recs;
    std::uniform_int_distribution<ClassMask> any_mask(0, full_mask(k));
    for (std::size_t i = 0; i < k; ++i) {
      for (int n = 0; n < 1 + trial % 7; ++n) {
        recs.push_back({"x", i, ReachableSet(any_mask(rng) | class_bit(i), i), std::nullopt});
      }
    }
    const auto stats = stats_from_records(recs, classes);
    const auto props = normalize_proportions(stats);
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(stats.count(i, i) == stats.per_class_n[i]);
      double table_sum = 0.0;
      for (const auto& [mask, prob] : stats.subset_table[i]) {
        CHECK(mask_contains(mask, i));
        table_sum += prob;
      }
      CHECK(table_sum == doctest::Approx(1.0).epsilon(1e-12));
      for (std::size_t j = 0; j < k; ++j) {
        CHECK(stats.count(i, j) <= stats.per_class_n[i]);
        CHECK((props.r_hat(i, j) > 0.0) == (stats.count(i, j) > 0));
      }
    }
    // Order of the records does not matter.
    auto shuffled = recs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto again = stats_from_records(shuffled, classes);
    CHECK(again.counts.data == stats.counts.data);
    CHECK(again.subset_counts == stats.subset_counts);
  }
}
