#include <doctest.h>

#include <random>

#include "classdrift/synthesis.hpp"

using namespace classdrift;
using namespace classdrift::synthesis;

namespace {

ProbabilityVector dist(std::vector<double> v) { return ProbabilityVector::validate(v); }

using SubsetCounts = std::vector<std::map<ClassMask, std::size_t>>;

ReachabilityStats full_reach(std::size_t k, std::size_t n) {
  SubsetCounts counts(k);
  for (auto& c : counts) c[full_mask(k)] = n;
  return stats_from_subset_counts(k, counts);
}

void check_verified(const Result& r, const ProbabilityVector& p, const ProbabilityVector& q) {
  REQUIRE(r.ok());
  const auto v = verify_matrix(r.value(), p, q);
  CHECK(v.max_residual <= 1e-7);
  CHECK(v.max_row_deviation <= 1e-7);
  CHECK(v.min_entry >= 0.0);
}

ProbabilityVector random_dist(std::mt19937_64& rng, std::size_t k) {
  std::gamma_distribution<double> gamma(1.0, 1.0);
  std::vector<double> w(k);
  for (double& x : w) x = gamma(rng);
  return ProbabilityVector::renormalize(w);
}

}  // namespace

TEST_CASE("config validation") {
  Config cfg;
  CHECK_NOTHROW(cfg.validate(12));
  cfg.xi = 0.25;
  CHECK_THROWS_AS(cfg.validate(2), Error);
  cfg.xi = 0.0;
  CHECK_THROWS_AS(cfg.validate(2), Error);
}

TEST_CASE("verify_matrix") {
  const auto anti = TransitionMatrix::from_rows({{0, 1}, {1, 0}});
  const auto u = ProbabilityVector::uniform(2);
  auto v = verify_matrix(anti, u, u);
  CHECK(v.max_residual == 0.0);
  CHECK(v.diagonal_mass == 0.0);

  v = verify_matrix(TransitionMatrix::identity(2), dist({0.3, 0.7}), u);
  CHECK(v.max_residual == doctest::Approx(0.2));
}

TEST_CASE("method 1") {
  const auto u = ProbabilityVector::uniform(2);
  SUBCASE("uniform to uniform swaps the classes") {
    const auto r = method1(u, u);
    check_verified(r, u, u);
    CHECK(r.value()(0, 0) == doctest::Approx(0.0).epsilon(1e-7));
    CHECK(r.value()(0, 1) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(r.value()(1, 0) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(r.value()(1, 1) == doctest::Approx(0.0).epsilon(1e-7));
    CHECK(r.lp_vars == 6);
  }
  SUBCASE("all mass moves off a single class") {
    const auto p = dist({1, 0});
    const auto q = dist({0, 1});
    const auto r = method1(p, q);
    check_verified(r, p, q);
    CHECK(r.value()(0, 1) == doctest::Approx(1.0));
  }
  SUBCASE("degenerate point mass stays put") {
    const auto p = dist({1, 0, 0});
    const auto r = method1(p, p);
    check_verified(r, p, p);
    CHECK(r.value()(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("mismatched sizes") {
    CHECK_THROWS_AS(method1(u, ProbabilityVector::uniform(3)), Error);
  }
  SUBCASE("floors respect xi") {
    std::mt19937_64 rng(3);
    const auto p = random_dist(rng, 5);
    const auto q = random_dist(rng, 5);
    Config cfg;
    cfg.xi = 0.05;
    const auto r = method1(p, q, cfg);
    check_verified(r, p, q);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        if (i == j) continue;
        CHECK(r.floors(i, j) <= 0.05 + 1e-12);
        CHECK(r.value()(i, j) >= r.floors(i, j) - 1e-9);
      }
    }
  }
}

TEST_CASE("method 2 strict and relaxed") {
  // Class 0 never reaches class 1.
  const auto stats = stats_from_subset_counts(2, SubsetCounts{{{0b01, 4}}, {{0b11, 4}}});
  const auto p = ProbabilityVector::uniform(2);
  const auto q = dist({0.2, 0.8});

  Config strict;
  strict.method2_relax_eta = false;
  CHECK_FALSE(method2(p, q, stats, strict).ok());

  const auto relaxed = method2(p, q, stats);
  check_verified(relaxed, p, q);
  CHECK(relaxed.slack(0, 1) > 0.0);
  CHECK(relaxed.value()(0, 1) <= relaxed.slack(0, 1) + 1e-9);

  SUBCASE("full reach leaves the bounds inactive") {
    std::mt19937_64 rng(11);
    const auto full = full_reach(4, 10);
    for (int trial = 0; trial < 5; ++trial) {
      const auto pp = random_dist(rng, 4);
      const auto qq = random_dist(rng, 4);
      const auto r2 = method2(pp, qq, full);
      const auto r1 = method1(pp, qq);
      check_verified(r2, pp, qq);
      CHECK(r2.objective == doctest::Approx(r1.objective).epsilon(1e-7));
    }
  }
}

TEST_CASE("method 3") {
  SUBCASE("half reach everywhere") {
    const auto u = ProbabilityVector::uniform(2);
    const auto r = method3(u, u, DenseMatrix(2, 2, 0.5));
    check_verified(r, u, u);
    CHECK(r.multipliers(0, 0) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(r.multipliers(0, 1) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(r.multipliers(1, 0) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(r.multipliers(1, 1) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(r.cap == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(r.value()(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.objective == doctest::Approx(2.0).epsilon(1e-6));
  }
  SUBCASE("full reach through stats gives the same rates") {
    const auto u = ProbabilityVector::uniform(2);
    const auto r = method3(u, u, full_reach(2, 4));
    check_verified(r, u, u);
    CHECK(r.value()(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.multipliers(0, 1) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(r.cap == doctest::Approx(2.0).epsilon(1e-6));
  }
  SUBCASE("invalid rates") {
    const auto u = ProbabilityVector::uniform(2);
    CHECK_THROWS_AS(method3(u, u, DenseMatrix(2, 2, 1.5)), Error);
    CHECK_THROWS_AS(method3(u, u, DenseMatrix(3, 3, 0.5)), Error);
  }
  SUBCASE("no reach at all") {
    const auto stats = stats_from_subset_counts(2, SubsetCounts{{{0b01, 3}}, {{0b10, 3}}});
    CHECK_FALSE(method3(dist({0.3, 0.7}), dist({0.5, 0.5}), stats).ok());
    const auto p = dist({0.3, 0.7});
    const auto r = method3(p, p, stats);
    check_verified(r, p, p);
    CHECK(r.value()(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("unreachable entries stay zero") {
    std::mt19937_64 rng(5);
    const std::size_t k = 5;
    SubsetCounts counts(k);
    std::bernoulli_distribution coin(0.6);
    for (std::size_t i = 0; i < k; ++i) {
      for (int s = 0; s < 20; ++s) {
        ClassMask m = class_bit(i);
        for (std::size_t j = 0; j < k; ++j) {
          if (coin(rng)) m |= class_bit(j);
        }
        ++counts[i][m];
      }
    }
    const auto stats = stats_from_subset_counts(k, counts);
    const auto r_hat = normalize_proportions(stats).r_hat;
    const auto p = random_dist(rng, k);
    const auto q = random_dist(rng, k);
    const auto r = method3(p, q, stats);
    check_verified(r, p, q);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        if (r_hat(i, j) == 0.0) CHECK(r.value()(i, j) == 0.0);
      }
    }
  }
}

TEST_CASE("laplace smoothing") {
  const auto s = laplace_smooth({{0b11, 1.0}}, 3, 2, 0);
  REQUIRE(s.size() == 2);
  CHECK(s.at(0b01) == doctest::Approx(0.2));
  CHECK(s.at(0b11) == doctest::Approx(0.8));

  const auto prior = laplace_smooth({}, 0, 3, 1);
  REQUIRE(prior.size() == 4);
  for (const auto& [mask, w] : prior) {
    CHECK(mask_contains(mask, 1));
    CHECK(w == doctest::Approx(0.25));
  }

  const SubsetDistribution flat{{0b010, 0.25}, {0b011, 0.25}, {0b110, 0.25}, {0b111, 0.25}};
  for (const auto& [mask, w] : laplace_smooth(flat, 8, 3, 1)) {
    CHECK(w == doctest::Approx(flat.at(mask)));
  }

  CHECK_THROWS_AS(laplace_smooth({}, 1, 17, 0), Error);
}

TEST_CASE("singleton zeroing") {
  const auto z = zero_singleton({{0b01, 0.6}, {0b11, 0.4}}, 0);
  REQUIRE(z.size() == 1);
  CHECK(z.at(0b11) == doctest::Approx(1.0));
  // Nothing else to renormalize onto.
  const auto kept = zero_singleton({{0b01, 1.0}}, 0);
  CHECK(kept.at(0b01) == 1.0);
}

TEST_CASE("method 4") {
  Config plain;
  plain.method4_laplace = false;
  const auto u = ProbabilityVector::uniform(2);

  SUBCASE("full-set subsets swap the classes") {
    const auto r = method4(u, u, full_reach(2, 5), plain);
    check_verified(r, u, u);
    CHECK(r.value()(0, 1) == doctest::Approx(1.0));
    CHECK(r.value()(1, 0) == doctest::Approx(1.0));
    REQUIRE(r.policies.size() == 2);
    CHECK(r.policies[0].targets[1] == doctest::Approx(1.0));
    CHECK(r.policies[1].targets[0] == doctest::Approx(1.0));
  }

  SUBCASE("high singleton mass needs zeroing") {
    const auto stats =
        stats_from_subset_counts(2, SubsetCounts{{{0b01, 9}, {0b11, 1}}, {{0b11, 10}}});
    const auto q = dist({0.3, 0.7});
    Config keep;
    keep.method4_zero_singleton = false;
    CHECK_FALSE(method4(u, q, stats, keep).ok());
    check_verified(method4(u, q, stats), u, q);
  }

  SUBCASE("single full set matches the unconstrained optimum") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 5; ++trial) {
      const auto p = random_dist(rng, 4);
      const auto q = random_dist(rng, 4);
      const auto r4 = method4(p, q, full_reach(4, 7), plain);
      check_verified(r4, p, q);
      // Without per-subset structure the diagonal mass is limited only by
      // the transition constraints: max(0, q_j - sum_{i != j} p_i) per class.
      double lower = 0.0;
      for (std::size_t j = 0; j < 4; ++j) lower += std::max(0.0, q[j] - (1.0 - p[j])) / p[j];
      CHECK(r4.objective == doctest::Approx(lower).epsilon(1e-7));
    }
  }

  SUBCASE("direct and projected routes agree") {
    std::mt19937_64 rng(8);
    for (std::size_t k : {3, 4, 5, 6}) {
      for (int trial = 0; trial < 4; ++trial) {
        SubsetCounts counts(k);
        std::bernoulli_distribution coin(0.4);
        for (std::size_t i = 0; i < k; ++i) {
          for (int s = 0; s < 15; ++s) {
            ClassMask m = class_bit(i);
            for (std::size_t j = 0; j < k; ++j) {
              if (coin(rng)) m |= class_bit(j);
            }
            ++counts[i][m];
          }
        }
        const auto stats = stats_from_subset_counts(k, counts);
        const auto p = random_dist(rng, k);
        const auto q = random_dist(rng, k);
        Config direct, projected;
        direct.method4_route = Method4Route::Direct;
        projected.method4_route = Method4Route::Projected;
        const auto a = method4(p, q, stats, direct);
        const auto b = method4(p, q, stats, projected);
        REQUIRE(a.ok() == b.ok());
        if (!a.ok()) continue;
        check_verified(a, p, q);
        check_verified(b, p, q);
        CHECK(b.objective == doctest::Approx(a.objective).epsilon(1e-7));
        CHECK(a.lp_vars <= method4_variable_bound(k));
        CHECK(b.lp_vars == a.lp_vars);
        for (const auto& pol : b.policies) {
          double sum = 0.0;
          for (std::size_t j = 0; j < k; ++j) {
            if (!mask_contains(pol.subset, j)) CHECK(pol.targets[j] == 0.0);
            sum += pol.targets[j];
          }
          CHECK(sum == doctest::Approx(1.0));
        }
      }
    }
  }

  SUBCASE("too many classes") {
    CHECK_THROWS_AS(method4_variable_bound(17) > 0 ? method4(u, u, ReachabilityStats{}, plain)
                                                   : Result{},
                    Error);
  }
}

TEST_CASE("twelve classes with full reach") {
  std::mt19937_64 rng(99);
  const std::size_t k = 12;
  const auto stats = full_reach(k, 500);
  const auto p = ProbabilityVector::uniform(k);
  const auto q = random_dist(rng, k);
  check_verified(method1(p, q), p, q);
  check_verified(method2(p, q, stats), p, q);
  check_verified(method3(p, q, stats), p, q);
  const auto r4 = method4(p, q, stats);
  check_verified(r4, p, q);
  CHECK(r4.lp_vars <= method4_variable_bound(k));
}
