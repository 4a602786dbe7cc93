#include <doctest.h>

#include <cmath>

#include "classdrift/oracle_attacks.hpp"

using namespace classdrift;
using namespace classdrift::attacks;

namespace {

AffineClassifier identity2() {
  DenseMatrix w(2, 2);
  w(0, 0) = 1.0;
  w(1, 1) = 1.0;
  return AffineClassifier(w, {0.0, 0.0});
}

AffineClassifier random_classifier(RandomStream& rng, std::size_t k, std::size_t d) {
  DenseMatrix w(k, d);
  for (double& v : w.data) v = 4.0 * rng.uniform() - 2.0;
  std::vector<double> b(k);
  for (double& v : b) v = rng.uniform() - 0.5;
  return AffineClassifier(w, b);
}

std::vector<double> random_point(RandomStream& rng, std::size_t d) {
  std::vector<double> x(d);
  for (double& v : x) v = rng.uniform();
  return x;
}

}  // namespace

TEST_CASE("classifier basics") {
  const auto clf = identity2();
  const std::vector<double> x{1.0, 0.0};
  CHECK(clf.predict(x) == 0);
  const std::vector<double> tie{0.5, 0.5};
  CHECK(clf.predict(tie) == 0);
  CHECK_THROWS_AS(clf.logits(std::vector<double>{1.0}), Error);
  CHECK_THROWS_AS(AffineClassifier(DenseMatrix(2, 2), {0.0}), Error);
  CHECK(parse_attack("cw") == AttackKind::CarliniWagner);
  CHECK_THROWS_AS(parse_attack("jsma"), Error);
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  RandomStream rng(42, "fd");
  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng.below(5);
    const std::size_t d = 1 + rng.below(6);
    const auto clf = random_classifier(rng, k, d);
    auto x = random_point(rng, d);
    const std::size_t t = rng.below(k);
    const auto grad = clf.cross_entropy_gradient(x, t);
    for (std::size_t i = 0; i < d; ++i) {
      auto up = x, down = x;
      up[i] += h;
      down[i] -= h;
      const double fd = (clf.cross_entropy(up, t) - clf.cross_entropy(down, t)) / (2 * h);
      CHECK(std::abs(fd - grad[i]) <= 1e-5 * std::max(1.0, std::abs(grad[i])));
    }
  }
}

TEST_CASE("deepfool worked example") {
  const auto clf = identity2();
  const std::vector<double> x{1.0, 0.0};
  const AttackBudget unlimited{INFINITY, Norm::L2, 30};

  const auto plain = targeted_deepfool(clf, x, 1, unlimited, 1.0);
  CHECK(plain.x_adv[0] == doctest::Approx(0.5));
  CHECK(plain.x_adv[1] == doctest::Approx(0.5));
  // On the boundary the tie goes to class 0, so the iteration continues
  // without moving and never succeeds.
  CHECK_FALSE(plain.success);

  const auto ex = targeted_deepfool(clf, x, 1, unlimited);
  CHECK(ex.x_adv[0] == doctest::Approx(0.49).epsilon(1e-12));
  CHECK(ex.x_adv[1] == doctest::Approx(0.51).epsilon(1e-12));
  CHECK(ex.predicted == 1);
  CHECK(ex.success);
  CHECK(ex.iterations == 1);
  CHECK(ex.distortion == doctest::Approx(std::sqrt(2 * 0.51 * 0.51)));

  // Budget just below the distortion.
  const AttackBudget tight{0.72, Norm::L2, 30};
  CHECK_FALSE(targeted_deepfool(clf, x, 1, tight).success);
}

TEST_CASE("fgsm") {
  const auto clf = identity2();
  const std::vector<double> x{1.0, 0.0};
  const auto ex = targeted_fgsm(clf, x, 1, {0.6, Norm::LInf, 1});
  CHECK(ex.x_adv[0] == doctest::Approx(0.4));
  CHECK(ex.x_adv[1] == doctest::Approx(0.6));
  CHECK(ex.predicted == 1);
  CHECK(ex.success);

  const auto none = targeted_fgsm(clf, x, 1, {0.0, Norm::LInf, 1});
  CHECK(none.x_adv == x);
  CHECK_FALSE(none.success);

  RandomStream rng(7, "fgsm");
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = random_classifier(rng, 3, 4);
    const auto p = random_point(rng, 4);
    const double eps = rng.uniform();
    const auto r = targeted_fgsm(c, p, rng.below(3), {eps, Norm::LInf, 1});
    CHECK(distance(p, r.x_adv, Norm::LInf) <= eps + 1e-15);
    for (double v : r.x_adv) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("pgd") {
  const auto clf = identity2();
  const std::vector<double> x{1.0, 0.0};
  const AttackBudget budget{0.6, Norm::LInf, 30};
  std::vector<std::vector<double>> trace;
  const auto ex = targeted_pgd(clf, x, 1, budget, 0.6, &trace);
  const auto one = targeted_fgsm(clf, x, 1, budget);
  REQUIRE(!trace.empty());
  CHECK(trace.front() == one.x_adv);

  trace.clear();
  targeted_pgd(clf, x, 1, {0.1, Norm::LInf, 30}, 0.5, &trace);
  for (const auto& it : trace) {
    CHECK(it[0] == doctest::Approx(0.9));
    CHECK(it[1] == doctest::Approx(0.1));
  }

  CHECK_THROWS_AS(targeted_pgd(clf, x, 1, budget, 0.0), Error);

  RandomStream rng(9, "pgd");
  for (int trial = 0; trial < 30; ++trial) {
    const auto c = random_classifier(rng, 4, 5);
    const auto p = random_point(rng, 5);
    const double eps = 0.3 * rng.uniform();
    trace.clear();
    targeted_pgd(c, p, rng.below(4), {eps, Norm::LInf, 30}, eps / 3 + 1e-3, &trace);
    for (const auto& it : trace) {
      CHECK(distance(p, it, Norm::LInf) <= eps + 1e-15);
    }
  }
}

TEST_CASE("carlini-wagner") {
  const auto clf = identity2();
  SUBCASE("already the target") {
    const std::vector<double> x{0.2, 0.9};
    const auto ex = targeted_cw(clf, x, 1, {INFINITY, Norm::L2, 30});
    CHECK(ex.success);
    CHECK(distance(x, ex.x_adv, Norm::L2) < 1e-3);
  }
  SUBCASE("norm is at least the boundary distance") {
    const std::vector<double> x{0.8, 0.3};
    const auto ex = targeted_cw(clf, x, 1, {INFINITY, Norm::L2, 30});
    REQUIRE(ex.success);
    CHECK(ex.distortion >= 0.5 / std::sqrt(2.0) - 1e-12);
    CHECK(ex.distortion <= 0.5 / std::sqrt(2.0) + 0.05);
  }
  SUBCASE("box corner") {
    const std::vector<double> x{1.0, 0.0};
    const auto ex = targeted_cw(clf, x, 1, {INFINITY, Norm::L2, 30});
    if (ex.success) CHECK(ex.distortion >= std::sqrt(0.5) - 1e-12);
  }
  SUBCASE("outputs stay in the box") {
    RandomStream rng(13, "cw");
    for (int trial = 0; trial < 10; ++trial) {
      const auto c = random_classifier(rng, 3, 4);
      const auto p = random_point(rng, 4);
      const auto ex = targeted_cw(c, p, rng.below(3), {1.0, Norm::L2, 30});
      for (double v : ex.x_adv) CHECK((v >= 0.0 && v <= 1.0));
      if (ex.success) CHECK(ex.distortion <= 1.0);
    }
  }
}

TEST_CASE("classifier reachability") {
  const auto clf = identity2();
  const std::vector<double> x{0.7, 0.2};
  for (auto kind : {AttackKind::DeepFool, AttackKind::Fgsm, AttackKind::Pgd,
                    AttackKind::CarliniWagner}) {
    const auto none = probe_classifier(clf, x, 0, kind, AttackBudget::for_attack(kind, 0.0));
    CHECK(none.reachable.mask() == 0b01);
  }
  const auto all = probe_classifier(clf, x, 0, AttackKind::DeepFool,
                                    AttackBudget::for_attack(AttackKind::DeepFool, INFINITY));
  CHECK(all.reachable.mask() == 0b11);
  REQUIRE(all.examples[1].has_value());
  CHECK(all.examples[1]->success);
}

TEST_CASE("synthetic oracle") {
  SUBCASE("single subset") {
    std::vector<SubsetDistribution> table{{{0b011, 1.0}}, {{0b010, 1.0}}, {{0b111, 1.0}}};
    SyntheticOracle oracle(table, 1);
    for (int i = 0; i < 10; ++i) CHECK(oracle.draw(0).mask() == 0b011);
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS(SyntheticOracle({{{0b10, 1.0}}, {{0b10, 1.0}}}), Error);
    CHECK_THROWS_AS(SyntheticOracle({{{0b01, 0.5}}, {{0b10, 1.0}}}), Error);
  }
  SUBCASE("frequencies match the table") {
    auto oracle = SyntheticOracle::independent(4, 0.3, 5);
    const std::size_t n = 100000;
    std::map<ClassMask, std::size_t> seen;
    for (std::size_t s = 0; s < n; ++s) ++seen[oracle.draw(2).mask()];
    for (const auto& [mask, prob] : oracle.table()[2]) {
      const double sigma = std::sqrt(prob * (1 - prob) / n);
      CHECK(std::abs(static_cast<double>(seen[mask]) / n - prob) <= 4 * sigma);
    }
    double total = 0.0;
    for (const auto& [mask, prob] : oracle.table()[2]) total += prob;
    CHECK(total == doctest::Approx(1.0));
    const auto stats = oracle.exact_stats();
    CHECK(stats.counts(2, 2) == doctest::Approx(1.0));
    CHECK(stats.counts(2, 0) == doctest::Approx(0.3));
  }
}
