#include <doctest.h>

#include <random>

#include "classdrift/error.hpp"
#include "classdrift/lp_solver.hpp"
#include "support/lp_oracle.hpp"

using namespace classdrift;
using lp::LinearProgram;
using lp::Status;

TEST_CASE("two-variable program picks the best vertex") {
  // min -x1 - 2 x2  s.t.  x1 + x2 <= 1, x >= 0.  Vertices (0,0), (1,0), (0,1).
  LinearProgram p(2);
  p.objective = {-1.0, -2.0};
  p.add_less_equal({1.0, 1.0}, 1.0);

  const auto oracle = testing::enumerate_vertices([&] {
    auto boxed = p;
    for (auto& b : boxed.bounds) b.hi = 10.0;
    return boxed;
  }());
  REQUIRE(oracle.feasible);
  CHECK(oracle.objective == doctest::Approx(-2.0));

  const auto sol = lp::solve(p);
  REQUIRE(sol.status == Status::Optimal);
  CHECK(sol.x[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sol.x[1] == doctest::Approx(1.0));
  CHECK(sol.objective_value == doctest::Approx(-2.0));
}

TEST_CASE("contradictory bounds are infeasible") {
  LinearProgram p(1);
  p.objective = {1.0};
  p.add_greater_equal({1.0}, 2.0);
  p.add_less_equal({1.0}, 1.0);
  CHECK(lp::solve(p).status == Status::Infeasible);
}

TEST_CASE("lower bound active under an equality") {
  LinearProgram p(2);
  p.objective = {1.0, 0.0};
  p.add_equality({1.0, 1.0}, 1.0);
  p.bounds = {{0.0, 1.0}, {0.0, 1.0}};
  const auto sol = lp::solve(p);
  REQUIRE(sol.status == Status::Optimal);
  CHECK(sol.x[0] == doctest::Approx(0.0));
  CHECK(sol.x[1] == doctest::Approx(1.0));
  CHECK(sol.objective_value == doctest::Approx(0.0));
}

TEST_CASE("unbounded direction is reported") {
  LinearProgram p(2);
  p.objective = {-1.0, 0.0};
  p.add_less_equal({-1.0, 1.0}, 1.0);
  CHECK(lp::solve(p).status == Status::Unbounded);
}

TEST_CASE("malformed programs are rejected") {
  LinearProgram p(2);
  p.add_equality({1.0}, 1.0);
  CHECK_THROWS_AS(lp::solve(p), Error);

  LinearProgram q(1);
  q.bounds[0] = {1.0, 0.0};
  try {
    lp::solve(q);
    FAIL("expected Malformed");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Malformed);
  }
}

TEST_CASE("negative lower bounds and shifted boxes") {
  // min x + y  s.t. x - y = 0.5, -2 <= x <= 2, -1 <= y <= 3
  LinearProgram p(2);
  p.objective = {1.0, 1.0};
  p.add_equality({1.0, -1.0}, 0.5);
  p.bounds = {{-2.0, 2.0}, {-1.0, 3.0}};
  const auto sol = lp::solve(p);
  REQUIRE(sol.status == Status::Optimal);
  CHECK(sol.x[0] == doctest::Approx(-0.5));
  CHECK(sol.x[1] == doctest::Approx(-1.0));
}

TEST_CASE("degenerate duplicate constraints are tolerated") {
  LinearProgram p(3);
  p.objective = {-1.0, -1.0, -1.0};
  for (int rep = 0; rep < 4; ++rep) {
    p.add_less_equal({1.0, 1.0, 0.0}, 1.0);
    p.add_less_equal({0.0, 1.0, 1.0}, 1.0);
    p.add_equality({1.0, 0.0, 1.0}, 1.0);
  }
  const auto sol = lp::solve(p);
  REQUIRE(sol.status == Status::Optimal);
  // x = y = z = 1/2 saturates both inequalities.
  CHECK(sol.objective_value == doctest::Approx(-1.5));
}

TEST_CASE("random box programs agree with vertex enumeration") {
  std::mt19937_64 rng(20240611);
  int infeasible = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const auto p = testing::random_box_program(rng);
    const auto oracle = testing::enumerate_vertices(p);
    const auto sol = lp::solve(p);
    CAPTURE(trial);
    REQUIRE((sol.status == Status::Optimal) == oracle.feasible);
    if (!oracle.feasible) {
      ++infeasible;
      continue;
    }
    CHECK(std::abs(sol.objective_value - oracle.objective) <= 1e-6);
    const auto res = lp::check_point(p, sol.x);
    CHECK(res.max_equality <= 1e-7);
    CHECK(res.max_inequality <= 1e-7);
    CHECK(res.max_bound <= 1e-9);
  }
  // Both outcomes must actually be exercised.
  CHECK(infeasible > 5);
  CHECK(infeasible < 115);
}

TEST_CASE("objective scaling scales the optimum") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    auto p = testing::random_box_program(rng);
    const auto base = lp::solve(p);
    for (double lambda : {0.25, 3.0}) {
      auto scaled = p;
      for (double& c : scaled.objective) c *= lambda;
      const auto s = lp::solve(scaled);
      REQUIRE(s.status == base.status);
      if (s.status == Status::Optimal) {
        CHECK(s.objective_value == doctest::Approx(lambda * base.objective_value).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("listing mentions every row") {
  LinearProgram p(2);
  p.objective = {1.0, -1.0};
  p.add_equality({1.0, 1.0}, 1.0);
  p.add_less_equal({1.0, 0.0}, 0.5);
  const auto text = lp::to_listing(p);
  CHECK(text.find("e0:") != std::string::npos);
  CHECK(text.find("u0:") != std::string::npos);
  CHECK(text.find("minimize") == 0);
}
