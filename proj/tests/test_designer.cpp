#include <doctest.h>

#include <Eigen/LU>

#include <algorithm>
#include <cmath>

#include "bidesign/designer.hpp"
#include "bidesign/errors.hpp"
#include "test_util.hpp"

using namespace bidesign;

namespace {

DesignConfig small(CaseId id, std::size_t N = 20, std::size_t M = 60, std::size_t M_u = 40) {
  DesignConfig c;
  c.tmpl = {id};
  c.N = N;
  c.M = M;
  c.M_u = M_u;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("a single input path reduces to its bound sum") {
  DesignConfig c = small(CaseId::kCase1);
  c.M_u = 1;
  const std::vector<double> phi{0.7};
  const auto est = evaluate_objective(c, phi);
  const auto policy = policy_from_template(c.tmpl, c.space, phi);
  const Matrix u = sample_sequence(policy, c.N, CounterRng(c.seed, 0));
  CHECK(est.value == bound_sum_for_inputs(c, u, 0));
  CHECK(est.std_error == 0.0);
  REQUIRE(est.path_totals.size() == 1);
  CHECK(est.path_totals[0] == est.value);
}

TEST_CASE("objective is the mean of the path totals") {
  const DesignConfig c = small(CaseId::kCase3);
  const auto est = evaluate_objective(c, {0.3, 0.6, 0.7});
  CHECK(est.value == doctest::Approx(testing::mean(est.path_totals)).epsilon(1e-13));
  CHECK(est.std_error ==
        doctest::Approx(testing::stddev(est.path_totals) / std::sqrt(double(c.M_u))).epsilon(1e-10));
  double from_mean = 0.0;
  for (const Matrix& L : est.mean_bound) from_mean += L.trace();
  CHECK(from_mean == doctest::Approx(est.value).epsilon(1e-12));
}

TEST_CASE("log-det objective uses the mean bound") {
  DesignConfig c = small(CaseId::kCase4);
  c.phi = PhiKind::kLogDet;
  const auto est = evaluate_objective(c, {});
  double v = 0.0;
  for (const Matrix& L : est.mean_bound) v += std::log(L.determinant());
  CHECK(est.value == doctest::Approx(v).epsilon(1e-10));
  CHECK(std::isnan(est.std_error));
}

TEST_CASE("evaluation does not depend on the thread count") {
  DesignConfig c = small(CaseId::kCase2);
  const auto one = evaluate_objective(c, {0.4, 0.8});
  c.threads = 3;
  const auto three = evaluate_objective(c, {0.4, 0.8});
  CHECK(one.value == three.value);
  CHECK(one.path_totals == three.path_totals);
}

TEST_CASE("common random numbers keep the objective smooth") {
  const DesignConfig c = small(CaseId::kCase1, 30, 100, 100);
  const double base = evaluate_objective(c, {0.6}).value;
  const double d3 = std::abs(evaluate_objective(c, {0.601}).value - base);
  const double d4 = std::abs(evaluate_objective(c, {0.6001}).value - base);
  CHECK(d3 < 0.02 * base);
  CHECK(d4 <= d3 + 1e-3 * base);
}

TEST_CASE("nelder-mead finds the minimum of a quadratic") {
  OptimizerSettings s;
  s.max_iterations = 1000;
  s.tolerance = 1e-10;
  s.patience = 20;
  const auto f = [](const std::vector<double>& x) {
    return 1.0 + (x[0] - 1.0) * (x[0] - 1.0) + 10.0 * (x[1] + 2.0) * (x[1] + 2.0);
  };
  const auto r = nelder_mead(f, {0.0, 0.0}, s);
  CHECK(r.converged);
  CHECK(std::abs(r.x[0] - 1.0) < 1e-3);
  CHECK(std::abs(r.x[1] + 2.0) < 1e-3);
  CHECK(r.value == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("nelder-mead reports an exhausted iteration cap") {
  OptimizerSettings s;
  s.max_iterations = 3;
  s.tolerance = 0.0;
  const auto r = nelder_mead([](const std::vector<double>& x) { return x[0] * x[0]; }, {5.0}, s);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 3);
}

TEST_CASE("the uniform case is evaluated once") {
  const DesignConfig c = small(CaseId::kCase4);
  const auto r = optimize(c);
  CHECK(r.phi_star.empty());
  CHECK(r.evaluations == 1);
  CHECK((r.policy.P_pi.array() == 0.5).all());
  CHECK((r.policy.P_gamma.array() == 0.5).all());
  CHECK(r.objective.value == evaluate_objective(c, {}).value);
}

TEST_CASE("optimizer history") {
  const DesignConfig c = small(CaseId::kCase2);
  const auto r = optimize(c);
  REQUIRE(!r.history.empty());
  CHECK(r.evaluations == static_cast<int>(r.history.size()));
  double best = INFINITY;
  for (const auto& h : r.history) {
    best = std::min(best, h.objective);
    CHECK(h.best == best);
    CHECK(h.phi.size() == 2);
    for (double p : h.phi) CHECK((p > 0.0 && p < 1.0));
  }
  CHECK(r.objective.value == best);
  CHECK(r.history.back().restart == 2);

  const auto again = optimize(c);
  CHECK(again.phi_star == r.phi_star);
  CHECK(again.objective.value == r.objective.value);
  CHECK(again.history.size() == r.history.size());
}

TEST_CASE("optimizer matches a grid search") {
  const DesignConfig c = small(CaseId::kCase1, 50, 300, 300);
  const auto grid = grid_search(c, 11);
  REQUIRE(grid.size() == 11);
  const auto best = *std::min_element(grid.begin(), grid.end(),
                                      [](const auto& a, const auto& b) { return a.value < b.value; });
  const auto r = optimize(c);
  CHECK(r.objective.value <= best.value * (1.0 + 1e-3));
  CHECK(std::abs(r.phi_star[0] - best.phi[0]) <= 0.1 + 1e-12);
}

TEST_CASE("ranking is by objective and stable") {
  const DesignConfig c = small(CaseId::kCase4);
  const auto ranked = rank_cases(c, {{CaseId::kCase4}, {CaseId::kCase1}, {CaseId::kCase4}});
  REQUIRE(ranked.size() == 3);
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    CHECK(ranked[i - 1].result.objective.value <= ranked[i].result.objective.value);
  }
  std::vector<std::size_t> fours;
  for (std::size_t i = 0; i < 3; ++i) {
    if (ranked[i].case_name == "Case4") fours.push_back(i);
  }
  REQUIRE(fours.size() == 2);
  CHECK(ranked[fours[0]].result.objective.value == ranked[fours[1]].result.objective.value);
}

TEST_CASE("design settings are checked") {
  DesignConfig c = small(CaseId::kCase4);
  c.M = 1;
  CHECK_THROWS_AS(evaluate_objective(c, {}), ParameterError);
  c = small(CaseId::kCase4);
  c.M_u = 0;
  CHECK_THROWS_AS(evaluate_objective(c, {}), ParameterError);
  c = small(CaseId::kCase1);
  CHECK_THROWS_AS(grid_search(DesignConfig{small(CaseId::kCase3)}), ParameterError);
}
