#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "scalar_problem.hpp"
#include "udeoc/error.hpp"
#include "udeoc/fbs.hpp"
#include "udeoc/problem.hpp"

using namespace udeoc;
using udeoc::testing::ScalarProblem;

TEST_CASE("initial sweep state") {
  const TherapyProblem p{TherapySpec{}};
  const SweepState s = initial_sweep_state(p, 100);
  CHECK(s.controls.size() == 101);
  CHECK(s.controls.at(50)[0] == 2.0);
  CHECK(s.controls.at(50)[1] == -1.0);
  CHECK(s.iteration == 0);
  const double guess[] = {1.0, 1.0};
  CHECK(initial_sweep_state(p, 10, guess).controls.at(3)[1] == 1.0);
  const LqProblem lq;
  CHECK(initial_sweep_state(lq, 10).controls.at(0)[0] == 0.0);
  const double bad[] = {1.0};
  CHECK_THROWS_AS(initial_sweep_state(p, 10, bad), InvalidArgument);
}

TEST_CASE("sweep on the LQ problem converges to the Riccati solution") {
  const LqProblem lq;
  auto [state, report] = sweep_solve(initial_sweep_state(lq, 1000, {}, 0.5), lq);
  REQUIRE(report.converged);
  CHECK(report.iterations.size() < 100);
  double err_u = 0.0, err_l = 0.0;
  for (std::size_t i = 0; i < state.controls.size(); ++i) {
    const double t = state.controls.times[i];
    err_u = std::max(err_u, std::abs(state.controls.at(i)[0] - lq.optimal_control(t)));
    err_l = std::max(err_l, std::abs(state.adjoint.at(i)[0] - lq.optimal_costate(t)));
  }
  CHECK(err_u < 1e-4);
  CHECK(err_l < 1e-4);
  CHECK(std::abs(state.objective.total - lq.optimal_objective()) < 1e-3);
  CHECK(report.iterations.back().control_delta < 1e-4);
  // on a converged sweep the stationarity residual is below 10 tol
  CHECK(pmp_residual(lq, state.controls).max_residual < 10 * 1e-4);

  // the costate of the Riccati control is exact to the integrator error
  auto [fine, fine_report] = sweep_solve(initial_sweep_state(lq, 1000), lq, SweepOptions{500, 1e-10, 1e12});
  REQUIRE(fine_report.converged);
  for (std::size_t i = 0; i < fine.controls.size(); i += 50) {
    const double t = fine.controls.times[i];
    CHECK(std::abs(fine.adjoint.at(i)[0] - lq.optimal_costate(t)) < 1e-5);
  }
}

TEST_CASE("infinite tolerance stops after one iteration") {
  const LqProblem lq;
  SweepOptions o;
  o.tol = std::numeric_limits<double>::infinity();
  auto [state, report] = sweep_solve(initial_sweep_state(lq, 100), lq, o);
  CHECK(report.iterations.size() == 1);
  CHECK(report.converged);
  CHECK(state.iteration == 1);
  o.max_iters = 0;
  CHECK_THROWS_AS(sweep_solve(initial_sweep_state(lq, 100), lq, o), InvalidArgument);
}

TEST_CASE("sweeps are deterministic") {
  const TherapyProblem p{TherapySpec{}};
  SweepOptions o;
  o.max_iters = 5;
  auto [a, ra] = sweep_solve(initial_sweep_state(p, 4000), p, o);
  auto [b, rb] = sweep_solve(initial_sweep_state(p, 4000), p, o);
  std::ostringstream sa, sb;
  write_sweep_report(sa, ra);
  write_sweep_report(sb, rb);
  CHECK(sa.str() == sb.str());
  CHECK(a.controls.values == b.controls.values);
  CHECK(sa.str().rfind("iter,control_delta,max_abs_lambda,objective\n", 0) == 0);
}

TEST_CASE("zero toxicity weight gives bang-bang updates") {
  TherapySpec s;
  s.weights.c1 = s.weights.c2 = 0.0;
  const TherapyProblem p{s};
  SweepState st = initial_sweep_state(p, 4000, {}, 1.0);
  st = sweep_iterate(st, p);
  for (std::size_t i = 0; i < st.controls.size(); ++i) {
    const auto u = st.controls.at(i);
    for (std::size_t c = 0; c < 2; ++c) CHECK((u[c] == p.control_lower(c) || u[c] == p.control_upper(c)));
  }
  // a vanishing switching function keeps the no-treatment value
  std::vector<double> u(2);
  const std::vector<double> y = {500, 1, 1, 5, 5}, lambda(5, 0.0);
  p.minimize_hamiltonian(0.0, y, lambda, u);
  CHECK(u == s.bounds.no_treatment());
}

TEST_CASE("relaxation blends the candidate with the previous control") {
  const LqProblem lq;
  const SweepState s0 = initial_sweep_state(lq, 200, {}, 1.0);
  const SweepState full = sweep_iterate(s0, lq);
  SweepState half_start = s0;
  half_start.omega = 0.25;
  const SweepState quarter = sweep_iterate(half_start, lq);
  for (std::size_t i = 0; i < full.controls.size(); ++i)
    CHECK(quarter.controls.at(i)[0] == doctest::Approx(0.25 * full.controls.at(i)[0]).epsilon(1e-12));
}

TEST_CASE("costate blow-up raises an instability error with the iteration") {
  const ScalarProblem unstable(50.0, 1.0, 1.0);
  SweepOptions o;
  o.lambda_limit = 1e10;
  try {
    sweep_solve(initial_sweep_state(unstable, 2000), unstable, o);
    FAIL("expected an instability error");
  } catch (const InstabilityError& e) {
    CHECK(e.iteration() == 1);
    CHECK(e.max_abs_lambda() > 1e10);
  }
  SweepReport progress;
  CHECK_THROWS_AS(sweep_solve(initial_sweep_state(unstable, 2000), unstable, o, &progress), InstabilityError);
  CHECK(progress.iterations.empty());
  CHECK_FALSE(progress.converged);
}
