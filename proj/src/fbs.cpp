#include "udeoc/fbs.hpp"

#include <cmath>
#include <ostream>

#include "udeoc/error.hpp"
#include "util.hpp"

namespace udeoc {

SweepState initial_sweep_state(const ControlProblem& problem, std::size_t n_steps,
                               std::span<const double> guess, double omega) {
  if (n_steps == 0) throw InvalidArgument("sweep grid needs at least one step");
  if (!(omega > 0.0 && omega <= 1.0)) throw InvalidArgument("relaxation factor must be in (0, 1]");
  const std::size_t m = problem.control_dim();
  std::vector<double> u0(m);
  if (guess.empty()) {
    for (std::size_t c = 0; c < m; ++c) {
      const double lo = problem.control_lower(c), hi = problem.control_upper(c);
      u0[c] = std::isfinite(lo) && std::isfinite(hi) ? 0.5 * (lo + hi) : 0.0;
    }
  } else {
    if (guess.size() != m) throw InvalidArgument("initial guess has the wrong number of controls");
    u0.assign(guess.begin(), guess.end());
    for (std::size_t c = 0; c < m; ++c)
      if (!(u0[c] >= problem.control_lower(c) && u0[c] <= problem.control_upper(c)))
        throw InvalidArgument("initial guess lies outside the control bounds");
  }
  SweepState state;
  state.omega = omega;
  state.controls.dim = m;
  state.controls.times.resize(n_steps + 1);
  const double t0 = problem.t0(), span = problem.t1() - t0;
  for (std::size_t i = 0; i <= n_steps; ++i)
    state.controls.times[i] = t0 + span * static_cast<double>(i) / static_cast<double>(n_steps);
  state.controls.times.back() = problem.t1();
  state.controls.values.reserve((n_steps + 1) * m);
  for (std::size_t i = 0; i <= n_steps; ++i)
    state.controls.values.insert(state.controls.values.end(), u0.begin(), u0.end());
  return state;
}

SweepState sweep_iterate(const SweepState& state, const ControlProblem& problem, double lambda_limit) {
  const std::size_t m = problem.control_dim();
  const StageControls stage = curve_controls(state.controls);
  const Rk4Tape tape = integrate_controlled(problem, stage);

  SweepState next;
  next.iteration = state.iteration + 1;
  next.omega = state.omega;
  next.states = tape.trajectory(stage);
  next.objective = tape_objective(problem, tape, stage);
  try {
    next.adjoint = solve_costate(problem, tape, stage, lambda_limit);
  } catch (const InstabilityError& e) {
    throw InstabilityError(std::string(e.what()) + " (sweep iteration " +
                               std::to_string(next.iteration) + ")",
                           e.time(), e.max_abs_lambda(), static_cast<int>(next.iteration));
  }

  next.controls = state.controls;
  std::vector<double> candidate(m);
  double change = 0.0, size = 0.0;
  for (std::size_t i = 0; i < tape.times.size(); ++i) {
    problem.minimize_hamiltonian(tape.times[i], tape.node(i), next.adjoint.at(i), candidate);
    auto u = next.controls.at(i);
    const auto old = state.controls.at(i);
    for (std::size_t c = 0; c < m; ++c) {
      u[c] = next.omega * candidate[c] + (1.0 - next.omega) * old[c];
      change += std::abs(u[c] - old[c]);
      size += std::abs(u[c]);
    }
  }
  next.control_delta = size > 0.0 ? change / size : change;
  return next;
}

std::pair<SweepState, SweepReport> sweep_solve(SweepState initial, const ControlProblem& problem,
                                               const SweepOptions& options,
                                               SweepReport* progress) {
  if (options.max_iters == 0) throw InvalidArgument("sweep needs max_iters >= 1");
  SweepReport report;
  SweepState state = std::move(initial);
  std::size_t rises = 0;
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < options.max_iters; ++k) {
    state = sweep_iterate(state, problem, options.lambda_limit);
    report.iterations.push_back(
        {state.iteration, state.control_delta, state.adjoint.max_abs, state.objective.total});
    if (progress) *progress = report;
    if (state.control_delta < options.tol) {
      report.converged = true;
      report.message = "converged after " + std::to_string(state.iteration) + " iterations";
      if (progress) *progress = report;
      return {std::move(state), std::move(report)};
    }
    rises = state.control_delta > previous ? rises + 1 : 0;
    previous = state.control_delta;
    if (rises >= 2) {
      state.omega *= 0.5;
      ++report.omega_halvings;
      rises = 0;
    }
  }
  report.message = "no convergence within " + std::to_string(options.max_iters) + " iterations";
  if (progress) *progress = report;
  return {std::move(state), std::move(report)};
}

void write_sweep_report(std::ostream& out, const SweepReport& report) {
  out << "iter,control_delta,max_abs_lambda,objective\n";
  for (const SweepRecord& r : report.iterations)
    out << r.iter << ',' << format_double(r.control_delta) << ',' << format_double(r.max_abs_lambda)
        << ',' << format_double(r.objective) << '\n';
}

}  // namespace udeoc
