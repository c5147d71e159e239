#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "udeoc/grad.hpp"
#include "udeoc/objective.hpp"
#include "udeoc/ode.hpp"
#include "udeoc/problem.hpp"

namespace udeoc {

struct SweepState {
  ControlCurve controls;  // uniform grid, N + 1 nodes
  Trajectory states;      // forward solve with the controls of the previous iterate
  CostateCurve adjoint;
  std::size_t iteration = 0;
  double omega = 0.5;
  double control_delta = std::numeric_limits<double>::infinity();
  CostBreakdown objective;  // of the forward solve above
};

/// Constant controls on an N-step grid. An empty guess means the midpoint
/// of each bounded control and 0 for unbounded ones.
SweepState initial_sweep_state(const ControlProblem& problem, std::size_t n_steps,
                               std::span<const double> guess = {}, double omega = 0.5);

/// Forward RK4 with the current controls, backward RK4 for the costate from
/// lambda(t1) = dphi/dy, pointwise Hamiltonian minimization, then
/// u = omega u_candidate + (1 - omega) u_old. control_delta is
/// sum |u_new - u_old| / sum |u_new|.
/// Throws InstabilityError (with the iteration index) when the costate turns
/// non-finite or exceeds lambda_limit.
SweepState sweep_iterate(const SweepState& state, const ControlProblem& problem,
                         double lambda_limit = 1e12);

struct SweepRecord {
  std::size_t iter = 0;
  double control_delta = 0.0;
  double max_abs_lambda = 0.0;
  double objective = 0.0;
};

struct SweepReport {
  std::vector<SweepRecord> iterations;
  bool converged = false;
  std::size_t omega_halvings = 0;
  std::string message;
};

struct SweepOptions {
  std::size_t max_iters = 500;
  double tol = 1e-4;
  double lambda_limit = 1e12;

  friend bool operator==(const SweepOptions&, const SweepOptions&) = default;
};

/// Iterates until control_delta < tol or max_iters; omega is halved when the
/// delta grows on two consecutive iterations. When `progress` is given it
/// mirrors the report as iterations complete, so it survives an
/// InstabilityError.
std::pair<SweepState, SweepReport> sweep_solve(SweepState initial, const ControlProblem& problem,
                                               const SweepOptions& options = {},
                                               SweepReport* progress = nullptr);

/// CSV `iter,control_delta,max_abs_lambda,objective`.
void write_sweep_report(std::ostream& out, const SweepReport& report);

}  // namespace udeoc
