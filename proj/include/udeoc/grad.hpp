#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "udeoc/mlp.hpp"
#include "udeoc/objective.hpp"
#include "udeoc/ode.hpp"
#include "udeoc/problem.hpp"

namespace udeoc {

/// Controls at the 2N + 1 half-step times t0 + j h / 2 of an N-step RK4 grid.
struct StageControls {
  std::size_t n_steps = 0;
  std::size_t dim = 0;
  double t0 = 0.0, t1 = 0.0;
  std::vector<double> times;    // 2N + 1
  std::vector<double> u;        // (2N + 1) x dim, sample-major
  std::vector<double> du_draw;  // same layout; empty for grid controls
  BatchCache cache;             // network pass that produced u, if any

  std::span<const double> at(std::size_t j) const { return {u.data() + j * dim, dim}; }
  /// Node controls (even half-steps) as a curve.
  ControlCurve node_curve() const;
};

/// Half-step times t0 + (t1 - t0) j / (2N).
std::vector<double> half_step_times(double t0, double t1, std::size_t n_steps);

/// Network controls (one batched pass) on the RK4 stage times.
StageControls network_controls(const MlpParams& params, const ControlProblem& problem,
                               std::size_t n_steps);
/// Controls from a uniform grid curve; midpoints by linear interpolation.
StageControls curve_controls(const ControlCurve& curve);

/// Forward RK4 with every stage state kept for the reverse sweep.
struct Rk4Tape {
  std::size_t n_steps = 0;
  std::size_t dim = 0;
  double h = 0.0;
  std::vector<double> times;   // N + 1 nodes
  std::vector<double> nodes;   // (N + 1) x dim
  std::vector<double> stages;  // N x 4 x dim: Y1..Y4 of each step

  std::span<const double> node(std::size_t i) const { return {nodes.data() + i * dim, dim}; }
  std::span<const double> stage(std::size_t i, std::size_t s) const {
    return {stages.data() + (4 * i + s) * dim, dim};
  }
  Trajectory trajectory(const StageControls& controls) const;
};

/// Throws DivergenceError on a non-finite state.
Rk4Tape integrate_controlled(const ControlProblem& problem, const StageControls& controls);

/// Running-cost rule on the RK4 grid: node trapezoid, or the RK4 weights
/// (1, 2, 2, 1) h / 6 applied to the stage states, i.e. the cost integrated
/// as an extra state by the same scheme.
enum class Quadrature { kTrapezoid, kRk4Stages };
std::string quadrature_name(Quadrature q);
/// "trapezoid" or "rk4"; throws InvalidArgument otherwise.
Quadrature parse_quadrature(const std::string& name);

/// Running cost plus terminal cost of a taped solve.
CostBreakdown tape_objective(const ControlProblem& problem, const Rk4Tape& tape,
                             const StageControls& controls,
                             Quadrature quadrature = Quadrature::kRk4Stages);

/// Discretized objective of a control network.
CostBreakdown network_objective(const MlpParams& params, const ControlProblem& problem,
                                std::size_t n_steps, Quadrature quadrature = Quadrature::kRk4Stages);

enum class GradientEngine { kDiscrete, kContinuous, kFiniteDifference };
std::string engine_name(GradientEngine engine);

struct GradientReport {
  std::vector<double> gradient;  // flattened like MlpParams::flatten()
  GradientEngine engine = GradientEngine::kDiscrete;
  CostBreakdown objective;

  MlpParams shaped(const MlpParams& like) const { return like.with_values(gradient); }
};

/// Exact gradient of network_objective by reverse accumulation through the
/// RK4 stages, the control transform and the network.
GradientReport grad_discrete(const MlpParams& params, const ControlProblem& problem,
                             std::size_t n_steps, Quadrature quadrature = Quadrature::kRk4Stages);

/// Central differences of network_objective, one parameter at a time.
GradientReport grad_fd(const MlpParams& params, const ControlProblem& problem, std::size_t n_steps,
                       double h = 1e-5, Quadrature quadrature = Quadrature::kRk4Stages);

struct ContinuousOptions {
  double rtol = 1e-9;
  double atol = 1e-11;
  double max_step = std::numeric_limits<double>::infinity();
  std::size_t quadrature_intervals = 20000;  // Simpson, even
  double lambda_limit = 1e10;
};

/// Costate lambda' = -(df/dy + dg/dy^T lambda) from lambda(t1) = dphi/dy,
/// integrated backward with adaptive steps, then
/// dJ/dp = int (df/du + dg/du^T lambda) du/dp dt by Simpson quadrature.
/// Throws InstabilityError when lambda leaves [-lambda_limit, lambda_limit]
/// or turns non-finite.
GradientReport grad_continuous(const MlpParams& params, const ControlProblem& problem,
                               const ContinuousOptions& options = {});

/// Costate on the RK4 grid of a taped forward solve, by backward RK4 with
/// cubic Hermite state midpoints. Throws InstabilityError as above.
struct CostateCurve {
  std::size_t dim = 0;
  std::vector<double> times;
  std::vector<double> lambda;  // (N + 1) x dim
  double max_abs = 0.0;

  std::span<const double> at(std::size_t i) const { return {lambda.data() + i * dim, dim}; }
};
CostateCurve solve_costate(const ControlProblem& problem, const Rk4Tape& tape,
                           const StageControls& controls,
                           double lambda_limit = std::numeric_limits<double>::infinity());

/// Control-space stationarity residual dH/du along a trajectory, with
/// components at an active bound (and pushing outward) projected out. A bound
/// is active when the control is within active_tol (M - m) of it.
struct PmpResidual {
  std::size_t dim = 0;
  std::vector<double> times;
  std::vector<double> hamiltonian;
  std::vector<double> residual;  // (N + 1) x dim, signed, after projection
  double max_residual = 0.0;     // max |residual| over the grid (or window)

  /// max |residual| over nodes with t in [t0 + trim T, t1 - trim T].
  double max_over(double trim) const;
};

PmpResidual pmp_residual(const MlpParams& params, const ControlProblem& problem,
                         std::size_t n_steps, double active_tol = 1e-6);
PmpResidual pmp_residual(const ControlProblem& problem, const ControlCurve& controls,
                         double active_tol = 1e-6);

/// CSV `t,H,res_u1,...`.
void write_pmp_csv(std::ostream& out, const PmpResidual& residual);

double max_abs(std::span<const double> v);
/// max_i |a_i - b_i| / max(|b_i|, floor).
double max_relative_error(std::span<const double> a, std::span<const double> b, double floor);

}  // namespace udeoc
