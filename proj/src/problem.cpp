#include "udeoc/problem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "udeoc/error.hpp"

namespace udeoc {

std::vector<std::string> ControlProblem::state_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < state_dim(); ++i) names.push_back("y" + std::to_string(i + 1));
  return names;
}

std::vector<std::string> ControlProblem::control_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < control_dim(); ++i) names.push_back("u" + std::to_string(i + 1));
  return names;
}

CostBreakdown evaluate_objective(const ControlProblem& problem, const Trajectory& trajectory,
                                 const ControlCurve& controls) {
  if (trajectory.empty()) throw InvalidArgument("empty trajectory");
  if (controls.dim != problem.control_dim())
    throw InvalidArgument("control curve does not match the problem");
  require_same_grid(trajectory.times(), controls.times);
  const std::size_t n = trajectory.size();
  std::vector<double> state_cost(n), toxicity(n);
  for (std::size_t i = 0; i < n; ++i) {
    const RunningCostSplit f = problem.running_cost(trajectory.times()[i], trajectory.state(i),
                                                    controls.at(i));
    state_cost[i] = f.state;
    toxicity[i] = f.toxicity;
  }
  CostBreakdown out;
  out.running_state = trapezoid(trajectory.times(), state_cost);
  out.running_toxicity = trapezoid(trajectory.times(), toxicity);
  out.terminal = problem.terminal_cost(trajectory.back());
  out.total = out.running_state + out.running_toxicity + out.terminal;
  return out;
}

// ---------------------------------------------------------------------------

void TherapySpec::validate() const {
  params.validate();
  bounds.validate();
  weights.validate();
  coupling.validate();
  if (!std::isfinite(t_final) || !(t_final > 0.0)) throw InvalidArgument("t_f must be > 0");
  for (double v : initial)
    if (!std::isfinite(v)) throw InvalidArgument("initial state must be finite");
  if (model == TherapyModel::kCombo && !bounds.has_chemo)
    throw InvalidArgument("combination model needs chemotherapy bounds m3, M3");
  if (model == TherapyModel::kImmuno && bounds.has_chemo)
    throw InvalidArgument("immunotherapy model takes two controls; chemotherapy bounds given");
}

TherapyProblem::TherapyProblem(TherapySpec spec) : spec_(std::move(spec)) { spec_.validate(); }

std::vector<double> TherapyProblem::initial_state() const {
  return {spec_.initial.begin(), spec_.initial.end()};
}

std::vector<std::string> TherapyProblem::state_names() const { return {"C", "A", "I", "E", "S"}; }

void TherapyProblem::dynamics(double t, std::span<const double> y, std::span<const double> u,
                              std::span<double> dydt) const {
  const StateVector s = to_state(y);
  const StateVector d = spec_.model == TherapyModel::kCombo
                            ? combo_rhs(t, s, u[0], u[1], u[2], spec_.params, spec_.coupling)
                            : immuno_rhs(t, s, u[0], u[1], spec_.params);
  std::copy(d.begin(), d.end(), dydt.begin());
}

void TherapyProblem::dynamics_jacobians(double /*t*/, std::span<const double> y,
                                        std::span<const double> u, std::span<double> dg_dy,
                                        std::span<double> dg_du) const {
  const StateVector s = to_state(y);
  if (spec_.model == TherapyModel::kCombo) {
    const StateJacobian J = combo_jacobian(s, u[0], u[1], u[2], spec_.params, spec_.coupling);
    const auto G = combo_control_jacobian(s, u[0], u[1], u[2], spec_.params, spec_.coupling);
    std::copy(J.begin(), J.end(), dg_dy.begin());
    std::copy(G.begin(), G.end(), dg_du.begin());
  } else {
    const StateJacobian J = immuno_jacobian(s, u[0], u[1], spec_.params);
    const auto G = immuno_control_jacobian(s, u[0], u[1], spec_.params);
    std::copy(J.begin(), J.end(), dg_dy.begin());
    std::copy(G.begin(), G.end(), dg_du.begin());
  }
}

RunningCostSplit TherapyProblem::running_cost(double /*t*/, std::span<const double> y,
                                              std::span<const double> u) const {
  return {running_state_cost(to_state(y), spec_.weights),
          running_toxicity_cost(u, spec_.weights, spec_.bounds)};
}

void TherapyProblem::running_cost_gradients(double /*t*/, std::span<const double> /*y*/,
                                            std::span<const double> u, std::span<double> df_dy,
                                            std::span<double> df_du) const {
  const ObjectiveWeights& w = spec_.weights;
  std::fill(df_dy.begin(), df_dy.end(), 0.0);
  df_dy[kC] = w.a;
  df_dy[kE] = -w.b;
  df_dy[kS] = w.c;
  const std::vector<double> v = doses(u, spec_.bounds);
  df_du[0] = 2.0 * w.c1 * v[0];
  df_du[1] = -2.0 * w.c2 * v[1];
  if (spec_.bounds.has_chemo) df_du[2] = -2.0 * w.c3 * v[2];
}

double TherapyProblem::terminal_cost(std::span<const double> y) const {
  return udeoc::terminal_cost(to_state(y), spec_.weights);
}

void TherapyProblem::terminal_gradient(std::span<const double> /*y*/, std::span<double> grad) const {
  const StateVector g = udeoc::terminal_gradient(spec_.weights);
  std::copy(g.begin(), g.end(), grad.begin());
}

void TherapyProblem::transform_controls(std::span<const double> raw, std::span<double> u,
                                        std::span<double> du_draw) const {
  const std::vector<double> mapped = control_transform(raw, spec_.bounds);
  std::copy(mapped.begin(), mapped.end(), u.begin());
  for (std::size_t i = 0; i < mapped.size(); ++i)
    du_draw[i] = 0.5 * (spec_.bounds.upper(i) - spec_.bounds.lower(i));
}

namespace {

// argmin over [lo, hi] of weight (u - anchor)^2 + slope u; bang-bang when
// weight is zero (ties go to `rest`, the no-treatment end).
double MinimizeQuadratic(double weight, double anchor, double slope, double lo, double hi,
                         double rest) {
  if (weight > 0.0) return std::clamp(anchor - slope / (2.0 * weight), lo, hi);
  if (slope > 0.0) return lo;
  if (slope < 0.0) return hi;
  return rest;
}

template <typename F>
double MinimizeScalar(F&& h, double lo, double hi) {
  constexpr int kGrid = 200;
  int best = 0;
  double best_value = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= kGrid; ++k) {
    const double value = h(lo + (hi - lo) * k / kGrid);
    if (value < best_value) {
      best_value = value;
      best = k;
    }
  }
  double a = lo + (hi - lo) * std::max(best - 1, 0) / kGrid;
  double b = lo + (hi - lo) * std::min(best + 1, kGrid) / kGrid;
  const double inv_phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = h(x1), f2 = h(x2);
  for (int it = 0; it < 80 && b - a > 1e-13 * (hi - lo); ++it) {
    if (f1 < f2) {
      b = x2; x2 = x1; f2 = f1;
      x1 = b - inv_phi * (b - a); f1 = h(x1);
    } else {
      a = x1; x1 = x2; f1 = f2;
      x2 = a + inv_phi * (b - a); f2 = h(x2);
    }
  }
  const double x = 0.5 * (a + b);
  const double candidates[] = {x, lo + (hi - lo) * best / kGrid};
  return h(candidates[0]) <= h(candidates[1]) ? candidates[0] : candidates[1];
}

}  // namespace

void TherapyProblem::minimize_hamiltonian(double /*t*/, std::span<const double> y,
                                          std::span<const double> lambda,
                                          std::span<double> u) const {
  const ImmunoParams& p = spec_.params;
  const ControlBounds& bd = spec_.bounds;
  const ObjectiveWeights& w = spec_.weights;
  const double C = y[kC], A = y[kA], I = y[kI], E = y[kE], S = y[kS];
  const double dl = lambda[kE] - lambda[kS];

  // c1 (u1 - m1)^2 + u1 beta A I E S (lambda_E - lambda_S)
  u[0] = MinimizeQuadratic(w.c1, bd.m1, p.beta * A * I * E * S * dl, bd.m1, bd.M1, bd.m1);
  // c2 (u2 - M2)^2 - u2 gamma E S (lambda_E - lambda_S)
  u[1] = MinimizeQuadratic(w.c2, bd.M2, -p.gamma * E * S * dl, bd.m2, bd.M2, bd.M2);

  if (bd.has_chemo) {
    const double growth = growth_rate(C, p) * C;
    auto h = [&](double u3) {
      const ChemoEffects fx = chemo_effects(u3, spec_.coupling);
      const double v3 = bd.M3 - u3;
      return w.c3 * v3 * v3 + lambda[kC] * u3 * growth + lambda[kA] * fx.u_A * p.r_A * C +
             lambda[kI] * fx.u_I * p.r_I * C * E;
    };
    u[2] = MinimizeScalar(h, bd.m3, bd.M3);
  }
}

// ---------------------------------------------------------------------------

LqProblem::LqProblem(double t_final, double y0, double q, double r)
    : t_final_(t_final), y0_(y0), q_(q), r_(r) {
  if (!std::isfinite(t_final) || !(t_final > 0.0)) throw InvalidArgument("LQ horizon must be > 0");
  if (!std::isfinite(y0)) throw InvalidArgument("LQ initial state must be finite");
  if (!(q > 0.0) || !(r > 0.0)) throw InvalidArgument("LQ weights must be > 0");
}

void LqProblem::dynamics(double, std::span<const double>, std::span<const double> u,
                         std::span<double> dydt) const {
  dydt[0] = u[0];
}

void LqProblem::dynamics_jacobians(double, std::span<const double>, std::span<const double>,
                                   std::span<double> dg_dy, std::span<double> dg_du) const {
  dg_dy[0] = 0.0;
  dg_du[0] = 1.0;
}

RunningCostSplit LqProblem::running_cost(double, std::span<const double> y,
                                         std::span<const double> u) const {
  return {q_ * y[0] * y[0], r_ * u[0] * u[0]};
}

void LqProblem::running_cost_gradients(double, std::span<const double> y, std::span<const double> u,
                                       std::span<double> df_dy, std::span<double> df_du) const {
  df_dy[0] = 2.0 * q_ * y[0];
  df_du[0] = 2.0 * r_ * u[0];
}

double LqProblem::terminal_cost(std::span<const double>) const { return 0.0; }

void LqProblem::terminal_gradient(std::span<const double>, std::span<double> grad) const {
  grad[0] = 0.0;
}

double LqProblem::control_lower(std::size_t) const { return -std::numeric_limits<double>::infinity(); }
double LqProblem::control_upper(std::size_t) const { return std::numeric_limits<double>::infinity(); }

void LqProblem::transform_controls(std::span<const double> raw, std::span<double> u,
                                   std::span<double> du_draw) const {
  u[0] = raw[0];
  du_draw[0] = 1.0;
}

void LqProblem::minimize_hamiltonian(double, std::span<const double>, std::span<const double> lambda,
                                     std::span<double> u) const {
  u[0] = -lambda[0] / (2.0 * r_);
}

// P' = -q + P^2 / r, P(T) = 0.
double LqProblem::riccati_gain(double t) const {
  const double omega = std::sqrt(q_ / r_);
  return std::sqrt(q_ * r_) * std::tanh(omega * (t_final_ - t));
}

double LqProblem::optimal_state(double t) const {
  const double omega = std::sqrt(q_ / r_);
  return y0_ * std::cosh(omega * (t_final_ - t)) / std::cosh(omega * t_final_);
}

double LqProblem::optimal_control(double t) const { return -riccati_gain(t) * optimal_state(t) / r_; }

double LqProblem::optimal_costate(double t) const { return 2.0 * riccati_gain(t) * optimal_state(t); }

double LqProblem::optimal_objective() const { return riccati_gain(0.0) * y0_ * y0_; }

}  // namespace udeoc
