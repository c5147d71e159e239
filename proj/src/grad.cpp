#include "udeoc/grad.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "udeoc/error.hpp"
#include "util.hpp"

namespace udeoc {

std::vector<double> half_step_times(double t0, double t1, std::size_t n_steps) {
  const std::size_t count = 2 * n_steps + 1;
  std::vector<double> times(count);
  for (std::size_t j = 0; j < count; ++j)
    times[j] = t0 + (t1 - t0) * static_cast<double>(j) / static_cast<double>(2 * n_steps);
  times.back() = t1;
  return times;
}

ControlCurve StageControls::node_curve() const {
  ControlCurve curve;
  curve.dim = dim;
  curve.times.reserve(n_steps + 1);
  curve.values.reserve((n_steps + 1) * dim);
  for (std::size_t i = 0; i <= n_steps; ++i) {
    curve.times.push_back(times[2 * i]);
    const auto row = at(2 * i);
    curve.values.insert(curve.values.end(), row.begin(), row.end());
  }
  return curve;
}

StageControls network_controls(const MlpParams& params, const ControlProblem& problem,
                               std::size_t n_steps) {
  if (n_steps == 0) throw InvalidArgument("need at least one RK4 step");
  const std::size_t m = problem.control_dim();
  if (params.output_dim() != m)
    throw InvalidArgument("network output width " + std::to_string(params.output_dim()) +
                          " does not match " + std::to_string(m) + " controls");
  StageControls sc;
  sc.n_steps = n_steps;
  sc.dim = m;
  sc.t0 = problem.t0();
  sc.t1 = problem.t1();
  sc.times = half_step_times(sc.t0, sc.t1, n_steps);
  const std::size_t batch = sc.times.size();
  sc.cache = forward_batch(params, time_inputs(sc.times, params.input_dim()), batch);
  const auto out = sc.cache.output();
  sc.u.resize(batch * m);
  sc.du_draw.resize(batch * m);
  std::vector<double> raw(m);
  for (std::size_t j = 0; j < batch; ++j) {
    for (std::size_t c = 0; c < m; ++c) raw[c] = out[c * batch + j];
    problem.transform_controls(raw, {sc.u.data() + j * m, m}, {sc.du_draw.data() + j * m, m});
  }
  return sc;
}

namespace {

// Returns N when the times are uniform to rounding.
std::size_t UniformSteps(std::span<const double> times) {
  if (times.size() < 2) throw InvalidArgument("control curve needs at least two nodes");
  const std::size_t n = times.size() - 1;
  const double t0 = times.front(), span = times.back() - t0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double expected = t0 + span * static_cast<double>(i) / static_cast<double>(n);
    if (std::abs(times[i] - expected) > 1e-9 * std::max(1.0, std::abs(span)))
      throw InvalidArgument("control curve grid is not uniform");
  }
  return n;
}

}  // namespace

StageControls curve_controls(const ControlCurve& curve) {
  const std::size_t n = UniformSteps(curve.times);
  const std::size_t m = curve.dim;
  if (curve.values.size() != curve.times.size() * m)
    throw InvalidArgument("control curve values do not match its grid");
  StageControls sc;
  sc.n_steps = n;
  sc.dim = m;
  sc.t0 = curve.times.front();
  sc.t1 = curve.times.back();
  sc.times = half_step_times(sc.t0, sc.t1, n);
  sc.u.resize(sc.times.size() * m);
  for (std::size_t i = 0; i <= n; ++i)
    for (std::size_t c = 0; c < m; ++c) {
      sc.u[2 * i * m + c] = curve.values[i * m + c];
      if (i < n) sc.u[(2 * i + 1) * m + c] = 0.5 * (curve.values[i * m + c] + curve.values[(i + 1) * m + c]);
    }
  return sc;
}

Trajectory Rk4Tape::trajectory(const StageControls& controls) const {
  Trajectory traj(dim, controls.dim);
  traj.reserve(n_steps + 1);
  for (std::size_t i = 0; i <= n_steps; ++i) traj.push_back(times[i], node(i), controls.at(2 * i));
  return traj;
}

namespace {

bool AllFinite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::vector<double> TrapezoidWeights(std::span<const double> times) {
  std::vector<double> w(times.size(), 0.0);
  for (std::size_t i = 1; i < times.size(); ++i) {
    const double half = 0.5 * (times[i] - times[i - 1]);
    w[i - 1] += half;
    w[i] += half;
  }
  return w;
}

}  // namespace

Rk4Tape integrate_controlled(const ControlProblem& problem, const StageControls& controls) {
  const std::size_t n = problem.state_dim();
  const std::size_t N = controls.n_steps;
  if (controls.dim != problem.control_dim()) throw InvalidArgument("controls do not match the problem");
  if (controls.times.size() != 2 * N + 1) throw InvalidArgument("stage controls have the wrong length");

  Rk4Tape tape;
  tape.n_steps = N;
  tape.dim = n;
  tape.h = (controls.t1 - controls.t0) / static_cast<double>(N);
  tape.times.resize(N + 1);
  tape.nodes.resize((N + 1) * n);
  tape.stages.resize(4 * N * n);
  for (std::size_t i = 0; i <= N; ++i) tape.times[i] = controls.times[2 * i];

  const double h = tape.h;
  std::vector<double> y = problem.initial_state();
  if (y.size() != n) throw InvalidArgument("initial state has the wrong width");
  if (!AllFinite(y)) throw DivergenceError("initial state is not finite", controls.t0);
  std::copy(y.begin(), y.end(), tape.nodes.begin());
  std::vector<double> k1(n), k2(n), k3(n), k4(n);
  for (std::size_t i = 0; i < N; ++i) {
    double* Y = tape.stages.data() + 4 * i * n;
    const double ta = controls.times[2 * i], tb = controls.times[2 * i + 1], tc = controls.times[2 * i + 2];
    std::copy(y.begin(), y.end(), Y);
    problem.dynamics(ta, {Y, n}, controls.at(2 * i), k1);
    for (std::size_t k = 0; k < n; ++k) Y[n + k] = y[k] + 0.5 * h * k1[k];
    problem.dynamics(tb, {Y + n, n}, controls.at(2 * i + 1), k2);
    for (std::size_t k = 0; k < n; ++k) Y[2 * n + k] = y[k] + 0.5 * h * k2[k];
    problem.dynamics(tb, {Y + 2 * n, n}, controls.at(2 * i + 1), k3);
    for (std::size_t k = 0; k < n; ++k) Y[3 * n + k] = y[k] + h * k3[k];
    problem.dynamics(tc, {Y + 3 * n, n}, controls.at(2 * i + 2), k4);
    for (std::size_t k = 0; k < n; ++k) y[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
    if (!AllFinite(y))
      throw DivergenceError("state became non-finite at t = " + format_double(tc), tc);
    std::copy(y.begin(), y.end(), tape.nodes.begin() + (i + 1) * n);
  }
  return tape;
}

std::string quadrature_name(Quadrature q) {
  return q == Quadrature::kRk4Stages ? "rk4" : "trapezoid";
}

Quadrature parse_quadrature(const std::string& name) {
  if (name == "trapezoid") return Quadrature::kTrapezoid;
  if (name == "rk4") return Quadrature::kRk4Stages;
  throw InvalidArgument("unknown quadrature '" + name + "' (expected trapezoid or rk4)");
}

namespace {

// Stage s of step i uses half-step control 2i + offset[s], weight kStageWeight[s] h.
constexpr std::size_t kStageOffset[4] = {0, 1, 1, 2};
constexpr double kStageWeight[4] = {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0};

}  // namespace

CostBreakdown tape_objective(const ControlProblem& problem, const Rk4Tape& tape,
                             const StageControls& controls, Quadrature quadrature) {
  CostBreakdown out;
  if (quadrature == Quadrature::kTrapezoid) {
    const std::vector<double> w = TrapezoidWeights(tape.times);
    for (std::size_t i = 0; i <= tape.n_steps; ++i) {
      const RunningCostSplit f = problem.running_cost(tape.times[i], tape.node(i), controls.at(2 * i));
      out.running_state += w[i] * f.state;
      out.running_toxicity += w[i] * f.toxicity;
    }
  } else {
    for (std::size_t i = 0; i < tape.n_steps; ++i)
      for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t j = 2 * i + kStageOffset[s];
        const RunningCostSplit f = problem.running_cost(controls.times[j], tape.stage(i, s), controls.at(j));
        out.running_state += kStageWeight[s] * tape.h * f.state;
        out.running_toxicity += kStageWeight[s] * tape.h * f.toxicity;
      }
  }
  out.terminal = problem.terminal_cost(tape.node(tape.n_steps));
  out.total = out.running_state + out.running_toxicity + out.terminal;
  return out;
}

CostBreakdown network_objective(const MlpParams& params, const ControlProblem& problem,
                                std::size_t n_steps, Quadrature quadrature) {
  const StageControls controls = network_controls(params, problem, n_steps);
  return tape_objective(problem, integrate_controlled(problem, controls), controls, quadrature);
}

std::string engine_name(GradientEngine engine) {
  switch (engine) {
    case GradientEngine::kDiscrete: return "discrete";
    case GradientEngine::kContinuous: return "continuous";
    case GradientEngine::kFiniteDifference: return "finite-difference";
  }
  return "unknown";
}

namespace {

// out += A^T x for row-major A (rows x cols).
void AddTransposeProduct(std::span<const double> A, std::size_t rows, std::size_t cols,
                         std::span<const double> x, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) out[c] += A[r * cols + c] * xr;
  }
}

// Control sensitivities (sample-major) to network output seeds (feature-major).
std::vector<double> OutputSeeds(const StageControls& controls, std::span<const double> u_bar) {
  const std::size_t batch = controls.times.size(), m = controls.dim;
  std::vector<double> seeds(batch * m);
  for (std::size_t j = 0; j < batch; ++j)
    for (std::size_t c = 0; c < m; ++c)
      seeds[c * batch + j] = u_bar[j * m + c] * controls.du_draw[j * m + c];
  return seeds;
}

}  // namespace

GradientReport grad_discrete(const MlpParams& params, const ControlProblem& problem,
                             std::size_t n_steps, Quadrature quadrature) {
  const StageControls controls = network_controls(params, problem, n_steps);
  const Rk4Tape tape = integrate_controlled(problem, controls);
  const std::size_t n = problem.state_dim(), m = problem.control_dim(), N = n_steps;
  const double h = tape.h;
  const bool stage_rule = quadrature == Quadrature::kRk4Stages;
  std::vector<double> w = TrapezoidWeights(tape.times);
  if (stage_rule) std::fill(w.begin(), w.end(), 0.0);

  std::vector<double> u_bar(controls.times.size() * m, 0.0);
  std::vector<double> y_bar(n), next(n), df_dy(n), df_du(m), J(n * n), G(n * m);
  std::vector<double> kb1(n), kb2(n), kb3(n), kb4(n), Yb(n);

  auto add_running = [&](std::size_t i, double* ybar) {
    if (stage_rule) return;
    problem.running_cost_gradients(tape.times[i], tape.node(i), controls.at(2 * i), df_dy, df_du);
    for (std::size_t k = 0; k < n; ++k) ybar[k] += w[i] * df_dy[k];
    for (std::size_t c = 0; c < m; ++c) u_bar[2 * i * m + c] += w[i] * df_du[c];
  };

  problem.terminal_gradient(tape.node(N), y_bar);
  add_running(N, y_bar.data());

  // Back through stage s: Yb = J^T kb (+ stage cost), u_bar[j] += G^T kb.
  auto stage_adjoint = [&](std::size_t i, std::size_t s, std::size_t j, std::span<const double> kb) {
    const auto Y = tape.stage(i, s);
    problem.dynamics_jacobians(controls.times[j], Y, controls.at(j), J, G);
    std::fill(Yb.begin(), Yb.end(), 0.0);
    AddTransposeProduct(J, n, n, kb, Yb.data());
    AddTransposeProduct(G, n, m, kb, u_bar.data() + j * m);
    if (stage_rule) {
      const double ws = kStageWeight[s] * h;
      problem.running_cost_gradients(controls.times[j], Y, controls.at(j), df_dy, df_du);
      for (std::size_t k = 0; k < n; ++k) Yb[k] += ws * df_dy[k];
      for (std::size_t c = 0; c < m; ++c) u_bar[j * m + c] += ws * df_du[c];
    }
  };

  for (std::size_t i = N; i-- > 0;) {
    next = y_bar;  // adjoint of y_{i+1}; becomes that of y_i
    for (std::size_t k = 0; k < n; ++k) {
      kb1[k] = h / 6.0 * y_bar[k];
      kb2[k] = h / 3.0 * y_bar[k];
      kb3[k] = h / 3.0 * y_bar[k];
      kb4[k] = h / 6.0 * y_bar[k];
    }
    stage_adjoint(i, 3, 2 * i + 2, kb4);
    for (std::size_t k = 0; k < n; ++k) { next[k] += Yb[k]; kb3[k] += h * Yb[k]; }
    stage_adjoint(i, 2, 2 * i + 1, kb3);
    for (std::size_t k = 0; k < n; ++k) { next[k] += Yb[k]; kb2[k] += 0.5 * h * Yb[k]; }
    stage_adjoint(i, 1, 2 * i + 1, kb2);
    for (std::size_t k = 0; k < n; ++k) { next[k] += Yb[k]; kb1[k] += 0.5 * h * Yb[k]; }
    stage_adjoint(i, 0, 2 * i, kb1);
    for (std::size_t k = 0; k < n; ++k) next[k] += Yb[k];
    add_running(i, next.data());
    y_bar.swap(next);
  }

  GradientReport report;
  report.engine = GradientEngine::kDiscrete;
  report.objective = tape_objective(problem, tape, controls, quadrature);
  report.gradient = backward_batch(params, controls.cache, OutputSeeds(controls, u_bar));
  return report;
}

GradientReport grad_fd(const MlpParams& params, const ControlProblem& problem, std::size_t n_steps,
                       double h, Quadrature quadrature) {
  if (!(h > 0.0)) throw InvalidArgument("finite-difference step must be > 0");
  std::vector<double> p = params.flatten();
  GradientReport report;
  report.engine = GradientEngine::kFiniteDifference;
  report.objective = network_objective(params, problem, n_steps, quadrature);
  report.gradient.resize(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double saved = p[k];
    p[k] = saved + h;
    const double up = network_objective(params.with_values(p), problem, n_steps, quadrature).total;
    p[k] = saved - h;
    const double down = network_objective(params.with_values(p), problem, n_steps, quadrature).total;
    p[k] = saved;
    report.gradient[k] = (up - down) / (2.0 * h);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Continuous adjoint

namespace {

// Piecewise cubic Hermite interpolant through (t_i, y_i, y'_i).
class HermiteCurve {
 public:
  HermiteCurve(std::size_t dim, std::vector<double> t, std::vector<double> y, std::vector<double> dy)
      : dim_(dim), t_(std::move(t)), y_(std::move(y)), dy_(std::move(dy)) {}

  void eval(double t, std::span<double> out, std::size_t& hint) const {
    const std::size_t last = t_.size() - 1;
    if (last == 0) {
      std::copy_n(y_.begin(), dim_, out.begin());
      return;
    }
    std::size_t i = std::min(hint, last - 1);
    if (t < t_[i] || t > t_[i + 1]) {
      i = static_cast<std::size_t>(std::upper_bound(t_.begin(), t_.end(), t) - t_.begin());
      i = std::clamp<std::size_t>(i, 1, last) - 1;
    }
    hint = i;
    const double h = t_[i + 1] - t_[i];
    const double s = std::clamp((t - t_[i]) / h, 0.0, 1.0);
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    const double* ya = &y_[i * dim_];
    const double* yb = &y_[(i + 1) * dim_];
    const double* da = &dy_[i * dim_];
    const double* db = &dy_[(i + 1) * dim_];
    for (std::size_t k = 0; k < dim_; ++k)
      out[k] = h00 * ya[k] + h10 * h * da[k] + h01 * yb[k] + h11 * h * db[k];
  }

 private:
  std::size_t dim_;
  std::vector<double> t_, y_, dy_;
};

HermiteCurve MakeHermite(const Trajectory& traj, const OdeRhs& rhs) {
  const std::size_t n = traj.dim();
  std::vector<double> dy(traj.size() * n);
  for (std::size_t i = 0; i < traj.size(); ++i)
    rhs(traj.times()[i], traj.state(i), {dy.data() + i * n, n});
  return HermiteCurve(n, traj.times(), traj.states(), std::move(dy));
}

// Pointwise network control.
class PointwiseControl {
 public:
  PointwiseControl(const MlpParams& params, const ControlProblem& problem)
      : params_(params), problem_(problem), input_(params.input_dim()),
        raw_(problem.control_dim()), slope_(problem.control_dim()) {}

  void eval(double t, std::span<double> u) {
    std::fill(input_.begin(), input_.end(), t);
    const auto [out, cache] = forward(params_, input_);
    std::copy(out.begin(), out.end(), raw_.begin());
    problem_.transform_controls(raw_, u, slope_);
  }

 private:
  const MlpParams& params_;
  const ControlProblem& problem_;
  std::vector<double> input_, raw_, slope_;
};

}  // namespace

GradientReport grad_continuous(const MlpParams& params, const ControlProblem& problem,
                               const ContinuousOptions& options) {
  const std::size_t n = problem.state_dim(), m = problem.control_dim();
  if (params.output_dim() != m) throw InvalidArgument("network does not match the problem");
  if (options.quadrature_intervals < 2 || options.quadrature_intervals % 2 != 0)
    throw InvalidArgument("Simpson quadrature needs an even number of intervals >= 2");
  const double t0 = problem.t0(), t1 = problem.t1();
  Dp45Options dp;
  dp.rtol = options.rtol;
  dp.atol = options.atol;
  dp.max_step = options.max_step;

  // Forward.
  PointwiseControl control(params, problem);
  std::vector<double> u_fwd(m);
  OdeProblem forward_problem;
  forward_problem.t0 = t0;
  forward_problem.t1 = t1;
  forward_problem.y0 = problem.initial_state();
  forward_problem.rhs = [&](double t, std::span<const double> y, std::span<double> dydt) {
    control.eval(t, u_fwd);
    problem.dynamics(t, y, u_fwd, dydt);
  };
  const Trajectory forward_traj = solve_dp45(forward_problem, dp);
  const HermiteCurve state(MakeHermite(forward_traj, forward_problem.rhs));

  // Backward in s = t1 - t: d lambda/ds = df/dy + dg/dy^T lambda.
  std::vector<double> y(n), u(m), df_dy(n), df_du(m), J(n * n), G(n * m);
  std::size_t state_hint = 0;
  double max_lambda = 0.0;
  OdeProblem adjoint_problem;
  adjoint_problem.t0 = 0.0;
  adjoint_problem.t1 = t1 - t0;
  adjoint_problem.y0.resize(n);
  problem.terminal_gradient(forward_traj.back(), adjoint_problem.y0);
  adjoint_problem.rhs = [&](double s, std::span<const double> lambda, std::span<double> out) {
    const double t = t1 - s;
    for (double v : lambda) {
      if (!std::isfinite(v) || std::abs(v) > options.lambda_limit)
        throw InstabilityError("costate left the admissible range at t = " + format_double(t), t,
                               std::isfinite(v) ? std::max(max_lambda, std::abs(v)) : v);
      max_lambda = std::max(max_lambda, std::abs(v));
    }
    state.eval(t, y, state_hint);
    control.eval(t, u);
    problem.running_cost_gradients(t, y, u, df_dy, df_du);
    problem.dynamics_jacobians(t, y, u, J, G);
    std::copy(df_dy.begin(), df_dy.end(), out.begin());
    AddTransposeProduct(J, n, n, lambda, out.data());
  };
  Trajectory adjoint_traj;
  try {
    adjoint_traj = solve_dp45(adjoint_problem, dp);
  } catch (const StiffnessError& e) {
    throw InstabilityError(std::string("costate solve failed: ") + e.what(), t1 - e.time(), max_lambda);
  } catch (const DivergenceError& e) {
    throw InstabilityError(std::string("costate solve failed: ") + e.what(), t1 - e.time(), max_lambda);
  }
  for (double v : adjoint_traj.states())
    if (!std::isfinite(v) || std::abs(v) > options.lambda_limit)
      throw InstabilityError("costate left the admissible range", t0, v);
  const HermiteCurve costate(MakeHermite(adjoint_traj, adjoint_problem.rhs));

  // Simpson quadrature of the control sensitivity, one batched network pass.
  const std::size_t M = options.quadrature_intervals;
  std::vector<double> tau(M + 1), sw(M + 1);
  const double dt = (t1 - t0) / static_cast<double>(M);
  for (std::size_t k = 0; k <= M; ++k) {
    tau[k] = k == M ? t1 : t0 + dt * static_cast<double>(k);
    sw[k] = (k == 0 || k == M ? 1.0 : (k % 2 ? 4.0 : 2.0)) * dt / 3.0;
  }
  StageControls quad;
  quad.dim = m;
  quad.times = tau;
  quad.cache = forward_batch(params, time_inputs(tau, params.input_dim()), M + 1);
  quad.u.resize((M + 1) * m);
  quad.du_draw.resize((M + 1) * m);
  const auto out = quad.cache.output();
  std::vector<double> raw(m), lambda(n), u_bar((M + 1) * m, 0.0);
  std::size_t lambda_hint = 0;
  GradientReport report;
  report.engine = GradientEngine::kContinuous;
  for (std::size_t k = 0; k <= M; ++k) {
    for (std::size_t c = 0; c < m; ++c) raw[c] = out[c * (M + 1) + k];
    problem.transform_controls(raw, {quad.u.data() + k * m, m}, {quad.du_draw.data() + k * m, m});
    const auto uk = quad.at(k);
    state.eval(tau[k], y, state_hint);
    costate.eval(t1 - tau[k], lambda, lambda_hint);
    problem.running_cost_gradients(tau[k], y, uk, df_dy, df_du);
    problem.dynamics_jacobians(tau[k], y, uk, J, G);
    double* ub = u_bar.data() + k * m;
    for (std::size_t c = 0; c < m; ++c) ub[c] = df_du[c];
    AddTransposeProduct(G, n, m, lambda, ub);
    for (std::size_t c = 0; c < m; ++c) ub[c] *= sw[k];
    const RunningCostSplit f = problem.running_cost(tau[k], y, uk);
    report.objective.running_state += sw[k] * f.state;
    report.objective.running_toxicity += sw[k] * f.toxicity;
  }
  report.objective.terminal = problem.terminal_cost(forward_traj.back());
  report.objective.total =
      report.objective.running_state + report.objective.running_toxicity + report.objective.terminal;
  report.gradient = backward_batch(params, quad.cache, OutputSeeds(quad, u_bar));
  return report;
}

// ---------------------------------------------------------------------------
// Costate on the RK4 grid and the PMP residual

CostateCurve solve_costate(const ControlProblem& problem, const Rk4Tape& tape,
                           const StageControls& controls, double lambda_limit) {
  const std::size_t n = problem.state_dim(), m = problem.control_dim(), N = tape.n_steps;
  const double h = tape.h;
  CostateCurve out;
  out.dim = n;
  out.times = tape.times;
  out.lambda.assign((N + 1) * n, 0.0);

  // Node derivatives for the Hermite midpoint y(t_i + h/2).
  std::vector<double> f_nodes((N + 1) * n);
  for (std::size_t i = 0; i <= N; ++i)
    problem.dynamics(tape.times[i], tape.node(i), controls.at(2 * i), {f_nodes.data() + i * n, n});

  struct Linear {  // lambda' = -(b + A^T lambda)
    std::vector<double> A, b;
  };
  std::vector<double> df_du(m), G(n * m), y_mid(n);
  auto linearize = [&](double t, std::span<const double> y, std::span<const double> u, Linear& L) {
    L.A.resize(n * n);
    L.b.resize(n);
    problem.running_cost_gradients(t, y, u, L.b, df_du);
    problem.dynamics_jacobians(t, y, u, L.A, G);
  };
  auto apply = [&](const Linear& L, std::span<const double> lambda, std::span<double> d) {
    for (std::size_t k = 0; k < n; ++k) d[k] = -L.b[k];
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) d[c] -= L.A[r * n + c] * lambda[r];
  };
  auto check = [&](std::span<const double> lambda, double t) {
    for (double v : lambda) {
      if (!std::isfinite(v) || std::abs(v) > lambda_limit)
        throw InstabilityError("costate left the admissible range at t = " + format_double(t), t,
                               std::isfinite(v) ? std::abs(v) : v);
      out.max_abs = std::max(out.max_abs, std::abs(v));
    }
  };

  std::span<double> last(out.lambda.data() + N * n, n);
  problem.terminal_gradient(tape.node(N), last);
  check(last, tape.times[N]);

  Linear end, mid, start;
  linearize(tape.times[N], tape.node(N), controls.at(2 * N), end);
  std::vector<double> K1(n), K2(n), K3(n), K4(n), tmp(n);
  for (std::size_t i = N; i-- > 0;) {
    const auto ya = tape.node(i), yb = tape.node(i + 1);
    const double* fa = &f_nodes[i * n];
    const double* fb = &f_nodes[(i + 1) * n];
    for (std::size_t k = 0; k < n; ++k) y_mid[k] = 0.5 * (ya[k] + yb[k]) + h / 8.0 * (fa[k] - fb[k]);
    linearize(controls.times[2 * i + 1], y_mid, controls.at(2 * i + 1), mid);
    linearize(tape.times[i], ya, controls.at(2 * i), start);

    std::span<const double> lb(out.lambda.data() + (i + 1) * n, n);
    std::span<double> la(out.lambda.data() + i * n, n);
    apply(end, lb, K1);
    for (std::size_t k = 0; k < n; ++k) tmp[k] = lb[k] - 0.5 * h * K1[k];
    apply(mid, tmp, K2);
    for (std::size_t k = 0; k < n; ++k) tmp[k] = lb[k] - 0.5 * h * K2[k];
    apply(mid, tmp, K3);
    for (std::size_t k = 0; k < n; ++k) tmp[k] = lb[k] - h * K3[k];
    apply(start, tmp, K4);
    for (std::size_t k = 0; k < n; ++k) la[k] = lb[k] - h / 6.0 * (K1[k] + 2.0 * K2[k] + 2.0 * K3[k] + K4[k]);
    check(la, tape.times[i]);
    std::swap(end, start);
  }
  return out;
}

double PmpResidual::max_over(double trim) const {
  if (times.empty()) return 0.0;
  const double t0 = times.front(), t1 = times.back(), span = t1 - t0;
  double best = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < t0 + trim * span || times[i] > t1 - trim * span) continue;
    for (std::size_t c = 0; c < dim; ++c) best = std::max(best, std::abs(residual[i * dim + c]));
  }
  return best;
}

namespace {

PmpResidual Residual(const ControlProblem& problem, const StageControls& controls, double active_tol) {
  const Rk4Tape tape = integrate_controlled(problem, controls);
  const CostateCurve costate = solve_costate(problem, tape, controls);
  const std::size_t n = problem.state_dim(), m = problem.control_dim(), N = tape.n_steps;
  PmpResidual out;
  out.dim = m;
  out.times = tape.times;
  out.hamiltonian.resize(N + 1);
  out.residual.resize((N + 1) * m);
  std::vector<double> df_dy(n), df_du(m), J(n * n), G(n * m), g(n);
  for (std::size_t i = 0; i <= N; ++i) {
    const double t = tape.times[i];
    const auto y = tape.node(i);
    const auto u = controls.at(2 * i);
    const auto lambda = costate.at(i);
    problem.running_cost_gradients(t, y, u, df_dy, df_du);
    problem.dynamics_jacobians(t, y, u, J, G);
    problem.dynamics(t, y, u, g);
    const RunningCostSplit f = problem.running_cost(t, y, u);
    double H = f.state + f.toxicity;
    for (std::size_t k = 0; k < n; ++k) H += lambda[k] * g[k];
    out.hamiltonian[i] = H;
    double* r = out.residual.data() + i * m;
    std::copy(df_du.begin(), df_du.end(), r);
    AddTransposeProduct(G, n, m, lambda, r);
    for (std::size_t c = 0; c < m; ++c) {
      const double lo = problem.control_lower(c), hi = problem.control_upper(c);
      if (!std::isfinite(lo) || !std::isfinite(hi)) continue;
      const double tol = active_tol * (hi - lo);
      if ((u[c] <= lo + tol && r[c] > 0.0) || (u[c] >= hi - tol && r[c] < 0.0)) r[c] = 0.0;
    }
  }
  out.max_residual = out.max_over(0.0);
  return out;
}

}  // namespace

PmpResidual pmp_residual(const MlpParams& params, const ControlProblem& problem, std::size_t n_steps,
                         double active_tol) {
  return Residual(problem, network_controls(params, problem, n_steps), active_tol);
}

PmpResidual pmp_residual(const ControlProblem& problem, const ControlCurve& controls, double active_tol) {
  if (controls.dim != problem.control_dim()) throw InvalidArgument("controls do not match the problem");
  return Residual(problem, curve_controls(controls), active_tol);
}

void write_pmp_csv(std::ostream& out, const PmpResidual& residual) {
  out << "t,H";
  for (std::size_t c = 0; c < residual.dim; ++c) out << ",res_u" << c + 1;
  out << '\n';
  for (std::size_t i = 0; i < residual.times.size(); ++i) {
    out << format_double(residual.times[i]) << ',' << format_double(residual.hamiltonian[i]);
    for (std::size_t c = 0; c < residual.dim; ++c)
      out << ',' << format_double(residual.residual[i * residual.dim + c]);
    out << '\n';
  }
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw InvalidArgument("vectors differ in length");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
  return worst;
}

}  // namespace udeoc
