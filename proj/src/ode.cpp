#include "udeoc/ode.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "udeoc/error.hpp"
#include "util.hpp"

namespace udeoc {

Trajectory::Trajectory(std::size_t dim, std::size_t control_dim)
    : dim_(dim), control_dim_(control_dim) {}

void Trajectory::reserve(std::size_t n) {
  times_.reserve(n);
  states_.reserve(n * dim_);
  controls_.reserve(n * control_dim_);
}

void Trajectory::push_back(double t, std::span<const double> y, std::span<const double> u) {
  if (y.size() != dim_) throw InvalidArgument("trajectory state has the wrong width");
  if (u.size() != control_dim_) throw InvalidArgument("trajectory control has the wrong width");
  if (!times_.empty() && !(t > times_.back()))
    throw InvalidArgument("trajectory times must be strictly increasing");
  times_.push_back(t);
  states_.insert(states_.end(), y.begin(), y.end());
  controls_.insert(controls_.end(), u.begin(), u.end());
}

void Trajectory::set_controls(std::size_t control_dim, std::vector<double> controls) {
  if (controls.size() != control_dim * times_.size())
    throw InvalidArgument("control samples do not match the trajectory grid");
  control_dim_ = control_dim;
  controls_ = std::move(controls);
}

namespace {

void Validate(const OdeProblem& problem) {
  if (!problem.rhs) throw InvalidArgument("ODE problem has no right-hand side");
  if (!(problem.t1 > problem.t0)) throw InvalidArgument("ODE problem needs t1 > t0");
  if (problem.y0.empty()) throw InvalidArgument("ODE problem has an empty initial state");
}

bool AllFinite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

[[noreturn]] void ThrowDivergence(double t) {
  throw DivergenceError("state became non-finite at t = " + format_double(t), t);
}

}  // namespace

Trajectory solve_rk4(const OdeProblem& problem, std::size_t n_steps) {
  Validate(problem);
  if (n_steps == 0) throw InvalidArgument("RK4 needs at least one step");
  const std::size_t n = problem.dim();
  const double span = problem.t1 - problem.t0;
  const double h = span / static_cast<double>(n_steps);

  Trajectory traj(n);
  traj.reserve(n_steps + 1);
  std::vector<double> y = problem.y0, k1(n), k2(n), k3(n), k4(n), tmp(n);
  if (!AllFinite(y)) ThrowDivergence(problem.t0);
  traj.push_back(problem.t0, y);
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double t = problem.t0 + span * static_cast<double>(i) / static_cast<double>(n_steps);
    problem.rhs(t, y, k1);
    for (std::size_t j = 0; j < n; ++j) tmp[j] = y[j] + 0.5 * h * k1[j];
    problem.rhs(t + 0.5 * h, tmp, k2);
    for (std::size_t j = 0; j < n; ++j) tmp[j] = y[j] + 0.5 * h * k2[j];
    problem.rhs(t + 0.5 * h, tmp, k3);
    for (std::size_t j = 0; j < n; ++j) tmp[j] = y[j] + h * k3[j];
    problem.rhs(t + h, tmp, k4);
    for (std::size_t j = 0; j < n; ++j) y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    const double t_next = i + 1 == n_steps ? problem.t1
                                           : problem.t0 + span * static_cast<double>(i + 1) /
                                                              static_cast<double>(n_steps);
    if (!AllFinite(y)) ThrowDivergence(t_next);
    traj.push_back(t_next, y);
  }
  return traj;
}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
// Error coefficients: fifth-order minus embedded fourth-order weights.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

double ErrorNorm(std::span<const double> err, std::span<const double> y0,
                 std::span<const double> y1, double rtol, double atol) {
  double sum = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    const double sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = err[i] / sc;
    sum += r * r;
  }
  return std::sqrt(sum / static_cast<double>(err.size()));
}

double InitialStep(const OdeProblem& problem, std::span<const double> f0, const Dp45Options& opt) {
  const std::size_t n = problem.dim();
  const auto& y0 = problem.y0;
  double d0 = 0.0, d1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sc = opt.atol + opt.rtol * std::abs(y0[i]);
    d0 += (y0[i] / sc) * (y0[i] / sc);
    d1 += (f0[i] / sc) * (f0[i] / sc);
  }
  d0 = std::sqrt(d0 / n);
  d1 = std::sqrt(d1 / n);
  const double span = problem.t1 - problem.t0;
  const double cap = std::min(span, opt.max_step);
  if (d1 <= 1e-15) {
    // Locally constant solution; let error control decide after one trial.
    std::vector<double> f1(n);
    problem.rhs(problem.t0 + cap, problem.y0, f1);
    bool flat = std::all_of(f1.begin(), f1.end(), [](double v) { return v == 0.0; });
    if (flat) return cap;
  }
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, cap);
  std::vector<double> y1(n), f1(n);
  for (std::size_t i = 0; i < n; ++i) y1[i] = y0[i] + h0 * f0[i];
  problem.rhs(problem.t0 + h0, y1, f1);
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sc = opt.atol + opt.rtol * std::abs(y0[i]);
    d2 += ((f1[i] - f0[i]) / sc) * ((f1[i] - f0[i]) / sc);
  }
  d2 = std::sqrt(d2 / n) / h0;
  const double dmax = std::max(d1, d2);
  const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 0.2);
  return std::min({100.0 * h0, h1, cap});
}

}  // namespace

Trajectory solve_dp45(const OdeProblem& problem, double rtol, double atol) {
  Dp45Options opt;
  opt.rtol = rtol;
  opt.atol = atol;
  return solve_dp45(problem, opt);
}

Trajectory solve_dp45(const OdeProblem& problem, const Dp45Options& opt) {
  Validate(problem);
  if (!(opt.rtol > 0.0) || !(opt.atol > 0.0))
    throw InvalidArgument("DP45 tolerances must be positive");
  if (!(opt.max_step > 0.0)) throw InvalidArgument("DP45 max_step must be positive");

  const std::size_t n = problem.dim();
  const double span = problem.t1 - problem.t0;
  const double h_min = 1e-12 * span;
  constexpr double kSafety = 0.9, kBeta = 0.04, kExpo = 0.2 - 0.75 * kBeta;
  constexpr double kMaxGrow = 10.0, kMaxShrink = 5.0;  // hnew/h in [1/5, 10]

  Trajectory traj(n);
  std::vector<double> y = problem.y0, ynew(n), tmp(n), err(n);
  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n);
  if (!AllFinite(y)) ThrowDivergence(problem.t0);
  traj.push_back(problem.t0, y);

  double t = problem.t0;
  problem.rhs(t, y, k1);
  double h = InitialStep(problem, k1, opt);
  double err_old = 1e-4;
  bool last_rejected = false;

  for (std::size_t step = 0; step < opt.max_steps; ++step) {
    if (t >= problem.t1) return traj;
    bool final_step = false;
    if (t + 1.01 * h >= problem.t1) {  // no sliver last step
      h = problem.t1 - t;
      final_step = true;
    }
    if (h < h_min)
      throw StiffnessError("DP45 step size underflow at t = " + format_double(t), t, h);

    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * a21 * k1[i];
    problem.rhs(t + c2 * h, tmp, k2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
    problem.rhs(t + c3 * h, tmp, k3);
    for (std::size_t i = 0; i < n; ++i)
      tmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    problem.rhs(t + c4 * h, tmp, k4);
    for (std::size_t i = 0; i < n; ++i)
      tmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    problem.rhs(t + c5 * h, tmp, k5);
    for (std::size_t i = 0; i < n; ++i)
      tmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    problem.rhs(t + h, tmp, k6);
    for (std::size_t i = 0; i < n; ++i)
      ynew[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
    const double t_new = final_step ? problem.t1 : t + h;
    problem.rhs(t_new, ynew, k7);
    for (std::size_t i = 0; i < n; ++i)
      err[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);

    const bool finite = AllFinite(ynew) && AllFinite(k7);
    const double err_norm = finite ? ErrorNorm(err, y, ynew, opt.rtol, opt.atol)
                                   : std::numeric_limits<double>::infinity();
    if (err_norm <= 1.0) {
      const double fac11 = std::pow(std::max(err_norm, 1e-300), kExpo);
      double fac = fac11 / std::pow(err_old, kBeta);
      fac = std::clamp(fac / kSafety, 1.0 / kMaxGrow, kMaxShrink);
      double h_next = h / fac;
      if (last_rejected) h_next = std::min(h_next, h);
      err_old = std::max(err_norm, 1e-4);
      t = t_new;
      y.swap(ynew);
      k1.swap(k7);
      traj.push_back(t, y);
      h = std::min(h_next, opt.max_step);
      last_rejected = false;
      if (final_step) return traj;
    } else {
      if (!finite && h <= 2.0 * h_min) ThrowDivergence(t + h);
      const double fac11 = std::isfinite(err_norm) ? std::pow(err_norm, kExpo) : kMaxShrink;
      h = h / std::min(kMaxShrink, fac11 / kSafety);
      last_rejected = true;
    }
  }
  throw StiffnessError("DP45 exceeded the maximum number of steps at t = " + format_double(t), t, h);
}

std::size_t sample_into(const Trajectory& trajectory, double t, std::span<double> out,
                        std::size_t hint) {
  if (trajectory.empty()) throw RangeError("cannot sample an empty trajectory");
  const auto& times = trajectory.times();
  if (!(t >= times.front() && t <= times.back()))
    throw RangeError("sample time " + format_double(t) + " outside [" +
                     format_double(times.front()) + ", " + format_double(times.back()) + "]");
  const std::size_t n = trajectory.dim();
  if (out.size() != n) throw InvalidArgument("sample output has the wrong width");
  if (times.size() == 1) {
    std::copy_n(trajectory.state(0).begin(), n, out.begin());
    return 0;
  }
  std::size_t i;
  if (hint + 1 < times.size() && times[hint] <= t && t <= times[hint + 1]) {
    i = hint;
  } else if (hint + 2 < times.size() && times[hint + 1] <= t && t <= times[hint + 2]) {
    i = hint + 1;
  } else {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    i = it == times.end() ? times.size() - 2 : static_cast<std::size_t>(it - times.begin()) - 1;
  }
  i = std::min(i, times.size() - 2);
  const auto ya = trajectory.state(i);
  const auto yb = trajectory.state(i + 1);
  if (t == times[i]) {
    std::copy_n(ya.begin(), n, out.begin());
  } else if (t == times[i + 1]) {
    std::copy_n(yb.begin(), n, out.begin());
  } else {
    const double w = (t - times[i]) / (times[i + 1] - times[i]);
    for (std::size_t j = 0; j < n; ++j) out[j] = ya[j] + w * (yb[j] - ya[j]);
  }
  return i;
}

std::vector<double> sample(const Trajectory& trajectory, double t) {
  std::vector<double> out(trajectory.dim());
  sample_into(trajectory, t, out);
  return out;
}

void write_csv(std::ostream& out, const Trajectory& trajectory,
               std::span<const std::string> state_names,
               std::span<const std::string> control_names) {
  const std::size_t n = trajectory.dim();
  const std::size_t m = trajectory.control_dim();
  if (!state_names.empty() && state_names.size() != n)
    throw InvalidArgument("state name count does not match the trajectory");
  if (!control_names.empty() && control_names.size() != m)
    throw InvalidArgument("control name count does not match the trajectory");
  out << 't';
  for (std::size_t j = 0; j < n; ++j)
    out << ',' << (state_names.empty() ? "y" + std::to_string(j + 1) : state_names[j]);
  for (std::size_t j = 0; j < m; ++j)
    out << ',' << (control_names.empty() ? "u" + std::to_string(j + 1) : control_names[j]);
  out << '\n';
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    out << format_double(trajectory.times()[i]);
    for (double v : trajectory.state(i)) out << ',' << format_double(v);
    for (std::size_t j = 0; j < m; ++j) out << ',' << format_double(trajectory.control(i)[j]);
    out << '\n';
  }
}

}  // namespace udeoc
