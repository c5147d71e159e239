#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace udeoc {

/// dy/dt = rhs(t, y), written into the output span.
using OdeRhs = std::function<void(double t, std::span<const double> y, std::span<double> dydt)>;

struct OdeProblem {
  OdeRhs rhs;
  double t0 = 0.0;
  double t1 = 1.0;
  std::vector<double> y0;

  std::size_t dim() const { return y0.size(); }
};

/// Time-indexed states (and optionally controls) on a strictly increasing grid.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::size_t dim, std::size_t control_dim = 0);

  /// Throws InvalidArgument if t does not increase or a row has the wrong width.
  void push_back(double t, std::span<const double> y, std::span<const double> u = {});
  void reserve(std::size_t n);

  std::size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }
  std::size_t dim() const { return dim_; }
  std::size_t control_dim() const { return control_dim_; }
  double t0() const { return times_.front(); }
  double t1() const { return times_.back(); }

  const std::vector<double>& times() const { return times_; }
  std::span<const double> state(std::size_t i) const { return {states_.data() + i * dim_, dim_}; }
  std::span<const double> control(std::size_t i) const {
    return {controls_.data() + i * control_dim_, control_dim_};
  }
  const std::vector<double>& states() const { return states_; }
  const std::vector<double>& controls() const { return controls_; }

  /// Attaches controls after the fact; `controls` holds size() * control_dim values.
  void set_controls(std::size_t control_dim, std::vector<double> controls);

  /// Last state.
  std::span<const double> back() const { return state(size() - 1); }

 private:
  std::size_t dim_ = 0;
  std::size_t control_dim_ = 0;
  std::vector<double> times_;
  std::vector<double> states_;
  std::vector<double> controls_;
};

/// Classical fourth-order Runge-Kutta on a uniform grid of n_steps + 1 nodes.
/// Throws DivergenceError when a state becomes non-finite.
Trajectory solve_rk4(const OdeProblem& problem, std::size_t n_steps);

struct Dp45Options {
  double rtol = 1e-6;
  double atol = 1e-8;
  double max_step = std::numeric_limits<double>::infinity();
  std::size_t max_steps = 50'000'000;
};

/// Adaptive Dormand-Prince 5(4) with PI step control.
/// Throws StiffnessError when the step falls below 1e-12 (t1 - t0).
Trajectory solve_dp45(const OdeProblem& problem, const Dp45Options& options);
Trajectory solve_dp45(const OdeProblem& problem, double rtol, double atol);

/// Linear interpolation between bracketing nodes; RangeError outside [t0, t1].
std::vector<double> sample(const Trajectory& trajectory, double t);
/// Same, writing into `out`. `hint` speeds up monotone sweeps (pass the
/// returned interval index back in).
std::size_t sample_into(const Trajectory& trajectory, double t, std::span<double> out,
                        std::size_t hint = 0);

/// CSV with header `t,<state names>[,<control names>]`, 17 significant digits.
/// Empty name lists default to y1..yn and u1..um.
void write_csv(std::ostream& out, const Trajectory& trajectory,
               std::span<const std::string> state_names = {},
               std::span<const std::string> control_names = {});

}  // namespace udeoc
