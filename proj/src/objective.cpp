#include "udeoc/objective.hpp"

#include <algorithm>
#include <cmath>

#include "udeoc/error.hpp"

namespace udeoc {

void ObjectiveWeights::validate() const {
  const double all[] = {a, b, c, c1, c2, c3, d1, d2, d3};
  for (double v : all)
    if (!std::isfinite(v)) throw InvalidArgument("objective weights must be finite");
  if (c1 < 0.0 || c2 < 0.0 || c3 < 0.0)
    throw InvalidArgument("toxicity weights must be non-negative");
}

std::vector<double> doses(std::span<const double> u, const ControlBounds& bounds) {
  if (u.size() != bounds.size()) throw InvalidArgument("control vector does not match the bounds");
  std::vector<double> v(u.size());
  v[0] = u[0] - bounds.m1;
  v[1] = bounds.M2 - u[1];
  if (bounds.has_chemo) v[2] = bounds.M3 - u[2];
  return v;
}

double running_state_cost(const StateVector& y, const ObjectiveWeights& w) {
  return w.a * y[kC] - w.b * y[kE] + w.c * y[kS];
}

double running_toxicity_cost(std::span<const double> u, const ObjectiveWeights& w,
                             const ControlBounds& bounds) {
  const std::vector<double> v = doses(u, bounds);
  double cost = w.c1 * v[0] * v[0] + w.c2 * v[1] * v[1];
  if (bounds.has_chemo) cost += w.c3 * v[2] * v[2];
  return cost;
}

double running_cost(const StateVector& y, std::span<const double> u, const ObjectiveWeights& w,
                    const ControlBounds& bounds) {
  return running_state_cost(y, w) + running_toxicity_cost(u, w, bounds);
}

double terminal_cost(const StateVector& y, const ObjectiveWeights& w) {
  return w.d1 * y[kC] - w.d2 * y[kE] + w.d3 * y[kS];
}

StateVector terminal_gradient(const ObjectiveWeights& w) { return {w.d1, 0.0, 0.0, -w.d2, w.d3}; }

double trapezoid(std::span<const double> t, std::span<const double> f) {
  if (t.size() != f.size()) throw InvalidArgument("trapezoid: abscissae and values differ in length");
  double sum = 0.0;
  for (std::size_t i = 1; i < t.size(); ++i) sum += 0.5 * (t[i] - t[i - 1]) * (f[i] + f[i - 1]);
  return sum;
}

void require_same_grid(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("control curve and trajectory grids differ in size");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > 1e-12 * std::max(1.0, std::abs(a[i])))
      throw InvalidArgument("control curve and trajectory grids differ");
}

StateVector to_state(std::span<const double> y) {
  if (y.size() != kStateDim) throw InvalidArgument("state vector must have five components");
  StateVector s;
  std::copy(y.begin(), y.end(), s.begin());
  return s;
}

CostBreakdown evaluate_objective(const Trajectory& trajectory, const ControlCurve& controls,
                                 const ObjectiveWeights& w, const ControlBounds& bounds) {
  if (trajectory.empty()) throw InvalidArgument("empty trajectory");
  if (controls.dim != bounds.size()) throw InvalidArgument("control curve does not match the bounds");
  require_same_grid(trajectory.times(), controls.times);

  const std::size_t n = trajectory.size();
  std::vector<double> state_cost(n), toxicity(n);
  for (std::size_t i = 0; i < n; ++i) {
    state_cost[i] = running_state_cost(to_state(trajectory.state(i)), w);
    toxicity[i] = running_toxicity_cost(controls.at(i), w, bounds);
  }
  CostBreakdown out;
  out.running_state = trapezoid(trajectory.times(), state_cost);
  out.running_toxicity = trapezoid(trajectory.times(), toxicity);
  out.terminal = terminal_cost(to_state(trajectory.back()), w);
  out.total = out.running_state + out.running_toxicity + out.terminal;
  return out;
}

}  // namespace udeoc
