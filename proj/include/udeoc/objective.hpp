#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "udeoc/models.hpp"
#include "udeoc/ode.hpp"

namespace udeoc {

struct ObjectiveWeights {
  double a = 1.0, b = 10.0, c = 100.0;  // running state weights
  double c1 = 2.0, c2 = 1.0, c3 = 0.0;  // toxicity
  double d1 = 1.0, d2 = 10.0, d3 = 100.0;  // terminal

  /// Throws InvalidArgument on non-finite entries or negative toxicity weights.
  void validate() const;
  friend bool operator==(const ObjectiveWeights&, const ObjectiveWeights&) = default;
};

struct CostBreakdown {
  double running_state = 0.0;
  double running_toxicity = 0.0;
  double terminal = 0.0;
  double total = 0.0;
};

/// Control samples on a time grid, `dim` values per node.
struct ControlCurve {
  std::vector<double> times;
  std::size_t dim = 0;
  std::vector<double> values;

  std::size_t size() const { return times.size(); }
  std::span<const double> at(std::size_t i) const { return {values.data() + i * dim, dim}; }
  std::span<double> at(std::size_t i) { return {values.data() + i * dim, dim}; }
};

/// v1 = u1 - m1, v2 = M2 - u2, v3 = M3 - u3.
std::vector<double> doses(std::span<const double> u, const ControlBounds& bounds);

double running_state_cost(const StateVector& y, const ObjectiveWeights& w);
double running_toxicity_cost(std::span<const double> u, const ObjectiveWeights& w,
                             const ControlBounds& bounds);
/// aC - bE + cS + c1 v1^2 + c2 v2^2 (+ c3 v3^2).
double running_cost(const StateVector& y, std::span<const double> u, const ObjectiveWeights& w,
                    const ControlBounds& bounds);

/// d1 C - d2 E + d3 S.
double terminal_cost(const StateVector& y, const ObjectiveWeights& w);
/// (d1, 0, 0, -d2, d3).
StateVector terminal_gradient(const ObjectiveWeights& w);

/// Composite trapezoid.
double trapezoid(std::span<const double> t, std::span<const double> f);

/// Trapezoid running cost on the trajectory grid plus the terminal cost.
/// Throws InvalidArgument when the control curve is not on the same grid.
CostBreakdown evaluate_objective(const Trajectory& trajectory, const ControlCurve& controls,
                                 const ObjectiveWeights& w, const ControlBounds& bounds);

/// Throws InvalidArgument unless the two grids coincide.
void require_same_grid(std::span<const double> a, std::span<const double> b);

StateVector to_state(std::span<const double> y);

}  // namespace udeoc
