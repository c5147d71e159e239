#pragma once

#include <limits>
#include <span>
#include <vector>

#include "udeoc/problem.hpp"

namespace udeoc::testing {

// y' = a y + u, J = int u^2 dt + y(T); the costate grows like exp(a (T - t)).
class ScalarProblem final : public ControlProblem {
 public:
  ScalarProblem(double a, double running, double terminal) : a_(a), running_(running), terminal_(terminal) {}
  std::size_t state_dim() const override { return 1; }
  std::size_t control_dim() const override { return 1; }
  double t1() const override { return 1.0; }
  std::vector<double> initial_state() const override { return {1.0}; }
  void dynamics(double, std::span<const double> y, std::span<const double> u, std::span<double> d) const override {
    d[0] = a_ * y[0] + u[0];
  }
  void dynamics_jacobians(double, std::span<const double>, std::span<const double>, std::span<double> gy,
                          std::span<double> gu) const override {
    gy[0] = a_;
    gu[0] = 1.0;
  }
  RunningCostSplit running_cost(double, std::span<const double>, std::span<const double> u) const override {
    return {0.0, running_ * u[0] * u[0]};
  }
  void running_cost_gradients(double, std::span<const double>, std::span<const double> u, std::span<double> fy,
                              std::span<double> fu) const override {
    fy[0] = 0.0;
    fu[0] = 2.0 * running_ * u[0];
  }
  double terminal_cost(std::span<const double> y) const override { return terminal_ * y[0]; }
  void terminal_gradient(std::span<const double>, std::span<double> g) const override { g[0] = terminal_; }
  double control_lower(std::size_t) const override { return -std::numeric_limits<double>::infinity(); }
  double control_upper(std::size_t) const override { return std::numeric_limits<double>::infinity(); }
  void transform_controls(std::span<const double> raw, std::span<double> u, std::span<double> du) const override {
    u[0] = raw[0];
    du[0] = 1.0;
  }
  void minimize_hamiltonian(double, std::span<const double>, std::span<const double> l,
                            std::span<double> u) const override {
    u[0] = running_ > 0 ? -l[0] / (2 * running_) : 0.0;
  }

 private:
  double a_, running_, terminal_;
};

}  // namespace udeoc::testing
