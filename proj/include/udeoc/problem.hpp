#pragma once

// Optimal control problems in the form the gradient engines and the sweep
// solver consume: minimize int f(t, y, u) dt + phi(y(t1)) s.t. y' = g(t, y, u).

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "udeoc/models.hpp"
#include "udeoc/objective.hpp"

namespace udeoc {

struct RunningCostSplit {
  double state = 0.0;
  double toxicity = 0.0;
};

class ControlProblem {
 public:
  virtual ~ControlProblem() = default;

  virtual std::size_t state_dim() const = 0;
  virtual std::size_t control_dim() const = 0;
  virtual double t0() const { return 0.0; }
  virtual double t1() const = 0;
  virtual std::vector<double> initial_state() const = 0;

  virtual void dynamics(double t, std::span<const double> y, std::span<const double> u,
                        std::span<double> dydt) const = 0;
  /// dg/dy (n x n) and dg/du (n x m), row-major.
  virtual void dynamics_jacobians(double t, std::span<const double> y, std::span<const double> u,
                                  std::span<double> dg_dy, std::span<double> dg_du) const = 0;

  virtual RunningCostSplit running_cost(double t, std::span<const double> y,
                                        std::span<const double> u) const = 0;
  virtual void running_cost_gradients(double t, std::span<const double> y,
                                      std::span<const double> u, std::span<double> df_dy,
                                      std::span<double> df_du) const = 0;
  virtual double terminal_cost(std::span<const double> y) const = 0;
  virtual void terminal_gradient(std::span<const double> y, std::span<double> grad) const = 0;

  virtual double control_lower(std::size_t i) const = 0;
  virtual double control_upper(std::size_t i) const = 0;

  /// Network output to control, with the diagonal of du/draw.
  virtual void transform_controls(std::span<const double> raw, std::span<double> u,
                                  std::span<double> du_draw) const = 0;

  /// Pointwise argmin over the admissible box of H = f + lambda . g.
  virtual void minimize_hamiltonian(double t, std::span<const double> y,
                                    std::span<const double> lambda, std::span<double> u) const = 0;

  virtual std::vector<std::string> state_names() const;
  virtual std::vector<std::string> control_names() const;
};

enum class TherapyModel { kImmuno, kCombo };

struct TherapySpec {
  TherapyModel model = TherapyModel::kImmuno;
  ImmunoParams params;
  ControlBounds bounds;
  ObjectiveWeights weights;
  ChemoCoupling coupling;
  StateVector initial = baseline_initial_state();
  double t_final = 2.0;

  friend bool operator==(const TherapySpec&, const TherapySpec&) = default;

  /// Throws InvalidArgument listing the first offending field.
  void validate() const;
};

class TherapyProblem final : public ControlProblem {
 public:
  explicit TherapyProblem(TherapySpec spec);

  const TherapySpec& spec() const { return spec_; }

  std::size_t state_dim() const override { return kStateDim; }
  std::size_t control_dim() const override { return spec_.bounds.size(); }
  double t1() const override { return spec_.t_final; }
  std::vector<double> initial_state() const override;

  void dynamics(double t, std::span<const double> y, std::span<const double> u,
                std::span<double> dydt) const override;
  void dynamics_jacobians(double t, std::span<const double> y, std::span<const double> u,
                          std::span<double> dg_dy, std::span<double> dg_du) const override;
  RunningCostSplit running_cost(double t, std::span<const double> y,
                                std::span<const double> u) const override;
  void running_cost_gradients(double t, std::span<const double> y, std::span<const double> u,
                              std::span<double> df_dy, std::span<double> df_du) const override;
  double terminal_cost(std::span<const double> y) const override;
  void terminal_gradient(std::span<const double> y, std::span<double> grad) const override;
  double control_lower(std::size_t i) const override { return spec_.bounds.lower(i); }
  double control_upper(std::size_t i) const override { return spec_.bounds.upper(i); }
  void transform_controls(std::span<const double> raw, std::span<double> u,
                          std::span<double> du_draw) const override;
  void minimize_hamiltonian(double t, std::span<const double> y, std::span<const double> lambda,
                            std::span<double> u) const override;
  std::vector<std::string> state_names() const override;

 private:
  TherapySpec spec_;
};

/// y' = u, J = int_0^T (q y^2 + r u^2) dt, y(0) = y0, u unbounded.
/// With q = r = 1: P(t) = tanh(T - t), u* = -P y, J* = tanh(T) y0^2.
class LqProblem final : public ControlProblem {
 public:
  explicit LqProblem(double t_final = 1.0, double y0 = 1.0, double q = 1.0, double r = 1.0);

  std::size_t state_dim() const override { return 1; }
  std::size_t control_dim() const override { return 1; }
  double t1() const override { return t_final_; }
  std::vector<double> initial_state() const override { return {y0_}; }

  void dynamics(double t, std::span<const double> y, std::span<const double> u,
                std::span<double> dydt) const override;
  void dynamics_jacobians(double t, std::span<const double> y, std::span<const double> u,
                          std::span<double> dg_dy, std::span<double> dg_du) const override;
  RunningCostSplit running_cost(double t, std::span<const double> y,
                                std::span<const double> u) const override;
  void running_cost_gradients(double t, std::span<const double> y, std::span<const double> u,
                              std::span<double> df_dy, std::span<double> df_du) const override;
  double terminal_cost(std::span<const double> y) const override;
  void terminal_gradient(std::span<const double> y, std::span<double> grad) const override;
  double control_lower(std::size_t i) const override;
  double control_upper(std::size_t i) const override;
  void transform_controls(std::span<const double> raw, std::span<double> u,
                          std::span<double> du_draw) const override;
  void minimize_hamiltonian(double t, std::span<const double> y, std::span<const double> lambda,
                            std::span<double> u) const override;

  /// Closed-form optimum for q = r = 1.
  double riccati_gain(double t) const;
  double optimal_state(double t) const;
  double optimal_control(double t) const;
  double optimal_costate(double t) const;
  double optimal_objective() const;

 private:
  double t_final_, y0_, q_, r_;
};

/// Trapezoid objective of a problem on a trajectory / control curve pair.
CostBreakdown evaluate_objective(const ControlProblem& problem, const Trajectory& trajectory,
                                 const ControlCurve& controls);

}  // namespace udeoc
