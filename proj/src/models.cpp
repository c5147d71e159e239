#include "udeoc/models.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "udeoc/error.hpp"

namespace udeoc {

void ImmunoParams::validate() const {
  const double values[] = {r_C, r_max, C_star, kappa, r_A,    delta_A, r_I,
                           delta_I, r_E, E_star, r_S, S_star, beta,    gamma};
  for (double v : values)
    if (!std::isfinite(v) || !(v > 0.0))
      throw InvalidArgument("model parameters must be finite and positive");
}

StateVector baseline_initial_state() { return {1000.0, 10.0, 10.0, 10.0, 10.0}; }

double ControlBounds::lower(std::size_t i) const {
  switch (i) {
    case 0: return m1;
    case 1: return m2;
    case 2: if (has_chemo) return m3; break;
  }
  throw InvalidArgument("control index out of range");
}

double ControlBounds::upper(std::size_t i) const {
  switch (i) {
    case 0: return M1;
    case 1: return M2;
    case 2: if (has_chemo) return M3; break;
  }
  throw InvalidArgument("control index out of range");
}

std::vector<double> ControlBounds::no_treatment() const {
  if (has_chemo) return {m1, M2, M3};
  return {m1, M2};
}

void ControlBounds::validate() const {
  for (std::size_t i = 0; i < size(); ++i) {
    const double lo = lower(i), hi = upper(i);
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi))
      throw InvalidArgument("control bounds for u" + std::to_string(i + 1) +
                            " must satisfy m < M");
  }
  if (has_chemo && !(m3 > 0.0)) throw InvalidArgument("chemotherapy lower bound m3 must be > 0");
}

void ChemoCoupling::validate() const {
  if (!std::isfinite(e1) || !std::isfinite(e2) || e1 < 0.0 || e2 < 0.0)
    throw InvalidArgument("chemotherapy coupling amplitudes must be >= 0");
}

namespace {
bool LogisticBranch(double C, const ImmunoParams& p) {
  return p.r_C * (1.0 - C / p.C_star) <= p.r_max;
}
}  // namespace

double growth_rate(double C, const ImmunoParams& p) {
  return std::min(p.r_max, p.r_C * (1.0 - C / p.C_star));
}

double growth_rate_derivative(double C, const ImmunoParams& p) {
  return LogisticBranch(C, p) ? -p.r_C / p.C_star : 0.0;
}

StateVector immuno_rhs(double /*t*/, const StateVector& y, double u1, double u2,
                       const ImmunoParams& p) {
  const double C = y[kC], A = y[kA], I = y[kI], E = y[kE], S = y[kS];
  const double activation = u1 * p.beta * A * I * E * S;
  const double suppression = u2 * p.gamma * E * S;
  return {growth_rate(C, p) * C - p.kappa * C * E,
          p.r_A * C - p.delta_A * A,
          p.r_I * C * E - p.delta_I * I,
          -p.r_E * (E - p.E_star) + activation - suppression,
          -p.r_S * (S - p.S_star) - activation + suppression};
}

ChemoEffects chemo_effects(double u3, const ChemoCoupling& coupling) {
  if (!(u3 > 0.0)) throw DomainError("chemotherapy control u3 must be positive");
  const double th = std::tanh(-std::log(u3));
  const double dth = -(1.0 - th * th) / u3;
  return {1.0 + coupling.e1 * th, 1.0 + coupling.e2 * th, coupling.e1 * dth, coupling.e2 * dth};
}

StateVector combo_rhs(double /*t*/, const StateVector& y, double u1, double u2, double u3,
                      const ImmunoParams& p, const ChemoCoupling& coupling) {
  const ChemoEffects fx = chemo_effects(u3, coupling);
  const double C = y[kC], A = y[kA], I = y[kI], E = y[kE], S = y[kS];
  const double activation = u1 * p.beta * A * I * E * S;
  const double suppression = u2 * p.gamma * E * S;
  return {u3 * growth_rate(C, p) * C - p.kappa * C * E,
          fx.u_A * p.r_A * C - p.delta_A * A,
          fx.u_I * p.r_I * C * E - p.delta_I * I,
          -p.r_E * (E - p.E_star) + activation - suppression,
          -p.r_S * (S - p.S_star) - activation + suppression};
}

std::vector<double> control_transform(std::span<const double> raw, const ControlBounds& bounds) {
  if (raw.size() != bounds.size())
    throw InvalidArgument("raw control vector has " + std::to_string(raw.size()) +
                          " entries, bounds describe " + std::to_string(bounds.size()));
  for (double r : raw)
    if (!(r >= -1.0 && r <= 1.0)) throw InvalidArgument("raw control outside (-1, 1)");
  std::vector<double> u(raw.size());
  u[0] = bounds.m1 + 0.5 * (bounds.M1 - bounds.m1) * (raw[0] + 1.0);
  u[1] = bounds.M2 + 0.5 * (bounds.M2 - bounds.m2) * (raw[1] - 1.0);
  if (bounds.has_chemo) u[2] = bounds.m3 + 0.5 * (bounds.M3 - bounds.m3) * (raw[2] + 1.0);
  return u;
}

std::vector<double> control_transform_slope(const ControlBounds& bounds) {
  std::vector<double> slope(bounds.size());
  for (std::size_t i = 0; i < slope.size(); ++i)
    slope[i] = 0.5 * (bounds.upper(i) - bounds.lower(i));
  return slope;
}

namespace {

// Shared by both models; growth_scale, antigen_scale and inflammation_scale
// are u3, u_A, u_I (all 1 without chemotherapy).
StateJacobian Jacobian(const StateVector& y, double u1, double u2, const ImmunoParams& p,
                       double growth_scale, double antigen_scale, double inflammation_scale) {
  const double C = y[kC], A = y[kA], I = y[kI], E = y[kE], S = y[kS];
  StateJacobian J{};
  auto at = [&J](std::size_t r, std::size_t c) -> double& { return J[r * kStateDim + c]; };

  at(kC, kC) = growth_scale * (growth_rate(C, p) + growth_rate_derivative(C, p) * C) - p.kappa * E;
  at(kC, kE) = -p.kappa * C;

  at(kA, kC) = antigen_scale * p.r_A;
  at(kA, kA) = -p.delta_A;

  at(kI, kC) = inflammation_scale * p.r_I * E;
  at(kI, kI) = -p.delta_I;
  at(kI, kE) = inflammation_scale * p.r_I * C;

  const double ub = u1 * p.beta;
  const double ug = u2 * p.gamma;
  const double d_act_A = ub * I * E * S;
  const double d_act_I = ub * A * E * S;
  const double d_act_E = ub * A * I * S;
  const double d_act_S = ub * A * I * E;
  at(kE, kA) = d_act_A;
  at(kE, kI) = d_act_I;
  at(kE, kE) = -p.r_E + d_act_E - ug * S;
  at(kE, kS) = d_act_S - ug * E;

  at(kS, kA) = -d_act_A;
  at(kS, kI) = -d_act_I;
  at(kS, kE) = -d_act_E + ug * S;
  at(kS, kS) = -p.r_S - d_act_S + ug * E;
  return J;
}

}  // namespace

StateJacobian immuno_jacobian(const StateVector& y, double u1, double u2, const ImmunoParams& p) {
  return Jacobian(y, u1, u2, p, 1.0, 1.0, 1.0);
}

StateJacobian combo_jacobian(const StateVector& y, double u1, double u2, double u3,
                             const ImmunoParams& p, const ChemoCoupling& coupling) {
  const ChemoEffects fx = chemo_effects(u3, coupling);
  return Jacobian(y, u1, u2, p, u3, fx.u_A, fx.u_I);
}

std::array<double, kStateDim * 2> immuno_control_jacobian(const StateVector& y, double /*u1*/,
                                                          double /*u2*/, const ImmunoParams& p) {
  const double act = p.beta * y[kA] * y[kI] * y[kE] * y[kS];
  const double sup = p.gamma * y[kE] * y[kS];
  std::array<double, kStateDim * 2> G{};
  G[kE * 2 + 0] = act;
  G[kS * 2 + 0] = -act;
  G[kE * 2 + 1] = -sup;
  G[kS * 2 + 1] = sup;
  return G;
}

std::array<double, kStateDim * 3> combo_control_jacobian(const StateVector& y, double /*u1*/,
                                                         double /*u2*/, double u3,
                                                         const ImmunoParams& p,
                                                         const ChemoCoupling& coupling) {
  const ChemoEffects fx = chemo_effects(u3, coupling);
  const double C = y[kC], E = y[kE];
  const double act = p.beta * y[kA] * y[kI] * E * y[kS];
  const double sup = p.gamma * E * y[kS];
  std::array<double, kStateDim * 3> G{};
  G[kE * 3 + 0] = act;
  G[kS * 3 + 0] = -act;
  G[kE * 3 + 1] = -sup;
  G[kS * 3 + 1] = sup;
  G[kC * 3 + 2] = growth_rate(C, p) * C;
  G[kA * 3 + 2] = fx.du_A * p.r_A * C;
  G[kI * 3 + 2] = fx.du_I * p.r_I * C * E;
  return G;
}

}  // namespace udeoc
