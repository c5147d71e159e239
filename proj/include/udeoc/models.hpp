#pragma once

// Tumor-immune dynamics with co-stimulation (u1), co-suppression (u2) and an
// optional chemotherapy control (u3).

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace udeoc {

inline constexpr std::size_t kStateDim = 5;
enum StateIndex : std::size_t { kC = 0, kA = 1, kI = 2, kE = 3, kS = 4 };

/// (C, A, I, E, S): cancer cells, antigen, inflammation, effector and
/// non-effector T cells.
using StateVector = std::array<double, kStateDim>;
/// Row-major 5x5.
using StateJacobian = std::array<double, kStateDim * kStateDim>;

struct ImmunoParams {
  double r_C = 1.0;        // 1/day
  double r_max = 0.09;     // 1/day
  double C_star = 1000.0;  // cells/nL
  double kappa = 1.2;      // nL/(cells day)
  double r_A = 0.5;        // pep/(nL day)
  double delta_A = 0.8;    // 1/day
  double r_I = 0.4;        // ng nL/(cells^2 day)
  double delta_I = 3.0;    // 1/day
  double r_E = 1.0;        // 1/day
  double E_star = 5.0;     // cells/nL
  double r_S = 1.0;        // 1/day
  double S_star = 5.0;     // cells/nL
  double beta = 0.009;     // nL^3/(pep ng cells day)
  double gamma = 37.414;   // nL/(cells day)

  /// Throws InvalidArgument unless every rate is finite and positive.
  void validate() const;
  friend bool operator==(const ImmunoParams&, const ImmunoParams&) = default;
};

/// Baseline initial condition.
StateVector baseline_initial_state();

/// Admissible box for the controls. The chemotherapy pair is used only when
/// has_chemo is set.
struct ControlBounds {
  double m1 = 1.0, M1 = 3.0;
  double m2 = -3.0, M2 = 1.0;
  bool has_chemo = false;
  double m3 = 0.7, M3 = 1.1;

  std::size_t size() const { return has_chemo ? 3 : 2; }
  double lower(std::size_t i) const;
  double upper(std::size_t i) const;
  /// Control value meaning "no treatment": (m1, M2[, M3]).
  std::vector<double> no_treatment() const;
  /// Throws InvalidArgument unless m_i < M_i for each pair in use.
  void validate() const;
  friend bool operator==(const ControlBounds&, const ControlBounds&) = default;
};

struct ChemoCoupling {
  double e1 = 2.0;  // antigen presentation amplitude
  double e2 = 1.0;  // inflammation amplitude

  void validate() const;
  friend bool operator==(const ChemoCoupling&, const ChemoCoupling&) = default;
};

/// F(C) = min(r_max, r_C (1 - C / C_star)).
double growth_rate(double C, const ImmunoParams& p);
/// dF/dC; the logistic branch is used at the switching point.
double growth_rate_derivative(double C, const ImmunoParams& p);

StateVector immuno_rhs(double t, const StateVector& y, double u1, double u2, const ImmunoParams& p);

/// Chemotherapy modifiers u_A = 1 + e1 tanh(-ln u3), u_I = 1 + e2 tanh(-ln u3)
/// and their derivatives with respect to u3. Throws DomainError for u3 <= 0.
struct ChemoEffects {
  double u_A, u_I, du_A, du_I;
};
ChemoEffects chemo_effects(double u3, const ChemoCoupling& coupling);

StateVector combo_rhs(double t, const StateVector& y, double u1, double u2, double u3,
                      const ImmunoParams& p, const ChemoCoupling& coupling);

/// Sliding map from (-1, 1)^k onto the control box:
///   u1 = m1 + (M1 - m1)/2 (raw1 + 1),  u2 = M2 + (M2 - m2)/2 (raw2 - 1),
///   u3 = m3 + (M3 - m3)/2 (raw3 + 1).
/// Accepts the closed interval [-1, 1] (tanh saturates to +-1 in floating
/// point); anything outside throws InvalidArgument.
std::vector<double> control_transform(std::span<const double> raw, const ControlBounds& bounds);
/// du_i/draw_i, constant per component: (M_i - m_i) / 2.
std::vector<double> control_transform_slope(const ControlBounds& bounds);

StateJacobian immuno_jacobian(const StateVector& y, double u1, double u2, const ImmunoParams& p);
StateJacobian combo_jacobian(const StateVector& y, double u1, double u2, double u3,
                             const ImmunoParams& p, const ChemoCoupling& coupling);

/// d(rhs)/du, row-major 5 x 2 and 5 x 3.
std::array<double, kStateDim * 2> immuno_control_jacobian(const StateVector& y, double u1, double u2,
                                                          const ImmunoParams& p);
std::array<double, kStateDim * 3> combo_control_jacobian(const StateVector& y, double u1, double u2,
                                                         double u3, const ImmunoParams& p,
                                                         const ChemoCoupling& coupling);

}  // namespace udeoc
