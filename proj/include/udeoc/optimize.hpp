#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "udeoc/grad.hpp"
#include "udeoc/mlp.hpp"
#include "udeoc/objective.hpp"
#include "udeoc/problem.hpp"

namespace udeoc {

struct AdamState {
  std::vector<double> m, v;
  std::size_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update of `params` in place.
/// Throws DivergenceError on a non-finite gradient, InvalidArgument on shape mismatch.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> gradient, double lr);

enum class Termination { kStalled, kMaxIters, kDivergence };
std::string termination_name(Termination reason);

struct IterationRecord {
  std::size_t iter = 0;
  std::string phase;  // "adam" or "bfgs"
  CostBreakdown cost;
  double grad_norm = 0.0;
};

struct Evaluation {
  CostBreakdown cost;
  std::vector<double> gradient;
};
/// Objective and gradient at a flat parameter vector; may throw DivergenceError.
using EvaluateFn = std::function<Evaluation(std::span<const double>)>;
/// Called with each accepted iterate.
using IterateFn = std::function<void(const IterationRecord&, std::span<const double>)>;

struct BfgsOptions {
  double init_step_norm = 0.01;
  std::size_t max_iters = 200;
  double stall_tol = 1e-8;
  std::size_t stall_window = 10;
  double grad_tol = 0.0;
  double armijo_c = 1e-4;
  double shrink = 0.5;
  std::size_t max_backtracks = 40;
  double curvature_eps = 1e-10;
  /// After an accepted step with |g_new . d| > refine_tol |g . d|, one extra
  /// evaluation at the secant minimizer along d; 0 disables it.
  double refine_tol = 1e-3;
};

struct BfgsResult {
  std::vector<double> x;
  std::vector<IterationRecord> history;  // starting point first
  Termination reason = Termination::kMaxIters;
  std::size_t curvature_skips = 0;
  std::size_t divergence_events = 0;
  Eigen::MatrixXd inverse_hessian;
  std::string message;
};

/// Dense inverse-Hessian BFGS with Armijo backtracking. The first step has
/// norm init_step_norm; updates with y^T s <= curvature_eps are skipped.
/// Terminates as stalled on a failed line search, a zero (<= grad_tol)
/// gradient, or a loss change below stall_tol across stall_window iterations.
BfgsResult bfgs_minimize(std::vector<double> start, const EvaluateFn& evaluate,
                         const BfgsOptions& options, std::size_t first_iter = 0,
                         const IterateFn& on_iterate = {});

struct TrainConfig {
  double adam_lr = 0.01;
  std::size_t adam_iters = 100;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  double bfgs_init_step_norm = 0.01;
  std::size_t bfgs_max_iters = 200;
  double loss_stall_tol = 1e-8;
  std::size_t stall_window = 10;
  std::uint64_t seed = 1;
  std::size_t n_steps = 20000;
  std::size_t snapshot_every = 25;
  Quadrature quadrature = Quadrature::kRk4Stages;
  std::size_t restarts = 1;  // seeds seed, seed + 1, ...; the best final loss is kept

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainResult {
  MlpParams params;
  std::vector<IterationRecord> history;
  double wall_time = 0.0;  // seconds
  Termination reason = Termination::kMaxIters;
  std::size_t curvature_skips = 0;
  std::size_t divergence_events = 0;
  std::string message;
};

using SnapshotFn = std::function<void(std::size_t iter, const MlpParams&)>;

/// Adam for adam_iters, then BFGS until stall or bfgs_max_iters, on the
/// discretized objective with discrete-adjoint gradients.
TrainResult train(const ControlProblem& problem, const MlpParams& initial, const TrainConfig& config,
                  const SnapshotFn& snapshot = {});
/// Same loop on an arbitrary objective.
TrainResult train(const EvaluateFn& evaluate, const MlpParams& initial, const TrainConfig& config,
                  const SnapshotFn& snapshot = {});

/// CSV `iter,total,running_state,running_toxicity,terminal,grad_norm`.
void write_loss_log(std::ostream& out, const std::vector<IterationRecord>& history);

}  // namespace udeoc
