#include "udeoc/optimize.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>

#include "udeoc/error.hpp"
#include "udeoc/grad.hpp"
#include "util.hpp"

namespace udeoc {

void adam_step(AdamState& state, std::span<double> params, std::span<const double> gradient, double lr) {
  if (params.size() != gradient.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw InvalidArgument("Adam state, parameters and gradient differ in size");
  for (double g : gradient)
    if (!std::isfinite(g)) throw DivergenceError("non-finite gradient", std::nan(""));
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * gradient[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * gradient[i] * gradient[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

std::string termination_name(Termination reason) {
  switch (reason) {
    case Termination::kStalled: return "stalled";
    case Termination::kMaxIters: return "max-iters";
    case Termination::kDivergence: return "divergence";
  }
  return "unknown";
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd ToVector(std::span<const double> v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double Norm(std::span<const double> v) { return ToVector(v).norm(); }

bool Finite(const Evaluation& e) {
  if (!std::isfinite(e.cost.total)) return false;
  for (double g : e.gradient)
    if (!std::isfinite(g)) return false;
  return true;
}

}  // namespace

BfgsResult bfgs_minimize(std::vector<double> start, const EvaluateFn& evaluate,
                         const BfgsOptions& options, std::size_t first_iter,
                         const IterateFn& on_iterate) {
  const auto n = static_cast<Eigen::Index>(start.size());
  BfgsResult result;
  result.x = std::move(start);

  Evaluation current = evaluate(result.x);
  if (current.gradient.size() != result.x.size())
    throw InvalidArgument("gradient size does not match the parameters");
  if (!Finite(current)) throw DivergenceError("objective is not finite at the starting point", std::nan(""));

  auto record = [&](const Evaluation& e) {
    IterationRecord rec{first_iter + result.history.size(), "bfgs", e.cost, Norm(e.gradient)};
    result.history.push_back(rec);
    if (on_iterate) on_iterate(rec, result.x);
  };
  record(current);

  VectorXd g = ToVector(current.gradient);
  const double g0 = g.norm();
  result.inverse_hessian = MatrixXd::Identity(n, n) * (g0 > 0.0 ? options.init_step_norm / g0 : 1.0);
  if (g0 <= options.grad_tol) {
    result.reason = Termination::kStalled;
    result.message = "gradient vanishes at the starting point";
    return result;
  }

  bool rescale = true;  // replace the step-length scaling by y's / y'y at the next update
  for (std::size_t k = 0; k < options.max_iters; ++k) {
    MatrixXd& H = result.inverse_hessian;
    VectorXd d = -(H * g);
    double slope = g.dot(d);
    if (!(slope < 0.0)) {  // lost descent: restart from a scaled identity
      H = MatrixXd::Identity(n, n) * (options.init_step_norm / g.norm());
      d = -(H * g);
      slope = g.dot(d);
      rescale = true;
    }

    const VectorXd x = ToVector(result.x);
    double alpha = 1.0;
    bool accepted = false, diverged_once = false;
    Evaluation trial;
    std::vector<double> x_trial(result.x.size()), x_refined(result.x.size());
    for (std::size_t b = 0; b <= options.max_backtracks; ++b) {
      Eigen::Map<VectorXd>(x_trial.data(), n) = x + alpha * d;
      bool diverged = false;
      try {
        trial = evaluate(x_trial);
        diverged = !Finite(trial);
      } catch (const DivergenceError&) {
        diverged = true;
      }
      if (diverged) {
        ++result.divergence_events;
        if (diverged_once) {
          result.reason = Termination::kDivergence;
          result.message = "forward solve diverged twice in a row during the line search";
          return result;
        }
        diverged_once = true;
        alpha *= options.shrink;
        continue;
      }
      diverged_once = false;
      if (trial.cost.total <= current.cost.total + options.armijo_c * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= options.shrink;
    }
    if (!accepted) {
      result.reason = Termination::kStalled;
      result.message = "line search failed after " + std::to_string(options.max_backtracks) + " backtracks";
      return result;
    }

    // Secant step on the directional derivative (exact on quadratics), or an
    // expansion when the curvature along d is not positive.
    const double end_slope = ToVector(trial.gradient).dot(d);
    if (options.refine_tol > 0.0 && std::abs(end_slope) > options.refine_tol * std::abs(slope)) {
      const double alpha_star = end_slope > slope
                                    ? std::clamp(alpha * slope / (slope - end_slope), 0.1 * alpha, 4.0 * alpha)
                                    : 4.0 * alpha;
      Eigen::Map<VectorXd>(x_refined.data(), n) = x + alpha_star * d;
      try {
        Evaluation refined = evaluate(x_refined);
        if (Finite(refined) && refined.cost.total < trial.cost.total) {
          trial = std::move(refined);
          x_trial.swap(x_refined);
          alpha = alpha_star;
        }
      } catch (const DivergenceError&) {
        ++result.divergence_events;
      }
    }

    const VectorXd g_new = ToVector(trial.gradient);
    const VectorXd s = alpha * d;
    const VectorXd y = g_new - g;
    const double ys = y.dot(s);
    if (ys > options.curvature_eps) {
      if (rescale) {
        H = MatrixXd::Identity(n, n) * (ys / y.squaredNorm());
        rescale = false;
      }
      const double rho = 1.0 / ys;
      const VectorXd Hy = H * y;
      const double yHy = y.dot(Hy);
      H.noalias() -= rho * (s * Hy.transpose() + Hy * s.transpose());
      H.noalias() += (rho * rho * yHy + rho) * (s * s.transpose());
    } else {
      ++result.curvature_skips;
    }

    result.x = x_trial;
    current = std::move(trial);
    g = g_new;
    record(current);

    if (g.norm() <= options.grad_tol) {
      result.reason = Termination::kStalled;
      result.message = "gradient norm below tolerance";
      return result;
    }
    const std::size_t len = result.history.size();
    if (len > options.stall_window &&
        std::abs(result.history[len - 1].cost.total -
                 result.history[len - 1 - options.stall_window].cost.total) < options.stall_tol) {
      result.reason = Termination::kStalled;
      result.message = "loss change below tolerance over the stall window";
      return result;
    }
  }
  result.reason = Termination::kMaxIters;
  result.message = "reached the BFGS iteration limit";
  return result;
}

void TrainConfig::validate() const {
  if (!(adam_lr > 0.0) || !std::isfinite(adam_lr)) throw InvalidArgument("train.adam_lr must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw InvalidArgument("train.adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw InvalidArgument("train.adam_beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw InvalidArgument("train.adam_eps must be > 0");
  if (!(bfgs_init_step_norm > 0.0)) throw InvalidArgument("train.bfgs_init_step_norm must be > 0");
  if (!(loss_stall_tol > 0.0)) throw InvalidArgument("train.loss_stall_tol must be > 0");
  if (stall_window == 0) throw InvalidArgument("train.stall_window must be >= 1");
  if (n_steps == 0) throw InvalidArgument("n_steps must be >= 1");
  if (restarts == 0) throw InvalidArgument("train.restarts must be >= 1");
  if (adam_iters + bfgs_max_iters == 0) throw InvalidArgument("at least one iteration is required");
}

TrainResult train(const EvaluateFn& evaluate, const MlpParams& initial, const TrainConfig& config,
                  const SnapshotFn& snapshot) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  auto finish = [&](std::span<const double> p) {
    result.params = initial.with_values(p);
    result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
  };
  auto maybe_snapshot = [&](std::size_t iter, std::span<const double> p) {
    if (snapshot && config.snapshot_every > 0 && iter % config.snapshot_every == 0)
      snapshot(iter, initial.with_values(p));
  };

  std::vector<double> p = initial.flatten();
  Evaluation current;
  try {
    current = evaluate(p);
  } catch (const DivergenceError& e) {
    result.reason = Termination::kDivergence;
    result.message = std::string("initial forward solve diverged: ") + e.what();
    ++result.divergence_events;
    return finish(p);
  }

  AdamState adam(p.size());
  adam.beta1 = config.adam_beta1;
  adam.beta2 = config.adam_beta2;
  adam.eps = config.adam_eps;
  for (std::size_t k = 0; k < config.adam_iters; ++k) {
    result.history.push_back({k, "adam", current.cost, Norm(current.gradient)});
    maybe_snapshot(k, p);
    const std::vector<double> previous = p;
    adam_step(adam, p, current.gradient, config.adam_lr);
    try {
      current = evaluate(p);
    } catch (const DivergenceError&) {
      ++result.divergence_events;
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = previous[i] + 0.5 * (p[i] - previous[i]);
      try {
        current = evaluate(p);
      } catch (const DivergenceError& e) {
        ++result.divergence_events;
        result.reason = Termination::kDivergence;
        result.message = std::string("forward solve diverged after a halved Adam step: ") + e.what();
        return finish(previous);
      }
    }
  }

  if (config.bfgs_max_iters == 0) {
    result.history.push_back({config.adam_iters, "adam", current.cost, Norm(current.gradient)});
    result.reason = Termination::kMaxIters;
    result.message = "Adam iterations completed";
    return finish(p);
  }

  BfgsOptions options;
  options.init_step_norm = config.bfgs_init_step_norm;
  options.max_iters = config.bfgs_max_iters;
  options.stall_tol = config.loss_stall_tol;
  options.stall_window = config.stall_window;
  const Evaluation adam_end = current;
  bool first = true;
  EvaluateFn bfgs_eval = [&](std::span<const double> x) {
    if (first) {  // the starting point was just evaluated
      first = false;
      return adam_end;
    }
    return evaluate(x);
  };
  BfgsResult bfgs = bfgs_minimize(p, bfgs_eval, options, config.adam_iters,
                                  [&](const IterationRecord& rec, std::span<const double> x) {
                                    maybe_snapshot(rec.iter, x);
                                  });
  result.history.insert(result.history.end(), bfgs.history.begin(), bfgs.history.end());
  result.reason = bfgs.reason;
  result.message = bfgs.message;
  result.curvature_skips = bfgs.curvature_skips;
  result.divergence_events += bfgs.divergence_events;
  return finish(bfgs.x);
}

TrainResult train(const ControlProblem& problem, const MlpParams& initial, const TrainConfig& config,
                  const SnapshotFn& snapshot) {
  EvaluateFn evaluate = [&](std::span<const double> p) {
    GradientReport report = grad_discrete(initial.with_values(p), problem, config.n_steps, config.quadrature);
    return Evaluation{report.objective, std::move(report.gradient)};
  };
  return train(evaluate, initial, config, snapshot);
}

void write_loss_log(std::ostream& out, const std::vector<IterationRecord>& history) {
  out << "iter,total,running_state,running_toxicity,terminal,grad_norm\n";
  for (const IterationRecord& r : history)
    out << r.iter << ',' << format_double(r.cost.total) << ',' << format_double(r.cost.running_state)
        << ',' << format_double(r.cost.running_toxicity) << ',' << format_double(r.cost.terminal) << ','
        << format_double(r.grad_norm) << '\n';
}

}  // namespace udeoc
