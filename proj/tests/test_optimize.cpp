#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "udeoc/error.hpp"
#include "udeoc/mlp.hpp"
#include "udeoc/optimize.hpp"
#include "udeoc/problem.hpp"

using namespace udeoc;

namespace {

Evaluation Make(double f, std::vector<double> g) {
  CostBreakdown c;
  c.total = f;
  return {c, std::move(g)};
}

double Norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// f = 1/2 x^T A x - b^T x with A tridiagonal SPD.
Evaluation Quadratic(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> g(n);
  double f = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double ax = (2.0 + 0.3 * static_cast<double>(i)) * x[i];
    if (i > 0) ax -= x[i - 1];
    if (i + 1 < n) ax -= x[i + 1];
    g[i] = ax - 1.0;
    f += 0.5 * x[i] * ax - x[i];
  }
  return Make(f, g);
}

Evaluation Rosenbrock(std::span<const double> x) {
  const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
  return Make(a * a + 100 * b * b, {-2 * a - 400 * x[0] * b, 200 * b});
}

MlpParams LqNetwork(std::uint64_t seed) {
  const std::size_t widths[] = {1, 10, 10, 1};
  const Activation acts[] = {Activation::kGelu, Activation::kGelu, Activation::kLinear};
  return init_scaled_uniform(widths, acts, seed);
}

}  // namespace

TEST_CASE("adam with a zero gradient leaves parameters alone") {
  AdamState s(2);
  s.m = {0.5, -0.5};
  s.v = {0.1, 0.2};
  std::vector<double> p = {1.0, 2.0};
  const std::vector<double> zero(2, 0.0);
  for (int k = 0; k < 20; ++k) adam_step(s, p, zero, 0.01);
  CHECK(std::abs(s.m[0]) < 0.5 * std::pow(0.9, 19));
  CHECK(s.v[1] < 0.2);
  // bias-corrected moments of a stale m still move p slightly; with fresh state nothing moves
  AdamState fresh(2);
  std::vector<double> q = {1.0, 2.0};
  adam_step(fresh, q, zero, 0.01);
  CHECK(q == std::vector<double>{1.0, 2.0});
}

TEST_CASE("adam step magnitude under a constant gradient") {
  AdamState s(3);
  std::vector<double> p(3, 0.0);
  const std::vector<double> g = {4.0, -0.001, 250.0};
  for (int k = 0; k < 500; ++k) {
    const std::vector<double> before = p;
    adam_step(s, p, g, 0.01);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(p[i] - before[i]) == doctest::Approx(0.01).epsilon(1e-3));
      CHECK((p[i] - before[i]) * g[i] < 0.0);
    }
  }
  const std::vector<double> bad = {NAN, 0.0, 0.0};
  CHECK_THROWS_AS(adam_step(s, p, bad, 0.01), DivergenceError);
  const std::vector<double> short_g = {1.0};
  CHECK_THROWS_AS(adam_step(s, p, short_g, 0.01), InvalidArgument);
}

TEST_CASE("adam on a quadratic bowl decreases the loss monotonically") {
  AdamState s(2);
  std::vector<double> p = {1.0, 1.0};
  double last = 1.0;
  for (int k = 0; k < 100; ++k) {
    adam_step(s, p, p, 0.01);
    const double f = 0.5 * (p[0] * p[0] + p[1] * p[1]);
    CHECK(f < last);
    last = f;
  }
}

TEST_CASE("bfgs solves a quadratic in n + 5 iterations") {
  for (std::size_t n : {2, 5, 12}) {
    BfgsOptions o;
    o.grad_tol = 1e-10;
    o.stall_tol = 0.0;
    const BfgsResult r = bfgs_minimize(std::vector<double>(n, 0.0), Quadratic, o);
    const Evaluation end = Quadratic(r.x);
    INFO("n = " << n << ", iterations " << r.history.size() - 1);
    CHECK(Norm(end.gradient) < 1e-10);
    CHECK(r.history.size() - 1 <= n + 5);
    CHECK(r.reason == Termination::kStalled);
    // the inverse Hessian estimate stays symmetric positive definite
    const auto& H = r.inverse_hessian;
    CHECK((H - H.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * H.cwiseAbs().maxCoeff());
    CHECK(Eigen::LLT<Eigen::MatrixXd>(H).info() == Eigen::Success);
  }
}

TEST_CASE("bfgs on Rosenbrock") {
  BfgsOptions o;
  o.max_iters = 500;
  o.stall_tol = 0.0;
  o.grad_tol = 1e-12;
  const BfgsResult r = bfgs_minimize({-1.2, 1.0}, Rosenbrock, o);
  CHECK(Rosenbrock(r.x).cost.total < 1e-8);
  CHECK(r.history.front().cost.total == doctest::Approx(24.2));
  for (std::size_t i = 1; i < r.history.size(); ++i)
    CHECK(r.history[i].cost.total <= r.history[i - 1].cost.total);
}

TEST_CASE("bfgs stalls immediately at a stationary start") {
  const BfgsResult r = bfgs_minimize({0.0, 0.0}, [](std::span<const double>) { return Make(3.0, {0.0, 0.0}); },
                                     BfgsOptions{});
  CHECK(r.reason == Termination::kStalled);
  CHECK(r.history.size() == 1);
  CHECK(r.x == std::vector<double>{0.0, 0.0});
}

TEST_CASE("bfgs line search halves through divergence") {
  // non-finite objective beyond x = 0.5; the first step would overshoot it
  auto eval = [](std::span<const double> x) -> Evaluation {
    if (x[0] > 0.5) throw DivergenceError("blow-up", 0.0);
    return Make(-x[0], {-1.0});
  };
  BfgsOptions o;
  o.init_step_norm = 0.8;
  o.max_iters = 3;
  const BfgsResult r = bfgs_minimize({0.0}, eval, o);
  CHECK(r.divergence_events >= 1);
  CHECK(r.x[0] <= 0.5);
  CHECK(r.x[0] > 0.0);
}

TEST_CASE("train: divergence handling") {
  const MlpParams shape = MlpParams({Layer{1, 1, {0.0}, {0.0}, Activation::kLinear}});
  TrainConfig cfg;
  cfg.adam_iters = 20;
  cfg.bfgs_max_iters = 0;
  cfg.adam_lr = 0.1;

  int calls = 0;
  auto once = [&](std::span<const double> x) -> Evaluation {
    if (++calls == 3) throw DivergenceError("transient", 0.0);
    return Make(0.5 * (x[0] - 1) * (x[0] - 1) + 0.5 * x[1] * x[1], {x[0] - 1, x[1]});
  };
  const TrainResult a = train(once, shape, cfg);
  CHECK(a.divergence_events == 1);
  CHECK(a.reason == Termination::kMaxIters);

  calls = 0;
  auto always = [&](std::span<const double> x) -> Evaluation {
    if (++calls >= 5) throw DivergenceError("persistent", 0.0);
    return Make(x[0] * x[0], {2 * x[0], 0.0});
  };
  const TrainResult b = train(always, shape, cfg);
  CHECK(b.reason == Termination::kDivergence);
  CHECK(b.divergence_events == 2);
  CHECK(b.history.size() == 4);
}

TEST_CASE("train the LQ problem to the Riccati optimum") {
  const LqProblem lq;
  TrainConfig cfg;
  cfg.n_steps = 1000;
  std::vector<std::size_t> snaps;
  const TrainResult r = train(lq, LqNetwork(1), cfg, [&](std::size_t it, const MlpParams&) { snaps.push_back(it); });
  const double j = r.history.back().cost.total;
  CHECK(std::abs(j - lq.optimal_objective()) < 1e-3);
  CHECK(r.history.front().phase == "adam");
  CHECK(r.history.back().phase == "bfgs");
  CHECK(r.history.front().cost.total > j);
  REQUIRE_FALSE(snaps.empty());
  CHECK(snaps.front() == 0);
  for (std::size_t s : snaps) CHECK(s % cfg.snapshot_every == 0);
  // loss log records are consecutive
  for (std::size_t i = 0; i < r.history.size(); ++i) CHECK(r.history[i].iter == i);
}

TEST_CASE("train is deterministic") {
  const LqProblem lq;
  TrainConfig cfg;
  cfg.n_steps = 200;
  cfg.adam_iters = 20;
  cfg.bfgs_max_iters = 20;
  std::ostringstream a, b;
  write_loss_log(a, train(lq, LqNetwork(3), cfg).history);
  write_loss_log(b, train(lq, LqNetwork(3), cfg).history);
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("iter,total,running_state,running_toxicity,terminal,grad_norm\n", 0) == 0);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.adam_lr = -1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = TrainConfig{};
  c.n_steps = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = TrainConfig{};
  c.restarts = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK(termination_name(Termination::kStalled) == "stalled");
}
