// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion,
// preceded by the measured quantities.

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "udeoc/error.hpp"
#include "udeoc/fbs.hpp"
#include "udeoc/grad.hpp"
#include "udeoc/kernels.hpp"
#include "udeoc/models.hpp"
#include "udeoc/ode.hpp"
#include "udeoc/optimize.hpp"
#include "udeoc/scenario.hpp"

using namespace udeoc;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void Verdict(int id, const std::string& title, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s | %s\n", ok ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

void Note(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void Note(const char* fmt, ...) {
  std::va_list args;
  va_start(args, fmt);
  std::printf("    ");
  std::vprintf(fmt, args);
  std::printf("\n");
  std::fflush(stdout);
  va_end(args);
}

std::string Fmt(const char* fmt, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, a, b, c);
  return buf;
}

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

// Worst |a - b| / |b| over all components.
double ComponentwiseError(const std::vector<double>& a, const std::vector<double>& b) {
  return max_relative_error(a, b, 0.0);
}

double RelativeL2(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

double Get(const std::map<std::string, std::string>& summary, const std::string& key) {
  const auto it = summary.find(key);
  return it == summary.end() ? std::nan("") : std::stod(it->second);
}

std::string GetText(const std::map<std::string, std::string>& summary, const std::string& key) {
  const auto it = summary.find(key);
  return it == summary.end() ? "" : it->second;
}

std::string ReadFile(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void GradientCorrectness() {
  const TherapyProblem problem{preset("baseline").therapy};
  const std::size_t n_steps = preset("baseline").train.n_steps;
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const MlpParams net = initial_network(problem, seed);
    const GradientReport d = grad_discrete(net, problem, n_steps);
    const GradientReport f = grad_fd(net, problem, n_steps, 1e-5);
    const double err = ComponentwiseError(d.gradient, f.gradient);
    Note("seed %llu: %zu parameters, max componentwise rel. err %.3g", static_cast<unsigned long long>(seed),
         d.gradient.size(), err);
    worst = std::max(worst, err);
  }
  const double elapsed = Seconds(start);
  Verdict(1, "discrete adjoint vs central differences (h=1e-5, 5 seeds, baseline)",
          worst < 1e-4 && elapsed < 120.0,
          Fmt("worst rel. err %.3g (< 1e-4), %.1f s (< 120 s)", worst, elapsed));
}

void EngineEquivalence() {
  const TherapyProblem problem{preset("baseline").therapy};
  double worst = 0.0, worst_component = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const MlpParams net = initial_network(problem, seed);
    const GradientReport d = grad_discrete(net, problem, 4000);
    const GradientReport c = grad_continuous(net, problem);
    const double err = RelativeL2(d.gradient, c.gradient), comp = ComponentwiseError(d.gradient, c.gradient);
    Note("seed %llu: ||g_d - g_c|| / ||g_c|| = %.3g, componentwise max %.3g",
         static_cast<unsigned long long>(seed), err, comp);
    worst = std::max(worst, err);
    worst_component = std::max(worst_component, comp);
  }
  Verdict(2, "discrete (4000 RK4 steps) vs continuous adjoint, baseline", worst < 1e-3,
          Fmt("worst relative L2 err %.3g (< 1e-3); componentwise max %.3g", worst, worst_component));
}

// Riccati gain P(t) by fine RK4 on dP/ds = 1 - P^2, s = T - t, P(s=0) = 0.
std::vector<double> RiccatiOnGrid(std::size_t n_nodes, std::size_t refine) {
  OdeProblem ric;
  ric.rhs = [](double, std::span<const double> p, std::span<double> d) { d[0] = 1.0 - p[0] * p[0]; };
  ric.y0 = {0.0};
  const std::size_t n = n_nodes - 1;
  const Trajectory back = solve_rk4(ric, n * refine);
  std::vector<double> P(n_nodes);
  for (std::size_t i = 0; i <= n; ++i) P[i] = back.state((n - i) * refine)[0];
  return P;
}

struct LqOutcome {
  double j_nn = 0.0;
  double j_star = 0.0;
};

LqOutcome LqCriteria() {
  const LqProblem lq;
  TrainConfig cfg;
  cfg.n_steps = 1000;
  const auto start = std::chrono::steady_clock::now();
  const TrainResult trained = train(lq, initial_network(lq, cfg.seed), cfg);
  const double j_nn = network_objective(trained.params, lq, cfg.n_steps).total;
  const PmpResidual res = pmp_residual(trained.params, lq, cfg.n_steps);
  const double interior = res.max_over(0.05);
  Note("NN training: %zu records, %s, %.1f s, J = %.10f", trained.history.size(),
       termination_name(trained.reason).c_str(), Seconds(start), j_nn);
  Note("NN PMP residual: max %.3g over [0,1], %.3g on [0.05,0.95]", res.max_residual, interior);

  auto [swept, report] = sweep_solve(initial_sweep_state(lq, cfg.n_steps, {}, 0.5), lq);
  const std::vector<double> P = RiccatiOnGrid(swept.controls.size(), 100);
  const StageControls sc = curve_controls(swept.controls);
  const Rk4Tape tape = integrate_controlled(lq, sc);
  double feedback = 0.0;
  for (std::size_t i = 0; i < swept.controls.size(); ++i)
    feedback = std::max(feedback, std::abs(swept.controls.at(i)[0] + P[i] * tape.node(i)[0]));
  Note("FBS: %s after %zu iterations, max |u + P y| = %.3g, J = %.10f",
       report.converged ? "converged" : "not converged", report.iterations.size(), feedback,
       swept.objective.total);
  Verdict(3, "PMP residual of the trained LQ control and FBS vs Riccati feedback",
          interior < 1e-3 && report.converged && feedback < 1e-4,
          Fmt("interior residual %.3g (< 1e-3); FBS feedback error %.3g (< 1e-4)", interior, feedback));
  return {j_nn, std::tanh(1.0)};
}

struct FigureRun {
  std::map<std::string, std::string> summary;
  int exit_code = 0;
};

FigureRun RunPreset(const std::string& name, Solver solver, const fs::path& dir) {
  ScenarioConfig c = preset(name);
  c.solver = solver;
  c.output_dir = dir.string();
  const auto start = std::chrono::steady_clock::now();
  const ScenarioOutcome out = run_scenario(c);
  Note("%s: ran in %.1f s (training %.1f s), J = %s, C(t_f) = %s, E(t_f) = %s, termination %s", name.c_str(),
       Seconds(start), Get(out.summary, "wall_time_s"), GetText(out.summary, "J_total").c_str(),
       GetText(out.summary, "C_tf").c_str(), GetText(out.summary, "E_tf").c_str(),
       GetText(out.summary, "termination").c_str());
  if (out.summary.count("fbs.status"))
    Note("%s FBS: %s, %s iterations, J = %s", name.c_str(), GetText(out.summary, "fbs.status").c_str(),
         GetText(out.summary, "fbs.iterations").c_str(), GetText(out.summary, "fbs.J_total").c_str());
  return {out.summary, out.exit_code};
}

void OptimizerParity(const LqOutcome& lq, const std::map<std::string, FigureRun>& runs) {
  const double lq_err = std::abs(lq.j_nn - lq.j_star);
  bool ok = lq_err < 1e-3;
  std::string compared;
  double worst = 0.0;
  for (const auto& [name, run] : runs) {
    const std::string status = GetText(run.summary, "fbs.status");
    if (status != "converged") {
      Note("%s: FBS %s, no parity comparison", name.c_str(), status.empty() ? "not run" : status.c_str());
      continue;
    }
    const double j_nn = Get(run.summary, "J_total"), j_fbs = Get(run.summary, "fbs.J_total");
    const double rel = std::abs(j_fbs - j_nn) / std::abs(j_nn);
    Note("%s: J_NN = %.8g, J_FBS = %.8g, relative difference %.3g", name.c_str(), j_nn, j_fbs, rel);
    if (run.summary.count("restart_losses"))
      Note("%s: per-seed final losses %s (best seed %s)", name.c_str(),
           GetText(run.summary, "restart_losses").c_str(), GetText(run.summary, "best_seed").c_str());
    compared += (compared.empty() ? "" : ", ") + name;
    worst = std::max(worst, rel);
    ok = ok && rel < 0.05;
  }
  Verdict(4, "trained NN vs Riccati optimum (LQ) and vs converged FBS (therapy presets)", ok,
          Fmt("|J_NN - J*| = %.3g (< 1e-3); worst |J_FBS - J_NN|/|J_NN| = %.3g (< 0.05)", lq_err, worst) +
              " over {" + compared + "}");
}

void FigureTrends(const std::map<std::string, FigureRun>& runs) {
  const ImmunoParams params;
  const auto& f1 = runs.at("fig1").summary;
  const double c0 = Get(f1, "C_0"), cf = Get(f1, "C_tf"), e0 = Get(f1, "E_0"), ef = Get(f1, "E_tf");
  const double wall = Get(f1, "wall_time_s");
  Verdict(5, "fig1 reduces cancer and raises effector cells", cf < 0.1 * c0 && ef > e0 && wall < 300.0,
          Fmt("C(t_f) = %.3g (< %.3g), E(t_f) = %.4g", cf, 0.1 * c0, ef) + Fmt(" (> %.4g), training %.1f s (< 300 s)", e0, wall));

  const auto& f2 = runs.at("fig2").summary;
  const double c2 = Get(f2, "C_tf");
  Verdict(6, "fig2 low-dose box fails to control the tumor", c2 > 0.5 * params.C_star,
          Fmt("C(t_f) = %.6g (> %.6g)", c2, 0.5 * params.C_star));

  const auto& f3 = runs.at("fig3").summary;
  const double c3 = Get(f3, "C_tf"), c30 = Get(f3, "C_0");
  Verdict(7, "fig3 combination therapy reduces cancer", c3 < c30,
          Fmt("C(t_f) = %.3g (< %.6g); E: %.4g", c3, c30, Get(f3, "E_0")) +
              Fmt(" -> %.6g", Get(f3, "E_tf")) + " (effector " + GetText(f3, "effector_trend") + ")");
}

StateVector IntegrateTo(const ControlProblem& problem, std::function<std::vector<double>(double)> control,
                        double t1, std::size_t n_steps, std::vector<double>& excess_error) {
  OdeProblem ode;
  ode.rhs = [&](double t, std::span<const double> y, std::span<double> d) {
    const std::vector<double> u = control(t);
    problem.dynamics(t, y, u, d);
  };
  ode.t1 = t1;
  ode.y0 = problem.initial_state();
  const Trajectory tr = solve_rk4(ode, n_steps);
  excess_error.clear();
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const double excess = tr.state(i)[kE] + tr.state(i)[kS] - 10.0;
    excess_error.push_back(std::abs(excess - 10.0 * std::exp(-tr.times()[i])));
  }
  return to_state(tr.back());
}

void Conservation() {
  const double t1 = 5.0;
  const std::size_t n = 50000;
  const TherapyProblem immuno{preset("fig1").therapy};
  const TherapyProblem combo{preset("fig3").therapy};
  struct Case {
    const char* label;
    const ControlProblem* problem;
    std::function<std::vector<double>(double)> control;
  };
  const std::vector<Case> cases = {
      {"no treatment", &immuno, [](double) { return std::vector<double>{1.0, 1.0}; }},
      {"maximum dose", &immuno, [](double) { return std::vector<double>{3.0, -3.0}; }},
      {"oscillating dose", &immuno,
       [](double t) { return std::vector<double>{2.0 + std::sin(7 * t), -1.0 + 2.0 * std::cos(3 * t)}; }},
      {"combination", &combo,
       [](double t) { return std::vector<double>{1.05, 0.1 + 0.9 * std::cos(t), 0.9 + 0.2 * std::sin(5 * t)}; }},
  };
  bool ok = true;
  double worst_end = 0.0, worst_track = 0.0;
  for (const Case& c : cases) {
    std::vector<double> track;
    const StateVector y = IntegrateTo(*c.problem, c.control, t1, n, track);
    const double end = std::abs(y[kE] + y[kS] - 10.0);
    double dev = 0.0;
    for (double v : track) dev = std::max(dev, v);
    Note("%s: |E+S-10| at t=5 is %.6g (10 e^-5 = %.6g); max |excess - 10 e^-t| = %.3g", c.label, end,
         10.0 * std::exp(-5.0), dev);
    ok = ok && end < 10.0 * std::exp(-5.0) + 1e-9 && dev < 1e-9;
    worst_end = std::max(worst_end, end);
    worst_track = std::max(worst_track, dev);
  }
  Verdict(8, "E + S relaxes to 10 at rate 1/day under any control", ok,
          Fmt("worst excess at t=5: %.6g (< %.6g + 1e-9); worst deviation from 10 e^-t: %.3g", worst_end,
              10.0 * std::exp(-5.0), worst_track));
}

void IntegratorOrder() {
  OdeProblem p;
  p.rhs = [](double, std::span<const double> y, std::span<double> d) { d[0] = -2.0 * y[0]; };
  p.y0 = {1.0};
  auto error = [&](std::size_t n) {
    const Trajectory tr = solve_rk4(p, n);
    double e = 0.0;
    for (std::size_t i = 0; i < tr.size(); ++i) e = std::max(e, std::abs(tr.state(i)[0] - std::exp(-2.0 * tr.times()[i])));
    return e;
  };
  const double e1 = error(20), e2 = error(40), e3 = error(80);
  const double o1 = std::log2(e1 / e2), o2 = std::log2(e2 / e3);
  Note("max errors at h = 1/20, 1/40, 1/80: %.3g, %.3g, %.3g", e1, e2, e3);
  Verdict(9, "RK4 observed order on y' = -2y", std::abs(o1 - 4.0) <= 0.2 && std::abs(o2 - 4.0) <= 0.2,
          Fmt("orders %.3f and %.3f (4.0 +- 0.2)", o1, o2));
}

void Determinism(const fs::path& root, const fs::path& first_run) {
  const fs::path again = root / "fig2_repeat";
  RunPreset("fig2", Solver::kNn, again);
  const std::string a = ReadFile(first_run / "loss_log.csv"), b = ReadFile(again / "loss_log.csv");
  Verdict(10, "identical seed and config give byte-identical loss logs", !a.empty() && a == b,
          Fmt("fig2 loss_log.csv: %.0f and %.0f bytes, ", static_cast<double>(a.size()), static_cast<double>(b.size())) +
              (a == b ? "identical" : "different"));
}

}  // namespace

int main() {
  std::printf("SIMD backend: %s\n", std::string(kernels::backend_name(kernels::active_backend())).c_str());
  const fs::path root = fs::temp_directory_path() / "udeoc_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  GradientCorrectness();
  EngineEquivalence();
  const LqOutcome lq = LqCriteria();

  std::map<std::string, FigureRun> runs;
  for (const char* name : {"fig1", "fig2", "fig3"}) runs[name] = RunPreset(name, Solver::kBoth, root / name);
  OptimizerParity(lq, runs);
  FigureTrends(runs);
  Conservation();
  IntegratorOrder();
  Determinism(root, root / "fig2");

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
