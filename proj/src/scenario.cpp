#include "udeoc/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "udeoc/error.hpp"
#include "udeoc/grad.hpp"
#include "udeoc/kernels.hpp"
#include "util.hpp"

namespace fs = std::filesystem;

namespace udeoc {

std::string solver_name(Solver solver) {
  switch (solver) {
    case Solver::kNone: return "none";
    case Solver::kNn: return "nn";
    case Solver::kFbs: return "fbs";
    case Solver::kBoth: return "both";
  }
  return "unknown";
}

Solver parse_solver(const std::string& name) {
  if (name == "none") return Solver::kNone;
  if (name == "nn") return Solver::kNn;
  if (name == "fbs") return Solver::kFbs;
  if (name == "both") return Solver::kBoth;
  throw InvalidArgument("unknown solver '" + name + "' (expected none, nn, fbs or both)");
}

bool operator==(const ScenarioConfig& a, const ScenarioConfig& b) {
  return a.name == b.name && a.therapy == b.therapy && a.train == b.train &&
         a.fbs_omega == b.fbs_omega && a.fbs == b.fbs && a.solver == b.solver &&
         a.output_dir == b.output_dir;
}

namespace {

// A config key: how to print it, parse it and (optionally) check it.
struct Key {
  std::string name;
  std::function<std::string(const ScenarioConfig&)> get;
  std::function<void(ScenarioConfig&, const std::string&)> set;
  std::function<std::string(const ScenarioConfig&)> check;  // empty string when fine
};

using RealRef = std::function<double&(ScenarioConfig&)>;
using CountRef = std::function<std::size_t&(ScenarioConfig&)>;

std::string Positive(double v) { return std::isfinite(v) && v > 0.0 ? "" : "must be finite and > 0"; }
std::string Finite(double v) { return std::isfinite(v) ? "" : "must be finite"; }
std::string NonNegative(double v) { return std::isfinite(v) && v >= 0.0 ? "" : "must be finite and >= 0"; }

Key Real(std::string name, RealRef ref, std::function<std::string(double)> rule = Finite) {
  return {name,
          [ref](const ScenarioConfig& c) { return format_shortest(ref(const_cast<ScenarioConfig&>(c))); },
          [ref](ScenarioConfig& c, const std::string& v) { ref(c) = parse_double(v); },
          [ref, rule](const ScenarioConfig& c) { return rule(ref(const_cast<ScenarioConfig&>(c))); }};
}

Key Count(std::string name, CountRef ref, std::size_t minimum) {
  return {name,
          [ref](const ScenarioConfig& c) { return std::to_string(ref(const_cast<ScenarioConfig&>(c))); },
          [ref](ScenarioConfig& c, const std::string& v) { ref(c) = parse_index(v); },
          [ref, minimum](const ScenarioConfig& c) {
            return ref(const_cast<ScenarioConfig&>(c)) >= minimum
                       ? std::string()
                       : "must be >= " + std::to_string(minimum);
          }};
}

std::string Ordered(double lo, double hi) { return lo < hi ? "" : "lower bound must be below upper"; }

const std::vector<Key>& Keys() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    k.push_back({"name", [](const ScenarioConfig& c) { return c.name; },
                 [](ScenarioConfig& c, const std::string& v) { c.name = v; },
                 [](const ScenarioConfig& c) { return c.name.empty() ? "must not be empty" : ""; }});
    k.push_back({"model",
                 [](const ScenarioConfig& c) {
                   return std::string(c.therapy.model == TherapyModel::kCombo ? "combo" : "immuno");
                 },
                 [](ScenarioConfig& c, const std::string& v) {
                   if (v == "immuno") c.therapy.model = TherapyModel::kImmuno;
                   else if (v == "combo") c.therapy.model = TherapyModel::kCombo;
                   else throw InvalidArgument("expected immuno or combo");
                 },
                 {}});
    k.push_back({"solver", [](const ScenarioConfig& c) { return solver_name(c.solver); },
                 [](ScenarioConfig& c, const std::string& v) { c.solver = parse_solver(v); }, {}});
    k.push_back({"output", [](const ScenarioConfig& c) { return c.output_dir; },
                 [](ScenarioConfig& c, const std::string& v) { c.output_dir = v; },
                 [](const ScenarioConfig& c) { return c.output_dir.empty() ? "must not be empty" : ""; }});
    k.push_back(Real("t_final", [](ScenarioConfig& c) -> double& { return c.therapy.t_final; }, Positive));

#define UDEOC_PARAM(field) \
  k.push_back(Real("params." #field, [](ScenarioConfig& c) -> double& { return c.therapy.params.field; }, Positive))
    UDEOC_PARAM(r_C); UDEOC_PARAM(r_max); UDEOC_PARAM(C_star); UDEOC_PARAM(kappa);
    UDEOC_PARAM(r_A); UDEOC_PARAM(delta_A); UDEOC_PARAM(r_I); UDEOC_PARAM(delta_I);
    UDEOC_PARAM(r_E); UDEOC_PARAM(E_star); UDEOC_PARAM(r_S); UDEOC_PARAM(S_star);
    UDEOC_PARAM(beta); UDEOC_PARAM(gamma);
#undef UDEOC_PARAM

    const char* state_names[] = {"C", "A", "I", "E", "S"};
    for (std::size_t i = 0; i < kStateDim; ++i)
      k.push_back(Real(std::string("initial.") + state_names[i],
                       [i](ScenarioConfig& c) -> double& { return c.therapy.initial[i]; }));

    auto bound = [&k](const char* name, double ControlBounds::*field,
                      std::function<std::string(const ControlBounds&)> check) {
      Key key = Real(name, [field](ScenarioConfig& c) -> double& { return c.therapy.bounds.*field; });
      if (check) key.check = [check](const ScenarioConfig& c) { return check(c.therapy.bounds); };
      k.push_back(std::move(key));
    };
    bound("bounds.m1", &ControlBounds::m1, {});
    bound("bounds.M1", &ControlBounds::M1, [](const ControlBounds& b) { return Ordered(b.m1, b.M1); });
    bound("bounds.m2", &ControlBounds::m2, {});
    bound("bounds.M2", &ControlBounds::M2, [](const ControlBounds& b) { return Ordered(b.m2, b.M2); });
    bound("bounds.m3", &ControlBounds::m3, [](const ControlBounds& b) {
      return !b.has_chemo || b.m3 > 0.0 ? std::string() : std::string("must be > 0");
    });
    bound("bounds.M3", &ControlBounds::M3, [](const ControlBounds& b) {
      return b.has_chemo ? Ordered(b.m3, b.M3) : std::string();
    });

#define UDEOC_WEIGHT(field, rule) \
  k.push_back(Real("weights." #field, [](ScenarioConfig& c) -> double& { return c.therapy.weights.field; }, rule))
    UDEOC_WEIGHT(a, Finite); UDEOC_WEIGHT(b, Finite); UDEOC_WEIGHT(c, Finite);
    UDEOC_WEIGHT(c1, NonNegative); UDEOC_WEIGHT(c2, NonNegative); UDEOC_WEIGHT(c3, NonNegative);
    UDEOC_WEIGHT(d1, Finite); UDEOC_WEIGHT(d2, Finite); UDEOC_WEIGHT(d3, Finite);
#undef UDEOC_WEIGHT

    k.push_back(Real("coupling.e1", [](ScenarioConfig& c) -> double& { return c.therapy.coupling.e1; }, NonNegative));
    k.push_back(Real("coupling.e2", [](ScenarioConfig& c) -> double& { return c.therapy.coupling.e2; }, NonNegative));

    k.push_back(Real("train.adam_lr", [](ScenarioConfig& c) -> double& { return c.train.adam_lr; }, Positive));
    k.push_back(Count("train.adam_iters", [](ScenarioConfig& c) -> std::size_t& { return c.train.adam_iters; }, 0));
    k.push_back(Real("train.adam_beta1", [](ScenarioConfig& c) -> double& { return c.train.adam_beta1; },
                     [](double v) { return v >= 0.0 && v < 1.0 ? "" : "must be in [0, 1)"; }));
    k.push_back(Real("train.adam_beta2", [](ScenarioConfig& c) -> double& { return c.train.adam_beta2; },
                     [](double v) { return v >= 0.0 && v < 1.0 ? "" : "must be in [0, 1)"; }));
    k.push_back(Real("train.adam_eps", [](ScenarioConfig& c) -> double& { return c.train.adam_eps; }, Positive));
    k.push_back(Real("train.bfgs_init_step_norm",
                     [](ScenarioConfig& c) -> double& { return c.train.bfgs_init_step_norm; }, Positive));
    k.push_back(Count("train.bfgs_max_iters", [](ScenarioConfig& c) -> std::size_t& { return c.train.bfgs_max_iters; }, 0));
    k.push_back(Real("train.loss_stall_tol", [](ScenarioConfig& c) -> double& { return c.train.loss_stall_tol; }, Positive));
    k.push_back(Count("train.stall_window", [](ScenarioConfig& c) -> std::size_t& { return c.train.stall_window; }, 1));
    k.push_back({"train.seed", [](const ScenarioConfig& c) { return std::to_string(c.train.seed); },
                 [](ScenarioConfig& c, const std::string& v) { c.train.seed = parse_index(v); }, {}});
    k.push_back(Count("train.n_steps", [](ScenarioConfig& c) -> std::size_t& { return c.train.n_steps; }, 1));
    k.push_back(Count("train.snapshot_every", [](ScenarioConfig& c) -> std::size_t& { return c.train.snapshot_every; }, 0));
    k.push_back({"train.quadrature", [](const ScenarioConfig& c) { return quadrature_name(c.train.quadrature); },
                 [](ScenarioConfig& c, const std::string& v) { c.train.quadrature = parse_quadrature(v); }, {}});
    k.push_back(Count("train.restarts", [](ScenarioConfig& c) -> std::size_t& { return c.train.restarts; }, 1));

    k.push_back(Real("fbs.omega", [](ScenarioConfig& c) -> double& { return c.fbs_omega; },
                     [](double v) { return v > 0.0 && v <= 1.0 ? "" : "must be in (0, 1]"; }));
    k.push_back(Real("fbs.tol", [](ScenarioConfig& c) -> double& { return c.fbs.tol; },
                     [](double v) { return v > 0.0 ? "" : "must be > 0"; }));
    k.push_back(Count("fbs.max_iters", [](ScenarioConfig& c) -> std::size_t& { return c.fbs.max_iters; }, 1));
    k.push_back(Real("fbs.lambda_limit", [](ScenarioConfig& c) -> double& { return c.fbs.lambda_limit; }, Positive));
    return k;
  }();
  return keys;
}

const Key* FindKey(const std::string& name) {
  for (const Key& k : Keys())
    if (k.name == name) return &k;
  return nullptr;
}

[[noreturn]] void ThrowErrors(const std::vector<std::string>& errors) {
  std::string msg = "invalid config:";
  for (const std::string& e : errors) msg += "\n  " + e;
  throw InvalidArgument(msg);
}

}  // namespace

void ScenarioConfig::validate() const {
  std::vector<std::string> errors;
  for (const Key& k : Keys()) {
    if (!k.check) continue;
    const std::string problem = k.check(*this);
    if (!problem.empty()) errors.push_back(k.name + ": " + problem);
  }
  if (therapy.bounds.has_chemo != (therapy.model == TherapyModel::kCombo))
    errors.push_back("model: chemotherapy bounds are used exactly when model = combo");
  if (!errors.empty()) ThrowErrors(errors);
}

ScenarioConfig parse_config(std::istream& in, const ScenarioConfig& base) {
  ScenarioConfig config = base;
  std::vector<std::string> errors;
  std::string line, section;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    std::string_view body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    if (body.front() == '[') {
      if (body.back() != ']') {
        errors.push_back(where + ": malformed section header");
        continue;
      }
      section = std::string(trim(body.substr(1, body.size() - 2)));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      errors.push_back(where + ": expected key = value");
      continue;
    }
    std::string key(trim(body.substr(0, eq)));
    const std::string value(trim(body.substr(eq + 1)));
    if (!section.empty()) key = section + "." + key;
    const Key* k = FindKey(key);
    if (!k) {
      errors.push_back(key + ": unknown key (" + where + ")");
      continue;
    }
    try {
      k->set(config, value);
    } catch (const Error& e) {
      errors.push_back(key + ": bad value '" + value + "' (" + e.what() + ")");
    }
  }
  if (!errors.empty()) ThrowErrors(errors);
  config.therapy.bounds.has_chemo = config.therapy.model == TherapyModel::kCombo;
  config.validate();
  return config;
}

ScenarioConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config " + path.string());
  return parse_config(in);
}

void dump_config(std::ostream& out, const ScenarioConfig& config) {
  for (const Key& k : Keys()) out << k.name << " = " << k.get(config) << '\n';
}

// ---------------------------------------------------------------------------

namespace {

ScenarioConfig HighDose(const std::string& name) {
  ScenarioConfig c;
  c.name = name;
  c.therapy.model = TherapyModel::kImmuno;
  c.therapy.bounds = ControlBounds{};
  c.therapy.bounds.m1 = 1.0;
  c.therapy.bounds.M1 = 3.0;
  c.therapy.bounds.m2 = -3.0;
  c.therapy.bounds.M2 = 1.0;
  c.therapy.weights = ObjectiveWeights{1.0, 10.0, 100.0, 2.0, 1.0, 0.0, 1.0, 10.0, 100.0};
  c.output_dir = "out/" + name;
  return c;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"baseline", "baseline-uncontrolled", "fig1", "fig2", "fig3"};
}

ScenarioConfig preset(const std::string& name) {
  if (name == "baseline" || name == "fig1") return HighDose(name);
  if (name == "baseline-uncontrolled") {
    ScenarioConfig c = HighDose(name);
    c.solver = Solver::kNone;
    return c;
  }
  if (name == "fig2") {
    ScenarioConfig c = HighDose(name);
    c.therapy.bounds.M1 = 1.1;
    c.therapy.bounds.m2 = 0.8;
    return c;
  }
  if (name == "fig3") {
    ScenarioConfig c = HighDose(name);
    c.therapy.model = TherapyModel::kCombo;
    c.therapy.bounds = ControlBounds{1.0, 1.1, -0.8, 1.0, true, 0.7, 1.1};
    c.therapy.weights = ObjectiveWeights{1.0, 1.0, 100.0, 2.0, 1.0, 1.0, 1.0, 1.0, 100.0};
    c.therapy.coupling = ChemoCoupling{2.0, 1.0};
    c.train.restarts = 5;
    return c;
  }
  std::string known;
  for (const std::string& n : preset_names()) known += " " + n;
  throw InvalidArgument("unknown preset '" + name + "'; known:" + known);
}

void list_presets(std::ostream& out) {
  const ImmunoParams p;
  out << "model parameters\n";
  const std::pair<const char*, double> params[] = {
      {"r_C", p.r_C},     {"r_max", p.r_max}, {"C_star", p.C_star},   {"kappa", p.kappa},
      {"r_A", p.r_A},     {"delta_A", p.delta_A}, {"r_I", p.r_I},     {"delta_I", p.delta_I},
      {"r_E", p.r_E},     {"E_star", p.E_star}, {"r_S", p.r_S},       {"S_star", p.S_star},
      {"beta", p.beta},   {"gamma", p.gamma}};
  for (const auto& [key, value] : params) out << "  " << key << '=' << format_shortest(value) << '\n';
  out << "initial values\n";
  const StateVector y0 = baseline_initial_state();
  const char* names[] = {"C", "A", "I", "E", "S"};
  for (std::size_t i = 0; i < kStateDim; ++i) out << "  " << names[i] << '=' << format_shortest(y0[i]) << '\n';
  out << "presets\n";
  for (const std::string& name : preset_names()) {
    const ScenarioConfig c = preset(name);
    const ControlBounds& b = c.therapy.bounds;
    const ObjectiveWeights& w = c.therapy.weights;
    out << "  " << name << ": model=" << (c.therapy.model == TherapyModel::kCombo ? "combo" : "immuno")
        << " solver=" << solver_name(c.solver) << " t_final=" << format_shortest(c.therapy.t_final)
        << " n_steps=" << c.train.n_steps << '\n';
    out << "    bounds m1=" << format_shortest(b.m1) << " M1=" << format_shortest(b.M1)
        << " m2=" << format_shortest(b.m2) << " M2=" << format_shortest(b.M2);
    if (b.has_chemo) out << " m3=" << format_shortest(b.m3) << " M3=" << format_shortest(b.M3);
    out << '\n';
    out << "    weights a=" << format_shortest(w.a) << " b=" << format_shortest(w.b)
        << " c=" << format_shortest(w.c) << " c1=" << format_shortest(w.c1)
        << " c2=" << format_shortest(w.c2);
    if (b.has_chemo) out << " c3=" << format_shortest(w.c3);
    out << " d1=" << format_shortest(w.d1) << " d2=" << format_shortest(w.d2)
        << " d3=" << format_shortest(w.d3) << '\n';
    if (b.has_chemo)
      out << "    coupling e1=" << format_shortest(c.therapy.coupling.e1)
          << " e2=" << format_shortest(c.therapy.coupling.e2) << '\n';
  }
}

MlpParams initial_network(const ControlProblem& problem, std::uint64_t seed) {
  const std::size_t m = problem.control_dim();
  bool bounded = true;
  for (std::size_t c = 0; c < m; ++c)
    bounded = bounded && std::isfinite(problem.control_lower(c)) && std::isfinite(problem.control_upper(c));
  if (bounded) return control_network(m, seed);
  const std::size_t widths[] = {1, 10, 10, m};
  const Activation acts[] = {Activation::kGelu, Activation::kGelu, Activation::kLinear};
  return init_scaled_uniform(widths, acts, seed);
}

// ---------------------------------------------------------------------------

namespace {

std::ofstream OpenOut(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void WriteTrajectory(const fs::path& path, const Rk4Tape& tape) {
  std::ofstream out = OpenOut(path);
  out << "t,C,A,I,E,S\n";
  for (std::size_t i = 0; i <= tape.n_steps; ++i) {
    out << format_double(tape.times[i]);
    for (double v : tape.node(i)) out << ',' << format_double(v);
    out << '\n';
  }
}

void WriteControls(const fs::path& path, const StageControls& controls, const ControlBounds& bounds) {
  std::ofstream out = OpenOut(path);
  const std::size_t m = controls.dim;
  out << "t";
  for (std::size_t c = 0; c < m; ++c) out << ",u" << c + 1;
  for (std::size_t c = 0; c < m; ++c) out << ",v" << c + 1;
  out << '\n';
  for (std::size_t i = 0; i <= controls.n_steps; ++i) {
    const auto u = controls.at(2 * i);
    out << format_double(controls.times[2 * i]);
    for (double v : u) out << ',' << format_double(v);
    for (double v : doses(u, bounds)) out << ',' << format_double(v);
    out << '\n';
  }
}

void WritePmp(const fs::path& path, const PmpResidual& residual) {
  std::ofstream out = OpenOut(path);
  write_pmp_csv(out, residual);
}

// Writes the solution artifacts and fills the summary; `prefix` keeps FBS
// files apart in "both" mode.
void WriteSolution(const fs::path& dir, const std::string& prefix, const TherapyProblem& problem,
                   const StageControls& controls, Quadrature quadrature, double active_tol,
                   std::map<std::string, std::string>& summary, const std::string& key_prefix) {
  const Rk4Tape tape = integrate_controlled(problem, controls);
  const CostBreakdown cost = tape_objective(problem, tape, controls, quadrature);
  WriteTrajectory(dir / (prefix + "trajectory.csv"), tape);
  WriteControls(dir / (prefix + "controls.csv"), controls, problem.spec().bounds);
  const PmpResidual residual = pmp_residual(problem, controls.node_curve(), active_tol);
  WritePmp(dir / (prefix + "pmp_residual.csv"), residual);

  const auto y0 = tape.node(0), yf = tape.node(tape.n_steps);
  summary[key_prefix + "J_total"] = format_double(cost.total);
  summary[key_prefix + "J_running_state"] = format_double(cost.running_state);
  summary[key_prefix + "J_running_toxicity"] = format_double(cost.running_toxicity);
  summary[key_prefix + "J_terminal"] = format_double(cost.terminal);
  const char* names[] = {"C", "A", "I", "E", "S"};
  for (std::size_t k = 0; k < kStateDim; ++k) {
    summary[key_prefix + names[k] + "_0"] = format_double(y0[k]);
    summary[key_prefix + names[k] + "_tf"] = format_double(yf[k]);
  }
  summary[key_prefix + "effector_trend"] = yf[kE] > y0[kE] ? "increased" : "not-increased";
  summary[key_prefix + "pmp_max_residual"] = format_double(residual.max_residual);
}

void WriteSummary(const fs::path& path, const std::map<std::string, std::string>& summary) {
  std::ofstream out = OpenOut(path);
  for (const auto& [key, value] : summary) out << key << '=' << value << '\n';
}

}  // namespace

ScenarioOutcome run_scenario(const ScenarioConfig& config) {
  config.validate();
  const TherapyProblem problem(config.therapy);
  ScenarioOutcome outcome;
  outcome.output_dir = config.output_dir;
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  {
    std::ofstream out = OpenOut(dir / "config.txt");
    dump_config(out, config);
  }
  auto& summary = outcome.summary;
  summary["scenario"] = config.name;
  summary["model"] = config.therapy.model == TherapyModel::kCombo ? "combo" : "immuno";
  summary["solver"] = solver_name(config.solver);
  summary["t_final"] = format_shortest(config.therapy.t_final);
  summary["n_steps"] = std::to_string(config.train.n_steps);
  summary["seed"] = std::to_string(config.train.seed);
  summary["quadrature"] = quadrature_name(config.train.quadrature);
  // bounds count as active within the sweep tolerance of them
  const double active_tol = 10.0 * config.fbs.tol;
  summary["pmp_active_tol"] = format_shortest(active_tol);
  summary["simd_backend"] = kernels::backend_name(kernels::active_backend());

  const std::size_t N = config.train.n_steps;
  double nn_total = std::nan("");

  if (config.solver == Solver::kNone) {
    ControlCurve curve;
    curve.dim = problem.control_dim();
    const std::vector<double> rest = config.therapy.bounds.no_treatment();
    for (std::size_t i = 0; i <= N; ++i) {
      curve.times.push_back(i == N ? problem.t1()
                                   : problem.t0() + (problem.t1() - problem.t0()) * static_cast<double>(i) /
                                                        static_cast<double>(N));
      curve.values.insert(curve.values.end(), rest.begin(), rest.end());
    }
    const StageControls controls = curve_controls(curve);
    try {
      WriteSolution(dir, "", problem, controls, config.train.quadrature, active_tol, summary, "");
    } catch (const DivergenceError& e) {
      summary["termination"] = "divergence";
      summary["message"] = e.what();
      outcome.exit_code = 2;
      WriteSummary(dir / "summary.txt", summary);
      return outcome;
    }
    std::ofstream log = OpenOut(dir / "loss_log.csv");
    const CostBreakdown cost = tape_objective(problem, integrate_controlled(problem, controls), controls,
                                              config.train.quadrature);
    write_loss_log(log, {IterationRecord{0, "none", cost, 0.0}});
    summary["termination"] = "none";
  }

  if (config.solver == Solver::kNn || config.solver == Solver::kBoth) {
    TrainResult result;
    std::uint64_t best_seed = config.train.seed;
    std::string restart_losses;
    for (std::size_t r = 0; r < config.train.restarts; ++r) {
      TrainConfig tc = config.train;
      tc.seed = config.train.seed + r;
      const fs::path snap_dir = config.train.restarts == 1
                                    ? dir / "snapshots"
                                    : dir / "snapshots" / ("seed_" + std::to_string(tc.seed));
      fs::create_directories(snap_dir);
      TrainResult run = train(problem, initial_network(problem, tc.seed), tc,
                              [&](std::size_t iter, const MlpParams& p) {
                                std::ostringstream name;
                                name << "params_iter_" << std::setw(4) << std::setfill('0') << iter << ".csv";
                                std::ofstream out = OpenOut(snap_dir / name.str());
                                write_snapshot(out, p);
                              });
      const double loss = run.history.back().cost.total;
      restart_losses += (r ? "," : "") + std::to_string(tc.seed) + ":" + format_double(loss);
      if (r == 0 || (run.reason != Termination::kDivergence &&
                     (result.reason == Termination::kDivergence || loss < result.history.back().cost.total))) {
        result = std::move(run);
        best_seed = tc.seed;
      }
    }
    if (config.train.restarts > 1) {
      summary["restart_losses"] = restart_losses;
      summary["best_seed"] = std::to_string(best_seed);
    }
    {
      std::ofstream log = OpenOut(dir / "loss_log.csv");
      write_loss_log(log, result.history);
    }
    {
      std::ofstream out = OpenOut(dir / "final_params.csv");
      write_snapshot(out, result.params);
    }
    summary["termination"] = termination_name(result.reason);
    summary["message"] = result.message;
    summary["iterations"] = std::to_string(result.history.size());
    summary["initial_loss"] = format_double(result.history.front().cost.total);
    summary["final_loss"] = format_double(result.history.back().cost.total);
    summary["curvature_skips"] = std::to_string(result.curvature_skips);
    summary["divergence_events"] = std::to_string(result.divergence_events);
    summary["wall_time_s"] = format_shortest(std::round(result.wall_time * 1000.0) / 1000.0);
    WriteSolution(dir, "", problem, network_controls(result.params, problem, N), config.train.quadrature,
                  active_tol, summary, "");
    nn_total = parse_double(summary["J_total"]);
    if (result.reason == Termination::kDivergence) outcome.exit_code = 2;
  }

  if (config.solver == Solver::kFbs || config.solver == Solver::kBoth) {
    const bool primary = config.solver == Solver::kFbs;
    const std::string file_prefix = primary ? "" : "fbs_";
    const std::string key_prefix = primary ? "" : "fbs.";
    SweepReport progress;
    const std::vector<double> guess = config.therapy.bounds.no_treatment();
    try {
      auto [state, report] = sweep_solve(initial_sweep_state(problem, N, guess, config.fbs_omega), problem,
                                         config.fbs, &progress);
      progress = report;
      summary["fbs.status"] = report.converged ? "converged" : "not-converged";
      summary["fbs.message"] = report.message;
      WriteSolution(dir, file_prefix, problem, curve_controls(state.controls), config.train.quadrature,
                    active_tol, summary, key_prefix);
      if (primary) {
        summary["termination"] = report.converged ? "converged" : "max-iters";
        std::ofstream log = OpenOut(dir / "loss_log.csv");
        std::vector<IterationRecord> rows;
        for (const SweepRecord& r : report.iterations) {
          CostBreakdown cost;
          cost.total = r.objective;
          cost.running_state = cost.running_toxicity = cost.terminal = std::nan("");
          rows.push_back({r.iter, "fbs", cost, std::nan("")});
        }
        write_loss_log(log, rows);
      }
      if (report.converged && std::isfinite(nn_total)) {
        const double fbs_total = parse_double(summary[key_prefix + "J_total"]);
        summary["cross.rel_diff"] = format_double(std::abs(fbs_total - nn_total) / std::abs(nn_total));
      }
    } catch (const InstabilityError& e) {
      summary["fbs.status"] = "instability";
      summary["fbs.message"] = e.what();
      summary["fbs.blowup_time"] = format_double(e.time());
      summary["fbs.max_abs_lambda"] = format_double(e.max_abs_lambda());
      summary["fbs.blowup_iteration"] = std::to_string(e.iteration());
      if (primary) {
        summary["termination"] = "instability";
        outcome.exit_code = 2;
      }
    } catch (const DivergenceError& e) {
      summary["fbs.status"] = "divergence";
      summary["fbs.message"] = e.what();
      if (primary) {
        summary["termination"] = "divergence";
        outcome.exit_code = 2;
      }
    }
    summary["fbs.iterations"] = std::to_string(progress.iterations.size());
    summary["fbs.omega_halvings"] = std::to_string(progress.omega_halvings);
    std::ofstream out = OpenOut(dir / "sweep_report.csv");
    write_sweep_report(out, progress);
  }

  WriteSummary(dir / "summary.txt", summary);
  return outcome;
}

}  // namespace udeoc
