#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "udeoc/error.hpp"
#include "udeoc/scenario.hpp"

using namespace udeoc;
namespace fs = std::filesystem;

namespace {

std::string Dump(const ScenarioConfig& c) {
  std::ostringstream os;
  dump_config(os, c);
  return os.str();
}

ScenarioConfig Parse(const std::string& text, const ScenarioConfig& base = {}) {
  std::istringstream is(text);
  return parse_config(is, base);
}

std::string ParseError(const std::string& text) {
  try {
    Parse(text);
  } catch (const InvalidArgument& e) {
    return e.what();
  }
  return "";
}

std::string FirstLine(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

fs::path TempDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("udeoc_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ScenarioConfig Small(const std::string& name, Solver solver) {
  ScenarioConfig c = preset("fig1");
  c.name = name;
  c.solver = solver;
  c.train.n_steps = 4000;
  c.train.adam_iters = 3;
  c.train.bfgs_max_iters = 2;
  c.train.snapshot_every = 2;
  c.fbs.max_iters = 3;
  c.output_dir = TempDir(name).string();
  return c;
}

}  // namespace

TEST_CASE("solver names") {
  CHECK(parse_solver("both") == Solver::kBoth);
  CHECK(solver_name(Solver::kFbs) == "fbs");
  CHECK_THROWS_AS(parse_solver("newton"), InvalidArgument);
}

TEST_CASE("presets") {
  const ScenarioConfig f1 = preset("fig1");
  CHECK(f1.therapy.bounds == ControlBounds{1, 3, -3, 1, false, 0.7, 1.1});
  CHECK(f1.therapy.weights == ObjectiveWeights{1, 10, 100, 2, 1, 0, 1, 10, 100});
  CHECK(f1.therapy.model == TherapyModel::kImmuno);
  CHECK(f1.therapy.t_final == 2.0);
  CHECK(f1.train.n_steps == 20000);

  const ScenarioConfig f2 = preset("fig2");
  CHECK(f2.therapy.bounds.M1 == 1.1);
  CHECK(f2.therapy.bounds.m2 == 0.8);
  CHECK(f2.therapy.weights == f1.therapy.weights);

  const ScenarioConfig f3 = preset("fig3");
  CHECK(f3.therapy.model == TherapyModel::kCombo);
  CHECK(f3.therapy.bounds == ControlBounds{1, 1.1, -0.8, 1, true, 0.7, 1.1});
  CHECK(f3.therapy.weights == ObjectiveWeights{1, 1, 100, 2, 1, 1, 1, 1, 100});
  CHECK(f3.therapy.coupling == ChemoCoupling{2, 1});
  CHECK(f3.train.restarts == 5);

  CHECK(preset("baseline-uncontrolled").solver == Solver::kNone);
  CHECK_THROWS_AS(preset("fig4"), InvalidArgument);
  for (const std::string& name : preset_names()) CHECK_NOTHROW(preset(name).validate());
}

TEST_CASE("preset listing carries the model tables") {
  std::ostringstream os;
  list_presets(os);
  const std::string text = os.str();
  for (const char* needle : {"gamma=37.414", "beta=0.009", "C=1000", "kappa=1.2", "C_star=1000", "fig3"})
    CHECK_MESSAGE(text.find(needle) != std::string::npos, needle);
}

TEST_CASE("dump and parse round-trip") {
  for (const std::string& name : preset_names()) {
    const ScenarioConfig c = preset(name);
    CHECK(Parse(Dump(c)) == c);
  }
  ScenarioConfig odd = preset("fig3");
  odd.train.adam_lr = 0.1 / 3.0;
  odd.therapy.params.gamma = 1e-7 + 37.0;
  odd.therapy.initial[kA] = 0.3;
  odd.fbs.tol = 1.0 / 7.0;
  odd.output_dir = "some/dir";
  odd.train.quadrature = Quadrature::kTrapezoid;
  const ScenarioConfig back = Parse(Dump(odd), preset("fig1"));
  CHECK(back == odd);
  CHECK(Dump(back) == Dump(odd));
}

TEST_CASE("sections, comments and defaults") {
  const ScenarioConfig c = Parse(
      "# header comment\n"
      "name = mine\n"
      "model = combo   # trailing comment\n"
      "[train]\n"
      "adam_iters = 7\n"
      "seed = 4\n"
      "[bounds]\n"
      "M1 = 1.5\n");
  CHECK(c.name == "mine");
  CHECK(c.therapy.model == TherapyModel::kCombo);
  CHECK(c.therapy.bounds.has_chemo);
  CHECK(c.train.adam_iters == 7);
  CHECK(c.train.seed == 4);
  CHECK(c.therapy.bounds.M1 == 1.5);
  CHECK(c.train.bfgs_max_iters == TrainConfig{}.bfgs_max_iters);
}

TEST_CASE("bad keys are all reported") {
  const std::string msg = ParseError("foo = 1\nweights.zz = 2\ntrain.adam_lr = fast\nno equals sign\n");
  CHECK(msg.find("foo") != std::string::npos);
  CHECK(msg.find("weights.zz") != std::string::npos);
  CHECK(msg.find("train.adam_lr") != std::string::npos);
  CHECK(msg.find("line 4") != std::string::npos);

  const std::string invalid = ParseError("bounds.M1 = 0.5\ntrain.n_steps = 0\n");
  CHECK(invalid.find("bounds") != std::string::npos);
  CHECK(invalid.find("train.n_steps") != std::string::npos);
  CHECK_THROWS_AS(load_config("/nonexistent/config.txt"), InvalidArgument);
}

TEST_CASE("initial network matches the problem") {
  const TherapyProblem p{preset("fig3").therapy};
  const MlpParams net = initial_network(p, 1);
  CHECK(net.input_dim() == 3);
  CHECK(net.output_dim() == 3);
  CHECK(net.layers().back().activation == Activation::kTanh);
  const LqProblem lq;
  const MlpParams lin = initial_network(lq, 1);
  CHECK(lin.output_dim() == 1);
  CHECK(lin.layers().back().activation == Activation::kLinear);
  CHECK(initial_network(p, 2) == initial_network(p, 2));
}

TEST_CASE("network run writes the artifacts") {
  const ScenarioConfig c = Small("nn", Solver::kNn);
  const ScenarioOutcome out = run_scenario(c);
  CHECK(out.exit_code == 0);
  const fs::path dir = c.output_dir;
  for (const char* f : {"trajectory.csv", "controls.csv", "loss_log.csv", "pmp_residual.csv", "summary.txt",
                        "config.txt", "final_params.csv"})
    CHECK_MESSAGE(fs::exists(dir / f), f);
  CHECK(FirstLine(dir / "trajectory.csv") == "t,C,A,I,E,S");
  CHECK(FirstLine(dir / "controls.csv") == "t,u1,u2,v1,v2");
  CHECK(FirstLine(dir / "loss_log.csv") == "iter,total,running_state,running_toxicity,terminal,grad_norm");
  CHECK(FirstLine(dir / "pmp_residual.csv") == "t,H,res_u1,res_u2");
  CHECK(fs::exists(dir / "snapshots"));
  CHECK(out.summary.at("t_final") == "2");
  CHECK(out.summary.count("J_total") == 1);
  CHECK(out.summary.count("effector_trend") == 1);
  CHECK(load_config(dir / "config.txt") == c);

  std::ifstream traj(dir / "trajectory.csv");
  std::size_t rows = 0;
  for (std::string line; std::getline(traj, line);) ++rows;
  CHECK(rows == c.train.n_steps + 2);
}

TEST_CASE("sweep and combination runs") {
  ScenarioConfig c = Small("both", Solver::kBoth);
  const ScenarioOutcome both = run_scenario(c);
  CHECK(both.exit_code == 0);
  const fs::path dir = c.output_dir;
  for (const char* f : {"sweep_report.csv", "fbs_trajectory.csv", "fbs_controls.csv", "fbs_pmp_residual.csv"})
    CHECK_MESSAGE(fs::exists(dir / f), f);
  CHECK(both.summary.at("fbs.status") == "not-converged");
  CHECK(both.summary.at("fbs.iterations") == "3");

  ScenarioConfig combo = Small("combo", Solver::kFbs);
  const ScenarioConfig f3 = preset("fig3");
  combo.therapy = f3.therapy;
  const ScenarioOutcome co = run_scenario(combo);
  CHECK(FirstLine(fs::path(combo.output_dir) / "controls.csv") == "t,u1,u2,u3,v1,v2,v3");
  CHECK(co.summary.count("J_total") == 1);

  ScenarioConfig none = Small("none", Solver::kNone);
  const ScenarioOutcome un = run_scenario(none);
  CHECK(un.exit_code == 0);
  CHECK(un.summary.at("effector_trend") == "not-increased");
}

TEST_CASE("loss logs are byte-identical across runs") {
  ScenarioConfig a = Small("det_a", Solver::kNn), b = Small("det_b", Solver::kNn);
  run_scenario(a);
  run_scenario(b);
  std::ifstream fa(fs::path(a.output_dir) / "loss_log.csv"), fb(fs::path(b.output_dir) / "loss_log.csv");
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK_FALSE(sa.str().empty());
}
