#pragma once

// Experiment configuration and the runner behind the command-line tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "udeoc/fbs.hpp"
#include "udeoc/optimize.hpp"
#include "udeoc/problem.hpp"

namespace udeoc {

enum class Solver { kNone, kNn, kFbs, kBoth };
std::string solver_name(Solver solver);
/// "none", "nn", "fbs", "both"; throws InvalidArgument otherwise.
Solver parse_solver(const std::string& name);

struct ScenarioConfig {
  std::string name = "custom";
  TherapySpec therapy;
  TrainConfig train;
  double fbs_omega = 0.5;
  SweepOptions fbs;
  Solver solver = Solver::kNn;
  std::string output_dir = "out";

  /// Throws InvalidArgument listing every offending key.
  void validate() const;
  friend bool operator==(const ScenarioConfig& a, const ScenarioConfig& b);
};

/// `key = value` lines; `#` starts a comment; keys are dotted
/// (train.adam_lr) or grouped under a `[train]` header. Keys not given keep
/// the values of `base`. Throws InvalidArgument naming all bad keys.
ScenarioConfig parse_config(std::istream& in, const ScenarioConfig& base = {});
ScenarioConfig load_config(const std::filesystem::path& path);
/// Every key, in a form parse_config reads back to an identical config.
void dump_config(std::ostream& out, const ScenarioConfig& config);

std::vector<std::string> preset_names();
/// Throws InvalidArgument for an unknown name.
ScenarioConfig preset(const std::string& name);
/// Human-readable listing of model parameters, initial values and presets.
void list_presets(std::ostream& out);

/// Initial control network for a problem (seeded).
MlpParams initial_network(const ControlProblem& problem, std::uint64_t seed);

struct ScenarioOutcome {
  int exit_code = 0;  // 0 ok, 2 divergence or instability of the requested solver
  std::map<std::string, std::string> summary;
  std::filesystem::path output_dir;
};

/// Runs the configured solver(s) and writes trajectory.csv, controls.csv,
/// loss_log.csv, pmp_residual.csv and summary.txt (plus sweep files for FBS)
/// into config.output_dir.
ScenarioOutcome run_scenario(const ScenarioConfig& config);

}  // namespace udeoc
