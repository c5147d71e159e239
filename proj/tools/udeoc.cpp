// Experiment runner: `udeoc run`, `udeoc presets`.

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "udeoc/error.hpp"
#include "udeoc/scenario.hpp"

namespace fs = std::filesystem;

namespace {

struct RunOptions {
  std::vector<std::string> configs;
  std::vector<std::string> presets;
  std::string solver;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned jobs = 1;
  bool dump_config = false;
};

int Run(const RunOptions& opts) {
  std::vector<udeoc::ScenarioConfig> scenarios;
  try {
    for (const std::string& path : opts.configs) scenarios.push_back(udeoc::load_config(path));
    for (const std::string& name : opts.presets) scenarios.push_back(udeoc::preset(name));
    if (scenarios.empty()) {
      std::cerr << "nothing to run: give a config file or --preset\n";
      return 1;
    }
    for (udeoc::ScenarioConfig& c : scenarios) {
      if (!opts.solver.empty()) c.solver = udeoc::parse_solver(opts.solver);
      if (opts.seed) c.train.seed = *opts.seed;
      if (!opts.out.empty())
        c.output_dir = scenarios.size() == 1 ? opts.out : (fs::path(opts.out) / c.name).string();
      c.validate();
    }
  } catch (const udeoc::Error& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }

  if (opts.dump_config) {
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
      if (i) std::cout << '\n';
      udeoc::dump_config(std::cout, scenarios[i]);
    }
    return 0;
  }

  std::vector<int> codes(scenarios.size(), 0);
  std::atomic<std::size_t> next{0};
  std::mutex io;
  auto worker = [&] {
    for (std::size_t i = next++; i < scenarios.size(); i = next++) {
      const udeoc::ScenarioConfig& c = scenarios[i];
      try {
        const udeoc::ScenarioOutcome outcome = udeoc::run_scenario(c);
        codes[i] = outcome.exit_code;
        std::lock_guard lock(io);
        const auto get = [&](const char* key) {
          const auto it = outcome.summary.find(key);
          return it == outcome.summary.end() ? std::string("-") : it->second;
        };
        std::cout << c.name << ": termination=" << get("termination") << " J=" << get("J_total")
                  << " C_tf=" << get("C_tf") << " E_tf=" << get("E_tf") << " -> "
                  << outcome.output_dir.string() << '\n';
      } catch (const std::exception& e) {
        codes[i] = 1;
        std::lock_guard lock(io);
        std::cerr << c.name << ": " << e.what() << '\n';
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(opts.jobs, scenarios.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  int code = 0;
  for (int c : codes) code = std::max(code, c);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-network and forward-backward sweep optimal control of tumor-immune dynamics"};
  app.require_subcommand(1);

  RunOptions opts;
  CLI::App* run = app.add_subcommand("run", "Run scenarios from config files and/or presets");
  run->add_option("config", opts.configs, "Scenario config files (key = value)");
  run->add_option("--preset", opts.presets, "Builtin scenario (repeatable)")
      ->check(CLI::IsMember(udeoc::preset_names()));
  run->add_option("--solver", opts.solver, "Override the solver")
      ->check(CLI::IsMember({"none", "nn", "fbs", "both"}));
  run->add_option("--seed", opts.seed, "Override the network seed");
  run->add_option("--out", opts.out, "Output directory (per-scenario subdirectories when several)");
  run->add_option("--jobs,-j", opts.jobs, "Scenarios to run in parallel")->check(CLI::PositiveNumber);
  run->add_flag("--dump-config", opts.dump_config, "Print the resolved configs and exit");

  app.add_subcommand("presets", "List builtin scenarios and model constants");

  CLI11_PARSE(app, argc, argv);
  if (app.got_subcommand("presets")) {
    udeoc::list_presets(std::cout);
    return 0;
  }
  return Run(opts);
}
