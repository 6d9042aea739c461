#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "geomflow/experiment.hpp"

namespace gf = geomflow;

namespace {

int code(gf::ExitCode c) { return static_cast<int>(c); }

int cmd_validate(const std::string& path) {
  const auto cfg = gf::load_config(path);
  std::cout << gf::echo_config(cfg);
  return 0;
}

int cmd_run(const std::string& path, const std::string& out, bool quiet) {
  const auto cfg = gf::load_config(path);
  const auto outcome = gf::run_single(cfg, out, quiet);
  if (outcome.code != gf::ExitCode::ok) {
    std::cerr << "error: " << outcome.message << "\n";
    if (!outcome.records.empty())
      std::cerr << "stopped after step " << outcome.records.back().step << "; diagnostics up to there are in " << out
                << "/diagnostics.csv\n";
    return code(outcome.code);
  }
  if (!quiet) std::cerr << "wrote " << outcome.records.size() << " diagnostic rows to " << out << "\n";
  return 0;
}

int cmd_eoc(const std::string& path, const std::string& out, bool quiet) {
  const auto cfg = gf::load_config(path);
  const auto table = gf::run_eoc(cfg, quiet);
  std::filesystem::create_directories(out);
  {
    std::ofstream echo(std::filesystem::path(out) / "config.resolved.ini");
    echo << gf::echo_config(cfg);
    std::ofstream csv(std::filesystem::path(out) / "eoc.csv");
    gf::write_eoc_csv(csv, table);
  }
  std::cout << gf::format_eoc_table(table);
  return table.complete ? 0 : code(table.code == gf::ExitCode::ok ? gf::ExitCode::failure : table.code);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geomflow: isoparametric finite elements for curvature flows"};
  app.require_subcommand(1);
  std::string config, output = "out";
  bool quiet = false;

  auto* run = app.add_subcommand("run", "evolve one configuration, write diagnostics.csv and snapshots");
  auto* eoc = app.add_subcommand("eoc", "run all refinement levels and report convergence orders");
  auto* validate = app.add_subcommand("validate", "print the fully resolved configuration");
  for (auto* sub : {run, eoc, validate}) {
    sub->add_option("--config", config, "configuration file (INI)")->required()->check(CLI::ExistingFile);
    sub->add_flag("--quiet", quiet, "no progress output");
  }
  run->add_option("--output", output, "output directory")->capture_default_str();
  eoc->add_option("--output", output, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : code(gf::ExitCode::config);
  }

  try {
    if (*validate) return cmd_validate(config);
    if (*run) return cmd_run(config, output, quiet);
    return cmd_eoc(config, output, quiet);
  } catch (const gf::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return code(gf::ExitCode::config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return code(gf::ExitCode::failure);
  }
}
