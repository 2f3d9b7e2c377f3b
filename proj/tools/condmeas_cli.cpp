// Command-line front end:
//   condmeas run <scenario>      JSON report for a single coupling value
//   condmeas sweep <scenario>    CSV over a coupling sweep
//   condmeas figure <fig1|fig2|fig3> --out <dir>
// Exit codes: 0 success, 2 validation error, 3 numerical guard, 4 I/O error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "condmeas/errors.hpp"
#include "condmeas/runner.hpp"
#include "condmeas/scenario.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitGuard = 3;
constexpr int kExitIo = 4;

namespace runner = condmeas::runner;
namespace scenario = condmeas::scenario;

void emit(const std::string& content, const std::string& scenario_path, const std::string& target) {
  if (target.empty()) {
    std::cout << content;
    return;
  }
  const auto path = runner::resolve_output(scenario_path, target);
  scenario::write_file(path.string(), content);
  std::cerr << "wrote " << path.string() << "\n";
}

int run_command(const std::string& path, const runner::RunOptions& opt) {
  const scenario::Scenario scn = scenario::load(path);
  const runner::RunReport rep = runner::run_scenario(scn, opt);
  emit(rep.report.dump(2) + "\n", path, scn.outputs.report);
  for (const auto& w : rep.report["warnings"]) std::cerr << "warning: " << w.get<std::string>() << "\n";
  if (!rep.within_tolerance) {
    std::cerr << "error: grid and closed-form paths disagree beyond the tolerance\n";
    return kExitGuard;
  }
  return 0;
}

int sweep_command(const std::string& path, const runner::RunOptions& opt) {
  const scenario::Scenario scn = scenario::load(path);
  const runner::SweepResult sw = runner::sweep_coupling(scn, opt);
  emit(sw.csv, path, scn.outputs.csv);
  if (!sw.within_tolerance) {
    std::cerr << "error: some sweep rows exceed the path-agreement tolerance\n";
    return kExitGuard;
  }
  return 0;
}

int figure_command(const std::string& which, const std::string& out, const runner::RunOptions& opt) {
  const runner::FigureFiles files = runner::emit_figure_data(which, out, opt);
  for (const auto& f : files.written) std::cerr << "wrote " << f << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditioned von Neumann measurement engine"};
  app.require_subcommand(1);

  runner::RunOptions opt;
  int workers = 1;
  std::optional<int> grid_points;
  std::optional<std::string> paths;
  std::optional<double> tolerance;
  app.add_option("--workers", workers, "worker threads for sweeps")->check(CLI::Range(1, 256));
  app.add_option("--grid-points", grid_points, "detector grid size (power of two, >= 256)");
  app.add_option("--paths", paths, "computation paths")->check(CLI::IsMember({"grid", "closed", "both"}));
  app.add_option("--tolerance", tolerance, "relative path-agreement tolerance")->check(CLI::PositiveNumber);

  std::string scenario_path;
  auto* run = app.add_subcommand("run", "evaluate a scenario at a single coupling value");
  run->add_option("scenario", scenario_path, "scenario file")->required();
  run->fallthrough();

  auto* sweep = app.add_subcommand("sweep", "evaluate a scenario over its coupling sweep");
  sweep->add_option("scenario", scenario_path, "scenario file")->required();
  sweep->fallthrough();

  std::string figure_name;
  std::string out_dir;
  auto* figure = app.add_subcommand("figure", "write the data behind a figure preset");
  figure->add_option("which", figure_name, "fig1, fig2 or fig3")->required()->check(CLI::IsMember({"fig1", "fig2", "fig3"}));
  figure->add_option("--out", out_dir, "output directory")->required();
  figure->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  opt.workers = workers;
  opt.grid_points = grid_points;
  opt.paths = paths;
  opt.tolerance = tolerance;

  try {
    if (run->parsed()) return run_command(scenario_path, opt);
    if (sweep->parsed()) return sweep_command(scenario_path, opt);
    return figure_command(figure_name, out_dir, opt);
  } catch (const scenario::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const condmeas::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const condmeas::NumericalGuardError& e) {
    std::cerr << "numerical guard: " << e.what() << "\n";
    return kExitGuard;
  } catch (const condmeas::DomainError& e) {
    std::cerr << "numerical guard: " << e.what() << "\n";
    return kExitGuard;
  }
}
