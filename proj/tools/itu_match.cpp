// itu-match: command-line front end for the solver library.

#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "itu/cli.hpp"

namespace {

struct Flags {
  double tol = 0, temperature = 0, t_initial = 0, ratio = 0;
  long max_iter = 0;
  int steps = 0;
};

int threads_from_env(std::ostream& err) {
  const char* raw = std::getenv("ITU_MATCH_THREADS");
  if (!raw || !*raw) return 1;
  try {
    std::size_t used = 0;
    const int n = std::stoi(raw, &used);
    if (used == std::string(raw).size() && n >= 1) return n;
  } catch (const std::exception&) {
  }
  err << "warning: ignoring ITU_MATCH_THREADS=" << raw << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equilibrium solver for matching markets with imperfectly transferable utility"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "itu-match 1.0");

  itu::RunConfig rc;
  Flags f;
  std::string format = "text";
  long gauge_anchor = 0;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("market", rc.input_path, "market file")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--output", rc.output_path, "write results here instead of stdout");
    cmd->add_option("--format", format, "output format")
        ->check(CLI::IsMember({"text", "csv"}));
    cmd->add_option("--tol", f.tol, "scaled-residual tolerance");
    cmd->add_option("--max-iter", f.max_iter, "maximum sweeps per solve");
    cmd->add_option("--gauge-anchor", gauge_anchor, "x type pinned at u = 0 (balanced markets)");
  };
  auto schedule = [&](CLI::App* cmd) {
    cmd->add_option("--t-initial", f.t_initial, "first annealing temperature");
    cmd->add_option("--ratio", f.ratio, "geometric cooling ratio in (0, 1)");
    cmd->add_option("--steps", f.steps, "number of cooling steps");
  };

  auto* solve = app.add_subcommand("solve", "solve the system at one temperature");
  common(solve);
  solve->add_option("--temperature", f.temperature, "override the market temperature");

  auto* anneal = app.add_subcommand("anneal", "anneal an individual market to zero temperature");
  common(anneal);
  schedule(anneal);

  auto* compare = app.add_subcommand("oracle-compare", "compare solver output with oracles");
  common(compare);
  schedule(compare);
  compare->add_option("--temperature", f.temperature, "override the market temperature");
  compare->add_option("--seed", rc.seed, "Monte Carlo seed");
  compare->add_option("--agents", rc.agents_per_type, "Monte Carlo agents per type");

  auto* validate = app.add_subcommand("validate", "check a solution file against a market");
  common(validate);
  validate->add_option("solution", rc.solution_path, "solution file")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : itu::exit_code::input_error;
  }

  if (*solve) rc.command = itu::Command::Solve;
  if (*anneal) rc.command = itu::Command::Anneal;
  if (*compare) rc.command = itu::Command::OracleCompare;
  if (*validate) rc.command = itu::Command::Validate;

  auto given = [&](const char* name) {
    for (auto* sub : app.get_subcommands())
      if (auto* opt = sub->get_option_no_throw(name); opt && opt->count() > 0) return true;
    return false;
  };
  if (given("--tol")) rc.tol = f.tol;
  if (given("--max-iter")) rc.max_iter = f.max_iter;
  if (given("--temperature")) rc.temperature = f.temperature;
  if (given("--t-initial")) rc.t_initial = f.t_initial;
  if (given("--ratio")) rc.ratio = f.ratio;
  if (given("--steps")) rc.steps = f.steps;
  rc.format = format == "csv" ? itu::OutputFormat::Csv : itu::OutputFormat::StructuredText;
  rc.gauge_anchor = static_cast<itu::Index>(gauge_anchor);
  rc.threads = threads_from_env(std::cerr);

  return itu::run(rc, std::cout, std::cerr);
}
