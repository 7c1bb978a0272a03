#include "itu/cli.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "itu/equilibrium.hpp"
#include "itu/ipfp.hpp"
#include "itu/market_io.hpp"
#include "itu/oracle.hpp"

namespace itu {

void RunConfig::validate() const {
  if (input_path.empty()) throw DomainError("an input market file is required");
  if (command == Command::Validate && solution_path.empty())
    throw DomainError("validate needs a solution file");
  if (tol && !(*tol > 0)) throw DomainError("--tol must be positive");
  if (max_iter && *max_iter < 1) throw DomainError("--max-iter must be at least 1");
  if (temperature && (!(*temperature > 0) || !std::isfinite(*temperature)))
    throw DomainError("--temperature must be positive");
  if (t_initial && (!(*t_initial > 0) || !std::isfinite(*t_initial)))
    throw DomainError("--t-initial must be positive");
  if (ratio && !(*ratio > 0 && *ratio < 1)) throw DomainError("--ratio must lie in (0, 1)");
  if (steps && *steps < 1) throw DomainError("--steps must be at least 1");
  if (gauge_anchor < 0) throw DomainError("--gauge-anchor must be nonnegative");
  if (agents_per_type < 0) throw DomainError("--agents must be nonnegative");
  if (threads < 1) throw DomainError("thread count must be at least 1");
}

namespace {

SolverConfig<double> solver_config(const RunConfig& rc) {
  SolverConfig<double> cfg;
  if (rc.tol) {
    cfg.tol = *rc.tol;
    cfg.scalar_tol = std::min(cfg.scalar_tol, cfg.tol);
  }
  if (rc.max_iter) cfg.max_iter = *rc.max_iter;
  cfg.gauge_anchor = rc.gauge_anchor;
  cfg.threads = rc.threads;
  cfg.validate();
  return cfg;
}

CoolingSchedule schedule(const RunConfig& rc) {
  CoolingSchedule s;
  if (rc.t_initial) s.t_initial = *rc.t_initial;
  if (rc.ratio) s.ratio = *rc.ratio;
  if (rc.steps) s.steps = *rc.steps;
  s.validate();
  return s;
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::string label_list(const std::vector<std::string>& labels) {
  std::string out = "[";
  for (std::size_t k = 0; k < labels.size(); ++k) out += (k ? ", " : "") + quoted(labels[k]);
  return out + "]";
}

std::string number_list(const VectorXd& v) {
  std::string out = "[";
  for (Index k = 0; k < v.size(); ++k) out += (k ? ", " : "") + format_number(v[k]);
  return out + "]";
}

void matrix_rows(std::ostream& os, const char* key, const MatrixXd& mu) {
  os << key << ":\n";
  for (Index x = 0; x < mu.rows(); ++x) os << "  - " << number_list(mu.row(x).transpose()) << "\n";
}

// CSV rows (x, y, mass); an empty y (or x) cell is the single option.
std::string matching_csv(const std::vector<std::string>& xs, const std::vector<std::string>& ys,
                         const MatrixXd& mu, const VectorXd* mu_x0, const VectorXd* mu_0y) {
  std::ostringstream os;
  os << "x,y,mass\n";
  for (Index x = 0; x < mu.rows(); ++x)
    for (Index y = 0; y < mu.cols(); ++y)
      os << csv_field(xs[static_cast<std::size_t>(x)]) << ","
         << csv_field(ys[static_cast<std::size_t>(y)]) << "," << format_number(mu(x, y)) << "\n";
  if (mu_x0)
    for (Index x = 0; x < mu_x0->size(); ++x)
      os << csv_field(xs[static_cast<std::size_t>(x)]) << ",," << format_number((*mu_x0)[x])
         << "\n";
  if (mu_0y)
    for (Index y = 0; y < mu_0y->size(); ++y)
      os << "," << csv_field(ys[static_cast<std::size_t>(y)]) << "," << format_number((*mu_0y)[y])
         << "\n";
  return os.str();
}

void emit(const RunConfig& rc, std::ostream& out, const std::string& text) {
  if (rc.output_path.empty()) {
    out << text;
    out.flush();
  } else {
    write_file_atomic(rc.output_path, text);
  }
}

int cmd_solve(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto cfg = solver_config(rc);
  const AnyMarket any = load_market(rc.input_path);
  std::optional<Market<double>> mk;
  SolveResult<double> result;
  if (const auto* agg = std::get_if<Market<double>>(&any)) {
    mk = rc.temperature ? agg->with_temperature(*rc.temperature) : *agg;
    result = ipfp_run(*mk, cfg);
  } else {
    const auto& im = std::get<IndividualMarket>(any);
    const double T = rc.temperature.value_or(1.0);
    mk = im.at_temperature(T);
    auto r = run_at_temperature(im, T, cfg);
    result.potentials = r.potentials;
    result.report = r.report;
    if (r.potentials.u.allFinite() && r.potentials.v.allFinite())
      result.matching = matching_from_potentials(*mk, r.potentials);
  }
  if (!result.potentials.u.allFinite() || !result.potentials.v.allFinite()) {
    err << "error: solver produced non-finite potentials after " << result.report.iterations
        << " sweeps\n";
    return exit_code::not_converged;
  }
  if (rc.format == OutputFormat::Csv)
    emit(rc, out,
         matching_csv(mk->x_types(), mk->y_types(), result.matching.mu, &result.matching.mu_x0,
                      mk->balanced() ? nullptr : &result.matching.mu_0y));
  else
    emit(rc, out, format_solution(*mk, result));
  err << "solve: " << result.report.iterations << " sweeps, scaled residual "
      << result.report.final_residual << ", " << result.report.seconds << " s\n";
  if (!result.report.converged) {
    err << "error: not converged (tol " << cfg.tol << ")\n";
    return exit_code::not_converged;
  }
  return exit_code::ok;
}

void write_check(std::ostream& os, const char* name, const ConditionCheck& c) {
  os << "  " << name << ": {passed: " << (c.passed ? "true" : "false")
     << ", worst: " << format_number(c.worst) << ", i: " << c.i << ", j: " << c.j << "}\n";
}

std::string format_outcome(const IndividualMarket& im, const EquilibriumOutcome& o,
                           const MatrixXd& fractional, const VerificationRecord& rec,
                           const std::string& status) {
  std::ostringstream os;
  os << "schema_version: 1\n"
     << "kind: equilibrium\n"
     << "status: " << status << "\n"
     << "men: " << label_list(im.men()) << "\n"
     << "women: " << label_list(im.women()) << "\n"
     << "final_temperature: " << format_number(o.temperature) << "\n"
     << "slack: " << format_number(o.slack) << "\n"
     << "u: " << number_list(o.u) << "\n"
     << "v: " << number_list(o.v) << "\n";
  matrix_rows(os, "mu", o.mu);
  matrix_rows(os, "mu_fractional", fractional);
  os << "verification:\n"
     << "  passed: " << (rec.passed() ? "true" : "false") << "\n";
  write_check(os, "nonnegativity", rec.nonnegativity);
  write_check(os, "capacity", rec.capacity);
  write_check(os, "no_blocking", rec.no_blocking);
  write_check(os, "complementary_slackness", rec.complementary_slackness);
  os << "trace:\n";
  for (const auto& s : o.trace)
    os << "  - {temperature: " << format_number(s.temperature) << ", sweeps: " << s.iterations
       << ", newton_steps: " << s.newton_steps
       << ", converged: " << (s.converged ? "true" : "false")
       << ", residual: " << format_number(s.residual)
       << ", max_blocking: " << format_number(s.max_blocking) << "}\n";
  return os.str();
}

const IndividualMarket& individual(const AnyMarket& any, const char* command) {
  if (const auto* im = std::get_if<IndividualMarket>(&any)) return *im;
  throw PreconditionError(std::string(command) + " needs an individual market (kind: individual)");
}

int cmd_anneal(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto cfg = solver_config(rc);
  const auto sched = schedule(rc);
  const AnyMarket any = load_market(rc.input_path);
  const auto& im = individual(any, "anneal");
  const AnnealOptions options;

  auto write = [&](const EquilibriumOutcome& o, const MatrixXd& fractional,
                   const VerificationRecord& rec, const std::string& status) {
    if (rc.format == OutputFormat::Csv)
      emit(rc, out, matching_csv(im.men(), im.women(), o.mu, nullptr, nullptr));
    else
      emit(rc, out, format_outcome(im, o, fractional, rec, status));
  };

  EquilibriumOutcome fractional;
  try {
    fractional = anneal(im, sched, cfg, options);
  } catch (const AnnealingFailedError& e) {
    write(e.outcome(), e.outcome().mu, e.record(), "annealing-failed");
    err << "error: " << e.what() << "\n";
    return exit_code::not_converged;
  }
  try {
    const auto integral = extract_integral(im, fractional, fractional.slack, options.threshold);
    write(integral, fractional.mu,
          verify_outcome(im, integral, integral.slack, options.threshold), "verified");
  } catch (const RoundingFailedError& e) {
    write(e.fractional(), e.fractional().mu, e.record(), "rounding-failed");
    err << "error: " << e.what() << "\n";
    return exit_code::not_converged;
  }
  err << "anneal: final temperature " << fractional.temperature << ", slack " << fractional.slack
      << "\n";
  return exit_code::ok;
}

int compare_aggregate(const RunConfig& rc, const Market<double>& mk0, std::ostream& out,
                      std::ostream& err) {
  const auto mk = rc.temperature ? mk0.with_temperature(*rc.temperature) : mk0;
  if (!mk.all_of_family(Family::TU) || mk.balanced())
    throw UnsupportedFamilyError(
        "oracle-compare on aggregate markets needs an unbalanced TU market");
  auto cfg = solver_config(rc);
  const auto sol = ipfp_solve(mk, cfg).matching;
  MatrixXd phi(mk.num_x(), mk.num_y());
  for (Index x = 0; x < mk.num_x(); ++x)
    for (Index y = 0; y < mk.num_y(); ++y) phi(x, y) = mk.spec(x, y).phi;
  const auto ref = sinkhorn_reference(phi, mk.n(), mk.m(), mk.temperature(), 1e-3 * cfg.tol);
  const auto sim = simulate_heterogeneous_market(mk, rc.agents_per_type, SimulationDraw(rc.seed), cfg);

  const double gap = (sol.mu - ref.mu).cwiseAbs().maxCoeff();
  std::ostringstream os;
  if (rc.format == OutputFormat::Csv) {
    os << "x,y,ipfp,sinkhorn,monte_carlo\n";
    for (Index x = 0; x < mk.num_x(); ++x)
      for (Index y = 0; y < mk.num_y(); ++y)
        os << csv_field(mk.x_types()[static_cast<std::size_t>(x)]) << ","
           << csv_field(mk.y_types()[static_cast<std::size_t>(y)]) << ","
           << format_number(sol.mu(x, y)) << "," << format_number(ref.mu(x, y)) << ","
           << format_number(sim.mu_men(x, y)) << "\n";
  } else {
    os << "schema_version: 1\n"
       << "kind: oracle-comparison\n"
       << "seed: " << rc.seed << "\n"
       << "agents_per_type: " << rc.agents_per_type << "\n"
       << "max_abs_difference_sinkhorn: " << format_number(gap) << "\n"
       << "pairs:\n";
    for (Index x = 0; x < mk.num_x(); ++x)
      for (Index y = 0; y < mk.num_y(); ++y)
        os << "  - {x: " << quoted(mk.x_types()[static_cast<std::size_t>(x)])
           << ", y: " << quoted(mk.y_types()[static_cast<std::size_t>(y)])
           << ", ipfp: " << format_number(sol.mu(x, y))
           << ", sinkhorn: " << format_number(ref.mu(x, y))
           << ", monte_carlo: " << format_number(sim.mu_men(x, y)) << "}\n";
  }
  emit(rc, out, os.str());
  const double bound = std::max(1e-8, 10 * cfg.tol);
  if (gap > bound) {
    err << "error: ipfp and matrix scaling differ by " << gap << "\n";
    return exit_code::not_converged;
  }
  return exit_code::ok;
}

std::string partner_list(const std::vector<int>& p) {
  std::string out = "[";
  for (std::size_t k = 0; k < p.size(); ++k) out += (k ? ", " : "") + std::to_string(p[k]);
  return out + "]";
}

int compare_individual(const RunConfig& rc, const IndividualMarket& im, std::ostream& out,
                       std::ostream& err) {
  const auto cfg = solver_config(rc);
  const auto o = anneal(im, schedule(rc), cfg);
  const auto integral = extract_integral(im, o, o.slack);
  std::vector<int> partner(static_cast<std::size_t>(im.num_men()), -1);
  for (Index i = 0; i < im.num_men(); ++i)
    for (Index j = 0; j < im.num_women(); ++j)
      if (integral.mu(i, j) > 0.5) partner[static_cast<std::size_t>(i)] = static_cast<int>(j);

  bool all_tu = true;
  for (const auto& s : im.transfers()) all_tu = all_tu && s.family == Family::TU;
  const bool small = im.num_men() <= 4 && im.num_women() <= 4;

  bool ok = true;
  std::ostringstream os;
  os << "schema_version: 1\n"
     << "kind: oracle-comparison\n"
     << "annealed_partner: " << partner_list(partner) << "\n";
  if (all_tu) {
    MatrixXd phi(im.num_men(), im.num_women());
    for (Index i = 0; i < im.num_men(); ++i)
      for (Index j = 0; j < im.num_women(); ++j) phi(i, j) = im.spec(i, j).phi;
    const auto opt = hungarian_optimal(phi, true);
    const double surplus = (integral.mu.array() * phi.array()).sum();
    os << "annealed_surplus: " << format_number(surplus) << "\n"
       << "hungarian_partner: " << partner_list(opt.partner) << "\n"
       << "hungarian_value: " << format_number(opt.value) << "\n";
    ok = ok && std::abs(surplus - opt.value) <= 1e-3 * (1 + std::abs(opt.value));
  }
  if (small) {
    const auto stable = enumerate_stable_outcomes(im);
    const bool member = contains_matching(stable, integral.mu);
    os << "stable_matchings:\n";
    for (const auto& s : stable) os << "  - " << partner_list(s.partner) << "\n";
    os << "annealed_is_stable: " << (member ? "true" : "false") << "\n";
    ok = ok && member;
  } else {
    os << "stable_matchings: null  # enumeration limited to 4 x 4\n";
  }
  emit(rc, out, os.str());
  if (!ok) {
    err << "error: annealed matching disagrees with the oracles\n";
    return exit_code::not_converged;
  }
  return exit_code::ok;
}

int cmd_oracle_compare(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const AnyMarket any = load_market(rc.input_path);
  if (const auto* agg = std::get_if<Market<double>>(&any)) return compare_aggregate(rc, *agg, out, err);
  return compare_individual(rc, std::get<IndividualMarket>(any), out, err);
}

int cmd_validate(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto cfg = solver_config(rc);
  const AnyMarket any = load_market(rc.input_path);
  const SolutionFile sol = parse_solution(read_file(rc.solution_path));
  if (!(sol.temperature > 0)) throw DomainError("solution temperature must be positive");
  const Market<double> mk =
      std::holds_alternative<Market<double>>(any)
          ? std::get<Market<double>>(any).with_temperature(sol.temperature)
          : std::get<IndividualMarket>(any).at_temperature(sol.temperature);
  if (sol.x_types != mk.x_types() || sol.y_types != mk.y_types())
    throw PreconditionError("solution labels do not match the market");

  const double res = scaled_residual(mk, sol.potentials);
  const auto recomputed = matching_from_potentials(mk, sol.potentials);
  const double mu_gap = (recomputed.mu - sol.matching.mu).cwiseAbs().maxCoeff();
  const bool valid = res <= cfg.tol;

  std::ostringstream os;
  if (rc.format == OutputFormat::Csv) {
    os << "quantity,value\n"
       << "scaled_residual," << format_number(res) << "\n"
       << "max_mu_difference," << format_number(mu_gap) << "\n"
       << "tol," << format_number(cfg.tol) << "\n"
       << "valid," << (valid ? "true" : "false") << "\n";
  } else {
    os << "schema_version: 1\n"
       << "kind: validation\n"
       << "scaled_residual: " << format_number(res) << "\n"
       << "max_mu_difference: " << format_number(mu_gap) << "\n"
       << "tol: " << format_number(cfg.tol) << "\n"
       << "valid: " << (valid ? "true" : "false") << "\n";
  }
  emit(rc, out, os.str());
  if (!valid) {
    err << "error: scaled residual " << res << " exceeds tol " << cfg.tol << "\n";
    return exit_code::not_converged;
  }
  return exit_code::ok;
}

}  // namespace

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    config.validate();
    switch (config.command) {
      case Command::Solve: return cmd_solve(config, out, err);
      case Command::Anneal: return cmd_anneal(config, out, err);
      case Command::OracleCompare: return cmd_oracle_compare(config, out, err);
      case Command::Validate: return cmd_validate(config, out, err);
    }
  } catch (const NonConvergenceError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::not_converged;
  } catch (const AnnealingFailedError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::not_converged;
  } catch (const RoundingFailedError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::not_converged;
  } catch (const DivergedMarketError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::not_converged;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::input_error;
  }
  return exit_code::input_error;
}

}  // namespace itu
