#include "itu/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "itu/assignment.hpp"

namespace itu {

IndividualMarket::IndividualMarket(std::vector<std::string> men, std::vector<std::string> women,
                                   std::vector<TransferSpec<double>> transfers)
    : men_(std::move(men)), women_(std::move(women)), transfers_(std::move(transfers)) {
  if (men_.empty() || women_.empty())
    throw DomainError("individual market needs at least one agent on each side");
  if (transfers_.size() != 1 &&
      transfers_.size() != static_cast<std::size_t>(num_men() * num_women()))
    throw DomainError("transfer table must hold one spec or |I|*|J| specs");
  for (const auto& s : transfers_) validate(s);
}

MatrixXd IndividualMarket::psi_matrix(const VectorXd& u, const VectorXd& v) const {
  MatrixXd out(num_men(), num_women());
  for (Index j = 0; j < num_women(); ++j)
    for (Index i = 0; i < num_men(); ++i) out(i, j) = psi_eval(spec(i, j), u[i], v[j]);
  return out;
}

Market<double> IndividualMarket::at_temperature(double T) const {
  return Market<double>(men_, women_, VectorXd::Ones(num_men()), VectorXd::Ones(num_women()),
                        transfers_, T, false, Kernel::ExpPsi);
}

void CoolingSchedule::validate() const {
  if (!(t_initial > 0) || !std::isfinite(t_initial))
    throw DomainError("cooling schedule t_initial must be positive");
  if (!(ratio > 0 && ratio < 1)) throw DomainError("cooling ratio must lie in (0, 1)");
  if (steps < 1) throw DomainError("cooling schedule needs at least one step");
  if (!(final_temperature() > 0))
    throw DomainError("final temperature underflows to zero");
}

double CoolingSchedule::temperature(int k) const { return t_initial * std::pow(ratio, k); }

namespace {

// Sweeps of ipfp before handing over to Newton refinement.
constexpr long kWarmupSweeps = 200;

// ipfp brings the potentials near the solution and Newton finishes; if
// Newton cannot reach the tolerance, ipfp gets its full sweep budget.
TemperatureSolve relaxed_solve(const Market<double>& mk, const SolverConfig<double>& config,
                               const VectorXd* warm_v, bool newton) {
  SolverConfig<double> warmup = config;
  warmup.max_iter = newton ? std::min(config.max_iter, kWarmupSweeps) : config.max_iter;
  auto r = ipfp_run(mk, warmup, warm_v);
  long sweeps = r.report.iterations;
  int newton_steps = 0;
  auto refine = [&] {
    if (!newton || !r.potentials.u.allFinite() || !r.potentials.v.allFinite()) return;
    newton_steps += newton_refine(mk, r.potentials, 1e-3 * config.tol);
    r.report.final_residual = scaled_residual(mk, r.potentials);
    r.report.converged = r.report.final_residual <= config.tol;
  };
  refine();
  if (!r.report.converged && config.max_iter > warmup.max_iter) {
    const VectorXd v = r.potentials.v;
    r = ipfp_run(mk, config, v.allFinite() ? &v : warm_v);
    sweeps += r.report.iterations;
    refine();
  }
  r.report.iterations = sweeps;
  TemperatureSolve out;
  out.potentials = r.potentials;
  out.report = std::move(r.report);
  out.newton_steps = newton_steps;
  if (out.potentials.u.allFinite() && out.potentials.v.allFinite())
    out.mu = pair_masses(mk, out.potentials.u, out.potentials.v);
  return out;
}

}  // namespace

TemperatureSolve run_at_temperature(const IndividualMarket& market, double T,
                                    const SolverConfig<double>& config, const VectorXd* warm_v) {
  config.validate();
  return relaxed_solve(market.at_temperature(T), config, warm_v, true);
}

TemperatureSolve solve_at_temperature(const IndividualMarket& market, double T,
                                      const SolverConfig<double>& config,
                                      const VectorXd* warm_v) {
  auto r = run_at_temperature(market, T, config, warm_v);
  if (!r.report.converged) {
    std::ostringstream os;
    os << "relaxed problem at T = " << T << " did not converge in " << r.report.iterations
       << " sweeps (scaled residual " << r.report.final_residual << ")";
    std::vector<double> history(r.report.sup_change_history.begin(),
                                r.report.sup_change_history.end());
    throw NonConvergenceError(os.str(), r.report.iterations, r.report.final_residual,
                              std::move(history));
  }
  return r;
}

double annealing_slack(double final_temperature, double tol, double threshold,
                       double potential_scale) {
  const double scale = std::max(1.0, std::log(1.0 / threshold));
  const double rounding = 8 * std::numeric_limits<double>::epsilon() *
                          std::max(1.0, potential_scale) / final_temperature;
  return std::max({10 * tol, scale * final_temperature, rounding});
}

namespace {

void record(ConditionCheck& c, double violation, Index i, Index j) {
  if (violation > 0 && violation > c.worst) {
    c.passed = false;
    c.worst = violation;
    c.i = i;
    c.j = j;
  }
}

std::string describe(const char* name, const ConditionCheck& c) {
  std::ostringstream os;
  os << name << ": ";
  if (c.passed) {
    os << "pass";
  } else {
    os << "FAIL (violation " << c.worst << " at " << c.i;
    if (c.j >= 0) os << "," << c.j;
    os << ")";
  }
  return os.str();
}

}  // namespace

std::string VerificationRecord::summary() const {
  return describe("(i) nonnegativity", nonnegativity) + "; " +
         describe("(ii) capacity", capacity) + "; " + describe("(iii) no blocking", no_blocking) +
         "; " + describe("(iv) complementary slackness", complementary_slackness);
}

VerificationRecord verify_outcome(const IndividualMarket& market,
                                  const EquilibriumOutcome& outcome, double slack,
                                  double threshold) {
  VerificationRecord rec;
  const Index ni = market.num_men(), nj = market.num_women();
  if (outcome.mu.rows() != ni || outcome.mu.cols() != nj || outcome.u.size() != ni ||
      outcome.v.size() != nj) {
    rec.nonnegativity.passed = false;
    rec.nonnegativity.worst = std::numeric_limits<double>::infinity();
    return rec;
  }
  auto bad = [](double x) { return std::isnan(x) ? std::numeric_limits<double>::infinity() : x; };

  for (Index i = 0; i < ni; ++i) record(rec.nonnegativity, bad(-outcome.u[i] - slack), i, -1);
  for (Index j = 0; j < nj; ++j) record(rec.nonnegativity, bad(-outcome.v[j] - slack), -1, j);
  for (Index i = 0; i < ni; ++i)
    for (Index j = 0; j < nj; ++j)
      record(rec.nonnegativity, bad(-outcome.mu(i, j) - slack), i, j);

  for (Index i = 0; i < ni; ++i)
    record(rec.capacity, bad(outcome.mu.row(i).sum() - 1 - slack), i, -1);
  for (Index j = 0; j < nj; ++j)
    record(rec.capacity, bad(outcome.mu.col(j).sum() - 1 - slack), -1, j);

  if (!outcome.u.allFinite() || !outcome.v.allFinite()) {
    rec.no_blocking.passed = rec.complementary_slackness.passed = false;
    rec.no_blocking.worst = rec.complementary_slackness.worst =
        std::numeric_limits<double>::infinity();
    return rec;
  }
  const MatrixXd psi = market.psi_matrix(outcome.u, outcome.v);
  for (Index i = 0; i < ni; ++i)
    for (Index j = 0; j < nj; ++j) {
      record(rec.no_blocking, bad(-psi(i, j) - slack), i, j);
      if (outcome.mu(i, j) > threshold)
        record(rec.complementary_slackness, bad(std::abs(psi(i, j)) - slack), i, j);
    }
  return rec;
}

EquilibriumOutcome anneal(const IndividualMarket& market, const CoolingSchedule& schedule,
                          const SolverConfig<double>& config, const AnnealOptions& options) {
  schedule.validate();
  config.validate();
  EquilibriumOutcome out;
  VectorXd v;
  bool have_v = false;
  for (int k = 0; k <= schedule.steps; ++k) {
    const double T = schedule.temperature(k);
    const bool warm = schedule.warm_start && have_v;
    auto r = relaxed_solve(market.at_temperature(T), config, warm ? &v : nullptr,
                           options.newton_refinement);
    if (!r.potentials.u.allFinite() || !r.potentials.v.allFinite()) {
      std::ostringstream os;
      os << "annealing produced non-finite potentials at T = " << T;
      throw AnnealingFailedError(os.str(), {}, out);
    }
    AnnealStep step;
    step.temperature = T;
    step.iterations = r.report.iterations;
    step.converged = r.report.converged;
    step.residual = r.report.final_residual;
    step.newton_steps = r.newton_steps;
    const MatrixXd psi = market.psi_matrix(r.potentials.u, r.potentials.v);
    step.max_blocking = std::max(0.0, -psi.minCoeff());
    out.trace.push_back(step);

    v = r.potentials.v;
    have_v = true;
    out.u = r.potentials.u;
    out.v = r.potentials.v;
    out.mu = r.mu;
    out.temperature = T;
  }

  const double potential_scale =
      std::max(out.u.lpNorm<Eigen::Infinity>(), out.v.lpNorm<Eigen::Infinity>());
  out.slack = annealing_slack(out.temperature, config.tol, options.threshold, potential_scale);
  const auto rec = verify_outcome(market, out, out.slack, options.threshold);
  if (!rec.passed()) {
    throw AnnealingFailedError(
        "annealed outcome fails equilibrium verification: " + rec.summary(), rec, out);
  }
  return out;
}

EquilibriumOutcome extract_integral(const IndividualMarket& market,
                                    const EquilibriumOutcome& outcome, double slack,
                                    double threshold) {
  const Index ni = market.num_men(), nj = market.num_women();
  if (outcome.mu.rows() != ni || outcome.mu.cols() != nj)
    throw PreconditionError("outcome does not match the market dimensions");
  MatrixXd weight(ni, nj);
  for (Index i = 0; i < ni; ++i)
    for (Index j = 0; j < nj; ++j)
      weight(i, j) = outcome.mu(i, j) > threshold ? std::log(outcome.mu(i, j) / threshold)
                                                  : -std::numeric_limits<double>::infinity();
  const auto match = max_weight_assignment(weight, true);

  EquilibriumOutcome out = outcome;
  out.mu = MatrixXd::Zero(ni, nj);
  for (Index i = 0; i < ni; ++i) {
    const int j = match.partner[static_cast<std::size_t>(i)];
    if (j >= 0) out.mu(i, j) = 1.0;
  }
  out.integral = true;
  out.slack = slack;
  const auto rec = verify_outcome(market, out, slack, threshold);
  if (!rec.passed())
    throw RoundingFailedError("integral rounding fails verification: " + rec.summary(), rec,
                              outcome);
  return out;
}

}  // namespace itu
