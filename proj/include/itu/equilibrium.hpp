#pragma once

// Equilibrium assignment between individual agents. At temperature T the
// unit-mass system with M_ij = exp(-Psi_ij / T) is solved by ipfp; cooling
// T towards zero drives the solution to an equilibrium outcome
// (mu, u, v): mu >= 0, u >= 0, v >= 0, capacities respected,
// Psi_ij(u_i, v_j) >= 0 for every pair and Psi_ij = 0 on matched pairs.

#include <string>
#include <vector>

#include "itu/errors.hpp"
#include "itu/ipfp.hpp"
#include "itu/system.hpp"
#include "itu/transfer.hpp"
#include "itu/types.hpp"

namespace itu {

class IndividualMarket {
 public:
  /// `transfers` holds one global spec or a row-major |men| x |women| table.
  IndividualMarket(std::vector<std::string> men, std::vector<std::string> women,
                   std::vector<TransferSpec<double>> transfers);

  Index num_men() const { return static_cast<Index>(men_.size()); }
  Index num_women() const { return static_cast<Index>(women_.size()); }
  const std::vector<std::string>& men() const { return men_; }
  const std::vector<std::string>& women() const { return women_; }
  const std::vector<TransferSpec<double>>& transfers() const { return transfers_; }
  const TransferSpec<double>& spec(Index i, Index j) const {
    return transfers_.size() == 1 ? transfers_.front()
                                  : transfers_[static_cast<std::size_t>(i * num_women() + j)];
  }

  /// Psi_ij(u_i, v_j) for all pairs.
  MatrixXd psi_matrix(const VectorXd& u, const VectorXd& v) const;

  /// Unit-mass aggregate market with the exp(-Psi/T) kernel.
  Market<double> at_temperature(double T) const;

 private:
  std::vector<std::string> men_;
  std::vector<std::string> women_;
  std::vector<TransferSpec<double>> transfers_;
};

/// Geometric cooling T_k = t_initial * ratio^k, k = 0..steps.
struct CoolingSchedule {
  double t_initial = 1.0;
  double ratio = 0.5;
  int steps = 30;
  bool warm_start = true;

  void validate() const;
  double temperature(int k) const;
  double final_temperature() const { return temperature(steps); }
};

struct TemperatureSolve {
  Potentials<double> potentials;
  MatrixXd mu;
  SolveReport<double> report;  // iterations counts ipfp sweeps
  int newton_steps = 0;
};

/// Relaxed problem at one temperature without throwing on
/// non-convergence; report.converged tells whether the scaled residual
/// reached config.tol.
TemperatureSolve run_at_temperature(const IndividualMarket& market, double T,
                                    const SolverConfig<double>& config,
                                    const VectorXd* warm_v = nullptr);

/// Solves the relaxed problem at one temperature: ipfp sweeps followed by
/// Newton refinement. Throws NonConvergenceError when the scaled residual
/// stays above config.tol.
TemperatureSolve solve_at_temperature(const IndividualMarket& market, double T,
                                      const SolverConfig<double>& config,
                                      const VectorXd* warm_v = nullptr);

struct AnnealStep {
  double temperature = 0;
  long iterations = 0;
  int newton_steps = 0;
  bool converged = false;
  double residual = 0;
  double max_blocking = 0;  // max over pairs of max(0, -Psi_ij(u_i, v_j))
};

struct EquilibriumOutcome {
  MatrixXd mu;
  VectorXd u;
  VectorXd v;
  bool integral = false;
  double temperature = 0;  // last temperature solved; 0 when not annealed
  double slack = 0;        // slack used for the last verification
  std::vector<AnnealStep> trace;
};

struct ConditionCheck {
  bool passed = true;
  double worst = 0;  // largest violation magnitude, 0 when passed
  Index i = -1;      // worst pair (or agent); -1 when not applicable
  Index j = -1;
};

struct VerificationRecord {
  ConditionCheck nonnegativity;            // mu, u, v >= 0
  ConditionCheck capacity;                 // row and column sums <= 1
  ConditionCheck no_blocking;              // Psi_ij >= 0 for every pair
  ConditionCheck complementary_slackness;  // mu_ij > threshold => Psi_ij = 0
  bool passed() const {
    return nonnegativity.passed && capacity.passed && no_blocking.passed &&
           complementary_slackness.passed;
  }
  std::string summary() const;
};

struct AnnealOptions {
  double threshold = 1e-3;  // mu_ij above this counts as matched
  bool newton_refinement = true;
};

class AnnealingFailedError : public Error {
 public:
  AnnealingFailedError(const std::string& what, VerificationRecord record,
                       EquilibriumOutcome outcome)
      : Error(what), record_(std::move(record)), outcome_(std::move(outcome)) {}
  const VerificationRecord& record() const noexcept { return record_; }
  const EquilibriumOutcome& outcome() const noexcept { return outcome_; }

 private:
  VerificationRecord record_;
  EquilibriumOutcome outcome_;
};

class RoundingFailedError : public Error {
 public:
  RoundingFailedError(const std::string& what, VerificationRecord record,
                      EquilibriumOutcome fractional)
      : Error(what), record_(std::move(record)), fractional_(std::move(fractional)) {}
  const VerificationRecord& record() const noexcept { return record_; }
  const EquilibriumOutcome& fractional() const noexcept { return fractional_; }

 private:
  VerificationRecord record_;
  EquilibriumOutcome fractional_;
};

/// Checks the four equilibrium conditions with the given slack. Never
/// throws on a failed condition; the record says which one failed.
VerificationRecord verify_outcome(const IndividualMarket& market,
                                  const EquilibriumOutcome& outcome, double slack,
                                  double threshold = AnnealOptions{}.threshold);

/// Stability slack for an outcome annealed down to `final_temperature`:
/// max(10 tol, log(1/threshold) T, 8 eps S / T). A pair with
/// mu_ij > threshold has Psi_ij < T log(1/threshold) under the exp(-Psi/T)
/// kernel; the last term is the rounding floor of exp(-Psi/T) when the
/// potentials have magnitude up to S.
double annealing_slack(double final_temperature, double tol, double threshold,
                       double potential_scale = 1.0);

/// Solves along the cooling schedule and verifies the final outcome.
/// Throws AnnealingFailedError when verification fails.
EquilibriumOutcome anneal(const IndividualMarket& market, const CoolingSchedule& schedule,
                          const SolverConfig<double>& config, const AnnealOptions& options = {});

/// Rounds a near-integral outcome to a 0/1 matching by maximum-weight
/// matching on log(mu_ij / threshold) over pairs with mu_ij > threshold,
/// keeping u and v. Throws RoundingFailedError if the result fails
/// verification with `slack`.
EquilibriumOutcome extract_integral(const IndividualMarket& market,
                                    const EquilibriumOutcome& outcome, double slack,
                                    double threshold = AnnealOptions{}.threshold);

}  // namespace itu
