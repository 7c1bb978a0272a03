#pragma once

// Brute-force and reference implementations used to cross-check the
// solvers. None of these share update code with ipfp or equilibrium.

#include <cstdint>
#include <vector>

#include "itu/assignment.hpp"
#include "itu/equilibrium.hpp"
#include "itu/ipfp.hpp"
#include "itu/system.hpp"

namespace itu {

/// Optimal assignment benchmark. With `allow_unmatched`, pairs of
/// non-positive surplus stay single.
Assignment hungarian_optimal(const MatrixXd& surplus, bool allow_unmatched);

struct StableOutcome {
  std::vector<int> partner;  // partner[i] = j, or -1
  MatrixXd mu;               // 0/1 matrix
  VectorXd u;                // lowest supporting payoffs on the grid
  VectorXd v;
};

/// Every integral matching admitting supporting payoffs that satisfy the
/// equilibrium conditions on a payoff grid of step `grid_step`. Single
/// agents receive payoff 0. Refuses markets larger than 4 x 4.
std::vector<StableOutcome> enumerate_stable_outcomes(const IndividualMarket& market,
                                                     double grid_step = 1e-2);

/// True when `mu` (rounded at 1/2) is one of the listed matchings.
bool contains_matching(const std::vector<StableOutcome>& outcomes, const MatrixXd& mu);

/// Classical biproportional scaling for TU with kernel exp(Phi / (2T)) and
/// unmatched masses. Throws NonConvergenceError after 1e5 sweeps.
Matching<double> sinkhorn_reference(const MatrixXd& phi, const VectorXd& n, const VectorXd& m,
                                    double T, double tol);

/// Standard Gumbel draws from a counter-based generator: the draw for
/// (agent, alternative) depends only on the seed and those indices.
/// Alternative 0 is the single option; alternative k > 0 is partner type k - 1.
class SimulationDraw {
 public:
  explicit SimulationDraw(std::uint64_t seed) : seed_(seed) {}
  std::uint64_t seed() const { return seed_; }

  /// epsilon for man `agent` of type x.
  double epsilon(Index x, Index agent, Index alternative) const {
    return gumbel(0, x, agent, alternative);
  }
  /// eta for woman `agent` of type y.
  double eta(Index y, Index agent, Index alternative) const {
    return gumbel(1, y, agent, alternative);
  }

  static double standard_gumbel(std::uint64_t bits);

 private:
  double gumbel(std::uint64_t side, Index type, Index agent, Index alternative) const;
  std::uint64_t seed_;
};

struct SimulationResult {
  MatrixXd mu_men;    // n_x times the fraction of type-x men choosing y
  VectorXd mu_x0;     // n_x times the fraction staying single
  MatrixXd mu_women;  // m_y times the fraction of type-y women choosing x
  VectorXd mu_0y;
  Matching<double> analytic;  // aggregate solution used for U and V
};

/// Simulates the discrete-choice model behind a TU market: each of
/// `agents_per_type` men of type x picks argmax over y of
/// U_xy + T eps_iy against T eps_i0, with U_xy = T log(mu_xy / mu_x0) taken
/// from the aggregate solution; women likewise with V_xy.
SimulationResult simulate_heterogeneous_market(const Market<double>& market, long agents_per_type,
                                               const SimulationDraw& draw,
                                               const SolverConfig<double>& config = {});

}  // namespace itu
