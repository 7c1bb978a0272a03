#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <set>

#include "itu/oracle.hpp"
#include "support/generators.hpp"

using namespace itu;
using itu::testing::labels;

namespace {

using Spec = TransferSpec<double>;

IndividualMarket tu_market(const MatrixXd& phi) {
  std::vector<Spec> table;
  for (Index i = 0; i < phi.rows(); ++i)
    for (Index j = 0; j < phi.cols(); ++j) table.push_back(Spec::tu(phi(i, j)));
  return IndividualMarket(labels("i", phi.rows()), labels("j", phi.cols()), table);
}

IndividualMarket ntu_market(const MatrixXd& alpha, const MatrixXd& gamma) {
  std::vector<Spec> table;
  for (Index i = 0; i < alpha.rows(); ++i)
    for (Index j = 0; j < alpha.cols(); ++j) table.push_back(Spec::ntu(alpha(i, j), gamma(i, j)));
  return IndividualMarket(labels("i", alpha.rows()), labels("j", alpha.cols()), table);
}

std::set<std::vector<int>> partners(const std::vector<StableOutcome>& list) {
  std::set<std::vector<int>> out;
  for (const auto& o : list) out.insert(o.partner);
  return out;
}

// Men-proposing deferred acceptance; alpha(i, j) is man i's value of
// woman j and gamma(i, j) woman j's value of man i. Negative values are
// unacceptable.
std::vector<int> deferred_acceptance(const MatrixXd& alpha, const MatrixXd& gamma) {
  const Index ni = alpha.rows(), nj = alpha.cols();
  std::vector<int> man_partner(static_cast<std::size_t>(ni), -1);
  std::vector<int> woman_partner(static_cast<std::size_t>(nj), -1);
  std::vector<std::vector<bool>> proposed(static_cast<std::size_t>(ni),
                                          std::vector<bool>(static_cast<std::size_t>(nj)));
  bool progress = true;
  while (progress) {
    progress = false;
    for (Index i = 0; i < ni; ++i) {
      if (man_partner[static_cast<std::size_t>(i)] >= 0) continue;
      Index best = -1;
      for (Index j = 0; j < nj; ++j)
        if (!proposed[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] && alpha(i, j) > 0 &&
            (best < 0 || alpha(i, j) > alpha(i, best)))
          best = j;
      if (best < 0) continue;
      progress = true;
      proposed[static_cast<std::size_t>(i)][static_cast<std::size_t>(best)] = true;
      if (gamma(i, best) <= 0) continue;
      const int current = woman_partner[static_cast<std::size_t>(best)];
      if (current < 0 || gamma(i, best) > gamma(current, best)) {
        if (current >= 0) man_partner[static_cast<std::size_t>(current)] = -1;
        woman_partner[static_cast<std::size_t>(best)] = static_cast<int>(i);
        man_partner[static_cast<std::size_t>(i)] = static_cast<int>(best);
      }
    }
  }
  return man_partner;
}

// Ordinal stability of a matching for NTU preferences with reservation 0.
bool ntu_stable(const MatrixXd& alpha, const MatrixXd& gamma, const std::vector<int>& p) {
  const Index ni = alpha.rows(), nj = alpha.cols();
  std::vector<int> q(static_cast<std::size_t>(nj), -1);
  for (Index i = 0; i < ni; ++i)
    if (p[static_cast<std::size_t>(i)] >= 0) q[static_cast<std::size_t>(p[static_cast<std::size_t>(i)])] = static_cast<int>(i);
  auto man_value = [&](Index i) {
    const int j = p[static_cast<std::size_t>(i)];
    return j < 0 ? 0.0 : alpha(i, j);
  };
  auto woman_value = [&](Index j) {
    const int i = q[static_cast<std::size_t>(j)];
    return i < 0 ? 0.0 : gamma(i, j);
  };
  for (Index i = 0; i < ni; ++i)
    if (man_value(i) < 0) return false;
  for (Index j = 0; j < nj; ++j)
    if (woman_value(j) < 0) return false;
  for (Index i = 0; i < ni; ++i)
    for (Index j = 0; j < nj; ++j)
      if (p[static_cast<std::size_t>(i)] != j && alpha(i, j) > man_value(i) &&
          gamma(i, j) > woman_value(j))
        return false;
  return true;
}

std::vector<std::vector<int>> all_matchings(int ni, int nj) {
  std::vector<std::vector<int>> out;
  std::vector<int> p(static_cast<std::size_t>(ni), -1);
  std::function<void(int, std::vector<bool>&)> rec = [&](int i, std::vector<bool>& used) {
    if (i == ni) {
      out.push_back(p);
      return;
    }
    p[static_cast<std::size_t>(i)] = -1;
    rec(i + 1, used);
    for (int j = 0; j < nj; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      used[static_cast<std::size_t>(j)] = true;
      p[static_cast<std::size_t>(i)] = j;
      rec(i + 1, used);
      used[static_cast<std::size_t>(j)] = false;
    }
    p[static_cast<std::size_t>(i)] = -1;
  };
  std::vector<bool> used(static_cast<std::size_t>(nj), false);
  rec(0, used);
  return out;
}

}  // namespace

TEST(Hungarian, Examples) {
  MatrixXd phi(2, 2);
  phi << 4, 0, 0, 4;
  auto a = hungarian_optimal(phi, true);
  EXPECT_EQ(a.partner, (std::vector<int>{0, 1}));
  EXPECT_DOUBLE_EQ(a.value, 8);

  a = hungarian_optimal(-MatrixXd::Ones(2, 3), true);
  EXPECT_EQ(a.partner, (std::vector<int>{-1, -1}));
  EXPECT_EQ(a.value, 0);

  a = hungarian_optimal(MatrixXd::Constant(1, 1, 5), true);
  EXPECT_EQ(a.partner, (std::vector<int>{0}));
  EXPECT_EQ(a.value, 5);
}

TEST(Hungarian, RejectsNonFinite) {
  MatrixXd phi = MatrixXd::Zero(2, 2);
  phi(0, 1) = NAN;
  EXPECT_THROW(hungarian_optimal(phi, true), DomainError);
}

TEST(Enumerate, PositiveSurplusPairMustMatch) {
  const auto list = enumerate_stable_outcomes(tu_market(MatrixXd::Constant(1, 1, 2)));
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0].partner, (std::vector<int>{0}));
  // Lowest man payoff on the grid; the woman gets the rest, up to one step.
  EXPECT_NEAR(list[0].u[0] + list[0].v[0], 2, 1e-9);
  EXPECT_GE(list[0].u[0], 0);
  EXPECT_LE(list[0].u[0], 1e-2);
  EXPECT_GE(list[0].v[0], 2 - 1e-2);
}

TEST(Enumerate, NegativeSurplusPairStaysSingle) {
  const auto list = enumerate_stable_outcomes(tu_market(MatrixXd::Constant(1, 1, -1)));
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0].partner, (std::vector<int>{-1}));
  EXPECT_TRUE(list[0].u.isZero());
}

TEST(Enumerate, RefusesLargeMarkets) {
  EXPECT_THROW(enumerate_stable_outcomes(tu_market(MatrixXd::Ones(5, 1))), PreconditionError);
  EXPECT_THROW(enumerate_stable_outcomes(tu_market(MatrixXd::Ones(1, 1)), 0.0), DomainError);
}

TEST(Enumerate, AlignedNtuPreferencesGiveDeferredAcceptanceMatching) {
  // Both men prefer woman 0, both women prefer man 0.
  MatrixXd alpha(2, 2), gamma(2, 2);
  alpha << 0.9, 0.4, 0.8, 0.3;
  gamma << 0.7, 0.6, 0.5, 0.2;
  const auto list = enumerate_stable_outcomes(ntu_market(alpha, gamma));
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0].partner, deferred_acceptance(alpha, gamma));
  EXPECT_EQ(list[0].partner, (std::vector<int>{0, 1}));
}

TEST(Enumerate, NtuMatchesOrdinalStability) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> d(-1, 1);
  for (int trial = 0; trial < 25; ++trial) {
    const int ni = 1 + static_cast<int>(rng() % 3), nj = 1 + static_cast<int>(rng() % 3);
    MatrixXd alpha(ni, nj), gamma(ni, nj);
    for (int i = 0; i < ni; ++i)
      for (int j = 0; j < nj; ++j) {
        alpha(i, j) = d(rng);
        gamma(i, j) = d(rng);
      }
    // Skip draws with near ties that a grid of this step cannot separate.
    bool separated = true;
    std::vector<double> values;
    for (int i = 0; i < ni; ++i)
      for (int j = 0; j < nj; ++j) values.insert(values.end(), {alpha(i, j), gamma(i, j), 0.0});
    for (std::size_t a = 0; a < values.size(); ++a)
      for (std::size_t b = a + 1; b < values.size(); ++b)
        if (values[a] != values[b] && std::abs(values[a] - values[b]) < 1e-2) separated = false;
    if (!separated) continue;

    std::set<std::vector<int>> expected;
    for (const auto& p : all_matchings(ni, nj))
      if (ntu_stable(alpha, gamma, p)) expected.insert(p);
    const auto found = partners(enumerate_stable_outcomes(ntu_market(alpha, gamma), 1e-3));
    EXPECT_EQ(found, expected) << "trial " << trial;
    EXPECT_TRUE(found.count(deferred_acceptance(alpha, gamma)));
  }
}

TEST(Enumerate, TuStableMatchingsAreOptimal) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(-1, 3);
  for (int trial = 0; trial < 10; ++trial) {
    const int ni = 1 + static_cast<int>(rng() % 3), nj = 1 + static_cast<int>(rng() % 3);
    MatrixXd phi(ni, nj);
    for (int i = 0; i < ni; ++i)
      for (int j = 0; j < nj; ++j) phi(i, j) = d(rng);
    const auto list = enumerate_stable_outcomes(tu_market(phi));
    const auto opt = hungarian_optimal(phi, true);
    EXPECT_TRUE(partners(list).count(opt.partner));
    for (const auto& o : list) {
      EXPECT_NEAR((o.mu.array() * phi.array()).sum(), opt.value, 0.1);
      const MatrixXd psi = tu_market(phi).psi_matrix(o.u, o.v);
      EXPECT_GE(psi.minCoeff(), -0.05);
    }
  }
}

TEST(Enumerate, ContainsMatchingRoundsAtOneHalf) {
  const auto list = enumerate_stable_outcomes(tu_market(MatrixXd::Constant(1, 1, 2)));
  EXPECT_TRUE(contains_matching(list, MatrixXd::Constant(1, 1, 0.97)));
  EXPECT_FALSE(contains_matching(list, MatrixXd::Constant(1, 1, 0.02)));
  EXPECT_FALSE(contains_matching(list, MatrixXd::Ones(2, 1)));
}

TEST(Sinkhorn, UnitExample) {
  const auto m = sinkhorn_reference(MatrixXd::Zero(1, 1), VectorXd::Ones(1), VectorXd::Ones(1), 1,
                                    1e-14);
  EXPECT_NEAR(m.mu(0, 0), 0.5, 1e-14);
  EXPECT_NEAR(m.mu_x0[0], 0.5, 1e-14);
}

TEST(Sinkhorn, AgreesWithIpfp) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> d(-1, 1);
  MatrixXd phi(3, 3);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) phi(i, j) = d(rng) + (i == j ? 3 : 0);
  VectorXd n(3), m(3);
  n << 1.0, 1.5, 0.7;
  m << 0.8, 1.2, 1.1;
  for (double shift : {0.0, 1.5}) {
    const MatrixXd shifted = (phi.array() + shift).matrix();
    std::vector<Spec> table;
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 3; ++j) table.push_back(Spec::tu(shifted(i, j)));
    const Market<double> mk(labels("x", 3), labels("y", 3), n, m, table, 0.7);
    SolverConfig<double> cfg;
    cfg.tol = 1e-12;
    const auto ref = sinkhorn_reference(shifted, n, m, 0.7, 1e-13);
    const auto sol = ipfp_solve(mk, cfg).matching;
    EXPECT_LE((ref.mu - sol.mu).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((ref.mu_x0 - sol.mu_x0).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Sinkhorn, ThrowsWhenToleranceUnreachable) {
  std::mt19937_64 rng(2);
  const auto mk = itu::testing::random_market(Family::TU, 4, 4, 1.0, rng);
  MatrixXd phi(4, 4);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) phi(i, j) = mk.spec(i, j).phi;
  EXPECT_THROW(sinkhorn_reference(phi, mk.n(), mk.m(), 1.0, 1e-300), NonConvergenceError);
}

TEST(SimulationDraw, ReproducibleStandardGumbel) {
  const SimulationDraw a(5), b(5), c(6);
  EXPECT_EQ(a.epsilon(1, 2, 3), b.epsilon(1, 2, 3));
  EXPECT_NE(a.epsilon(1, 2, 3), c.epsilon(1, 2, 3));
  EXPECT_NE(a.epsilon(1, 2, 3), a.eta(1, 2, 3));
  double sum = 0, sq = 0;
  const int count = 200000;
  for (int k = 0; k < count; ++k) {
    const double g = a.epsilon(0, k, 0);
    sum += g;
    sq += g * g;
  }
  const double mean = sum / count, var = sq / count - mean * mean;
  EXPECT_NEAR(mean, 0.5772156649015329, 0.02);
  EXPECT_NEAR(var, M_PI * M_PI / 6, 0.03);
}

TEST(Simulation, UnitMarketSingleShare) {
  const Market<double> mk({"x"}, {"y"}, VectorXd::Ones(1), VectorXd::Ones(1), Spec::tu(0), 1.0);
  const long N = 100000;
  const auto r = simulate_heterogeneous_market(mk, N, SimulationDraw(11));
  const double se = std::sqrt(0.25 / N);
  EXPECT_NEAR(r.mu_x0[0], 0.5, 3 * se);
  EXPECT_NEAR(r.mu_0y[0], 0.5, 3 * se);
  EXPECT_NEAR(r.mu_men(0, 0) + r.mu_x0[0], 1, 1e-12);
}

TEST(Simulation, ScaleInvariance) {
  MatrixXd phi(2, 2);
  phi << 1, -0.5, 0.2, 2;
  auto make = [&](double c) {
    std::vector<Spec> table;
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 2; ++j) table.push_back(Spec::tu(c * phi(i, j)));
    VectorXd n(2), m(2);
    n << 1, 2;
    m << 1.5, 1;
    return Market<double>(labels("x", 2), labels("y", 2), n, m, table, c * 0.8);
  };
  const auto a = simulate_heterogeneous_market(make(1), 20000, SimulationDraw(3));
  const auto b = simulate_heterogeneous_market(make(3), 20000, SimulationDraw(3));
  EXPECT_LE((a.mu_men - b.mu_men).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((a.mu_women - b.mu_women).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Simulation, ZeroAgentsAndUnsupportedFamilies) {
  const Market<double> mk({"x"}, {"y"}, VectorXd::Ones(1), VectorXd::Ones(1), Spec::tu(0), 1.0);
  const auto r = simulate_heterogeneous_market(mk, 0, SimulationDraw(1));
  EXPECT_TRUE(r.mu_men.isZero());
  EXPECT_TRUE(r.mu_x0.isZero());
  const Market<double> ntu({"x"}, {"y"}, VectorXd::Ones(1), VectorXd::Ones(1), Spec::ntu(0, 0),
                           1.0);
  EXPECT_THROW(simulate_heterogeneous_market(ntu, 10, SimulationDraw(1)), UnsupportedFamilyError);
}

TEST(Simulation, ThreadedRunIsIdentical) {
  std::mt19937_64 rng(8);
  const auto mk = itu::testing::random_market(Family::TU, 4, 3, 1.0, rng);
  SolverConfig<double> threaded;
  threaded.threads = 2;
  const auto a = simulate_heterogeneous_market(mk, 5000, SimulationDraw(9));
  const auto b = simulate_heterogeneous_market(mk, 5000, SimulationDraw(9), threaded);
  EXPECT_TRUE((a.mu_men.array() == b.mu_men.array()).all());
  EXPECT_TRUE((a.mu_0y.array() == b.mu_0y.array()).all());
}
