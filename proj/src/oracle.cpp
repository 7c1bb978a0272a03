#include "itu/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace itu {

Assignment hungarian_optimal(const MatrixXd& surplus, bool allow_unmatched) {
  if (!surplus.allFinite()) throw DomainError("surplus matrix must be finite");
  return max_weight_assignment(surplus, allow_unmatched);
}

namespace {

// Root of an increasing function by bracket expansion and bisection.
double increasing_root(const std::function<double(double)>& f) {
  double lo = -1, hi = 1;
  while (f(lo) > 0) {
    lo *= 2;
    if (lo < -1e6) throw UnboundedTransferError("frontier root escapes the search box");
  }
  while (f(hi) < 0) {
    hi *= 2;
    if (hi > 1e6) throw UnboundedTransferError("frontier root escapes the search box");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Points of the frontier Psi = 0 on a grid of s = u - v.
struct Frontier {
  bool usable = false;
  std::vector<double> u, v;
};

Frontier trace_frontier(const TransferSpec<double>& spec, double step, double eps) {
  Frontier fr;
  if (psi_eval(spec, 0.0, 0.0) > eps) return fr;
  // Largest payoffs either partner can get with the other at zero; the
  // frontier beyond them has a negative payoff.
  const double u_max = increasing_root([&](double u) { return psi_eval(spec, u, 0.0) - eps; });
  const double v_max = increasing_root([&](double v) { return psi_eval(spec, 0.0, v) - eps; });
  const double lo = -v_max - step, hi = u_max + step;
  const auto count = static_cast<std::size_t>(std::ceil((hi - lo) / step)) + 1;
  fr.u.resize(count);
  fr.v.resize(count);
  for (std::size_t n = 0; n < count; ++n) {
    const double s = lo + static_cast<double>(n) * step;
    const double c = increasing_root([&](double c) { return psi_eval(spec, c + s, c); });
    fr.u[n] = c + s;
    fr.v[n] = c;
  }
  fr.usable = true;
  return fr;
}

void enumerate_matchings(int i, int ni, int nj, std::vector<int>& partner,
                         std::vector<bool>& taken, std::vector<std::vector<int>>& out) {
  if (i == ni) {
    out.push_back(partner);
    return;
  }
  partner[static_cast<std::size_t>(i)] = -1;
  enumerate_matchings(i + 1, ni, nj, partner, taken, out);
  for (int j = 0; j < nj; ++j) {
    if (taken[static_cast<std::size_t>(j)]) continue;
    taken[static_cast<std::size_t>(j)] = true;
    partner[static_cast<std::size_t>(i)] = j;
    enumerate_matchings(i + 1, ni, nj, partner, taken, out);
    taken[static_cast<std::size_t>(j)] = false;
  }
  partner[static_cast<std::size_t>(i)] = -1;
}

}  // namespace

std::vector<StableOutcome> enumerate_stable_outcomes(const IndividualMarket& market,
                                                     double grid_step) {
  const int ni = static_cast<int>(market.num_men()), nj = static_cast<int>(market.num_women());
  if (ni > 4 || nj > 4)
    throw PreconditionError("stability enumeration is limited to markets of at most 4 x 4");
  if (!(grid_step > 0) || !std::isfinite(grid_step))
    throw DomainError("payoff grid step must be positive");

  // Along the frontier u and v move by at most one grid step per step in
  // s, so Psi moves by at most step * (|dPsi/du| + |dPsi/dv|).
  double slope = 2;
  for (int i = 0; i < ni; ++i)
    for (int j = 0; j < nj; ++j) {
      const auto& spec = market.spec(i, j);
      if (spec.family == Family::LTU) slope = std::max(slope, spec.lambda + spec.zeta);
      if (spec.family == Family::Custom) {
        for (double p : {-1.0, 0.0, 1.0}) {
          const auto g = psi_gradient(spec, p, p);
          slope = std::max(slope, std::abs(g[0]) + std::abs(g[1]));
        }
      }
    }
  const double eps = grid_step * slope + 1e-12;
  std::vector<std::vector<Frontier>> frontier(static_cast<std::size_t>(ni));
  for (int i = 0; i < ni; ++i)
    for (int j = 0; j < nj; ++j)
      frontier[static_cast<std::size_t>(i)].push_back(
          trace_frontier(market.spec(i, j), grid_step, eps));

  std::vector<std::vector<int>> matchings;
  std::vector<int> partner(static_cast<std::size_t>(ni), -1);
  std::vector<bool> taken(static_cast<std::size_t>(nj), false);
  enumerate_matchings(0, ni, nj, partner, taken, matchings);

  std::vector<StableOutcome> stable;
  for (const auto& p : matchings) {
    std::vector<int> woman_partner(static_cast<std::size_t>(nj), -1);
    bool usable = true;
    for (int i = 0; i < ni; ++i) {
      const int j = p[static_cast<std::size_t>(i)];
      if (j < 0) continue;
      woman_partner[static_cast<std::size_t>(j)] = i;
      if (!frontier[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].usable)
        usable = false;
    }
    if (!usable) continue;

    // Grid index along each matched pair's frontier, raised from the
    // bottom to the least point meeting every lower-bound constraint.
    std::vector<std::size_t> pos(static_cast<std::size_t>(ni), 0);
    auto frontier_of = [&](int i) -> const Frontier& {
      return frontier[static_cast<std::size_t>(i)][static_cast<std::size_t>(p[static_cast<std::size_t>(i)])];
    };
    auto u_of = [&](int i) {
      return p[static_cast<std::size_t>(i)] < 0 ? 0.0
                                                : frontier_of(i).u[pos[static_cast<std::size_t>(i)]];
    };
    auto v_of = [&](int j) {
      const int i = woman_partner[static_cast<std::size_t>(j)];
      return i < 0 ? 0.0 : frontier_of(i).v[pos[static_cast<std::size_t>(i)]];
    };
    auto lower_ok = [&](int i) {
      const double u = u_of(i);
      if (u < 0) return false;
      for (int j = 0; j < nj; ++j)
        if (j != p[static_cast<std::size_t>(i)] && psi_eval(market.spec(i, j), u, v_of(j)) < -eps)
          return false;
      return true;
    };

    bool feasible = true, changed = true;
    while (feasible && changed) {
      changed = false;
      for (int i = 0; i < ni && feasible; ++i) {
        if (p[static_cast<std::size_t>(i)] < 0) continue;
        auto& n = pos[static_cast<std::size_t>(i)];
        while (!lower_ok(i)) {
          if (++n >= frontier_of(i).u.size()) {
            feasible = false;
            break;
          }
          changed = true;
        }
      }
    }
    if (!feasible) continue;

    // Remaining constraints only bound each pair from above: women keep
    // nonnegative payoffs and single men cannot block.
    for (int j = 0; j < nj && feasible; ++j) {
      if (v_of(j) < -eps) feasible = false;
      for (int i = 0; i < ni && feasible; ++i)
        if (p[static_cast<std::size_t>(i)] < 0 && psi_eval(market.spec(i, j), 0.0, v_of(j)) < -eps)
          feasible = false;
    }
    if (!feasible) continue;

    StableOutcome out;
    out.partner = p;
    out.mu = MatrixXd::Zero(ni, nj);
    out.u.resize(ni);
    out.v.resize(nj);
    for (int i = 0; i < ni; ++i) {
      out.u[i] = u_of(i);
      if (p[static_cast<std::size_t>(i)] >= 0) out.mu(i, p[static_cast<std::size_t>(i)]) = 1;
    }
    for (int j = 0; j < nj; ++j) out.v[j] = v_of(j);
    stable.push_back(std::move(out));
  }
  return stable;
}

bool contains_matching(const std::vector<StableOutcome>& outcomes, const MatrixXd& mu) {
  for (const auto& o : outcomes) {
    if (o.mu.rows() != mu.rows() || o.mu.cols() != mu.cols()) continue;
    if (((mu.array() > 0.5).cast<double>() == o.mu.array()).all()) return true;
  }
  return false;
}

Matching<double> sinkhorn_reference(const MatrixXd& phi, const VectorXd& n, const VectorXd& m,
                                    double T, double tol) {
  const Index nx = phi.rows(), ny = phi.cols();
  if (n.size() != nx || m.size() != ny) throw DomainError("mass vectors do not match phi");
  if (!(T > 0)) throw DomainError("temperature must be positive");
  const MatrixXd K = (phi.array() / (2 * T)).exp().matrix();
  // mu_xy = a_x K_xy b_y, mu_x0 = a_x^2, mu_0y = b_y^2.
  VectorXd a = n.cwiseSqrt(), b = m.cwiseSqrt();
  auto positive_root = [](double s, double mass) {
    return 2 * mass / (s + std::sqrt(s * s + 4 * mass));
  };
  const long max_sweeps = 100000;
  std::vector<double> history;
  for (long sweep = 1; sweep <= max_sweeps; ++sweep) {
    const VectorXd Kb = K * b;
    for (Index x = 0; x < nx; ++x) a[x] = positive_root(Kb[x], n[x]);
    const VectorXd Ka = K.transpose() * a;
    for (Index y = 0; y < ny; ++y) b[y] = positive_root(Ka[y], m[y]);
    // b is exact after its update, so only the x margins can be off.
    const VectorXd Kb2 = K * b;
    double err = 0;
    for (Index x = 0; x < nx; ++x)
      err = std::max(err, std::abs(a[x] * a[x] + a[x] * Kb2[x] - n[x]) / n[x]);
    if (history.size() < 64) history.push_back(err);
    if (err <= tol) {
      Matching<double> out;
      out.mu = a.asDiagonal() * K * b.asDiagonal();
      out.mu_x0 = a.cwiseAbs2();
      out.mu_0y = b.cwiseAbs2();
      return out;
    }
    if (sweep == max_sweeps)
      throw NonConvergenceError("matrix scaling did not converge", sweep, err, history);
  }
  throw NonConvergenceError("matrix scaling did not converge", max_sweeps, 0, history);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

double SimulationDraw::standard_gumbel(std::uint64_t bits) {
  const double uniform = (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
  return -std::log(-std::log(uniform));
}

double SimulationDraw::gumbel(std::uint64_t side, Index type, Index agent,
                              Index alternative) const {
  std::uint64_t h = splitmix64(seed_);
  h = splitmix64(h ^ side);
  h = splitmix64(h ^ static_cast<std::uint64_t>(type));
  h = splitmix64(h ^ static_cast<std::uint64_t>(agent));
  h = splitmix64(h ^ static_cast<std::uint64_t>(alternative));
  return standard_gumbel(h);
}

SimulationResult simulate_heterogeneous_market(const Market<double>& market, long agents_per_type,
                                               const SimulationDraw& draw,
                                               const SolverConfig<double>& config) {
  if (!market.all_of_family(Family::TU))
    throw UnsupportedFamilyError("heterogeneity simulation needs a TU market");
  if (market.kernel() != Kernel::Root || market.balanced())
    throw PreconditionError("heterogeneity simulation needs an unbalanced aggregate market");
  if (agents_per_type < 0) throw DomainError("agents_per_type must be nonnegative");

  const Index nx = market.num_x(), ny = market.num_y();
  const double T = market.temperature();
  SimulationResult out;
  out.analytic = ipfp_solve(market, config).matching;
  const auto& a = out.analytic;
  out.mu_men = MatrixXd::Zero(nx, ny);
  out.mu_x0 = VectorXd::Zero(nx);
  out.mu_women = MatrixXd::Zero(nx, ny);
  out.mu_0y = VectorXd::Zero(ny);
  if (agents_per_type == 0) return out;
  const double N = static_cast<double>(agents_per_type);

  detail::parallel_for(nx, config.threads, [&](Index x) {
    std::vector<long> count(static_cast<std::size_t>(ny + 1), 0);
    for (long agent = 0; agent < agents_per_type; ++agent) {
      Index best = 0;
      double best_value = T * draw.epsilon(x, agent, 0);
      for (Index y = 0; y < ny; ++y) {
        const double value = T * std::log(a.mu(x, y) / a.mu_x0[x]) + T * draw.epsilon(x, agent, y + 1);
        if (value > best_value) {
          best_value = value;
          best = y + 1;
        }
      }
      ++count[static_cast<std::size_t>(best)];
    }
    const double nxm = market.n()[x];
    out.mu_x0[x] = nxm * static_cast<double>(count[0]) / N;
    for (Index y = 0; y < ny; ++y)
      out.mu_men(x, y) = nxm * static_cast<double>(count[static_cast<std::size_t>(y + 1)]) / N;
  });
  detail::parallel_for(ny, config.threads, [&](Index y) {
    std::vector<long> count(static_cast<std::size_t>(nx + 1), 0);
    for (long agent = 0; agent < agents_per_type; ++agent) {
      Index best = 0;
      double best_value = T * draw.eta(y, agent, 0);
      for (Index x = 0; x < nx; ++x) {
        const double value = T * std::log(a.mu(x, y) / a.mu_0y[y]) + T * draw.eta(y, agent, x + 1);
        if (value > best_value) {
          best_value = value;
          best = x + 1;
        }
      }
      ++count[static_cast<std::size_t>(best)];
    }
    const double mym = market.m()[y];
    out.mu_0y[y] = mym * static_cast<double>(count[0]) / N;
    for (Index x = 0; x < nx; ++x)
      out.mu_women(x, y) = mym * static_cast<double>(count[static_cast<std::size_t>(x + 1)]) / N;
  });
  return out;
}

}  // namespace itu
