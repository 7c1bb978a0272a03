#pragma once

// Iterative projection fitting: alternate exact solves of each x-margin
// equation in u_x (v fixed) and each y-margin equation in v_y (u fixed),
// starting from v = +inf.

#include <chrono>
#include <cmath>
#include <exception>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "itu/errors.hpp"
#include "itu/system.hpp"
#include "itu/transfer.hpp"
#include "itu/types.hpp"

namespace itu {

enum class SweepOrder {
  Alternating,  // all x, then all y
  Interleaved,  // u_0, v_0, u_1, v_1, ... (Gauss-Seidel across sides)
};

template <typename Scalar>
struct SolverConfig {
  Scalar tol = Scalar(1e-9);
  long max_iter = 10000;
  Scalar scalar_tol = Scalar(1e-13);
  long log_every = 0;
  SweepOrder order = SweepOrder::Alternating;
  bool reverse = false;  // visit types in reverse label order
  Index gauge_anchor = 0;
  Scalar gauge_value = 0;     // u[gauge_anchor] in balanced markets
  bool gauge_search = true;   // move the pin when gauge_value admits no solution
  int threads = 1;

  void validate() const {
    if (!(tol > 0)) throw DomainError("solver tol must be > 0");
    if (max_iter < 1) throw DomainError("solver max_iter must be >= 1");
    if (!(scalar_tol > 0) || scalar_tol > tol)
      throw DomainError("solver scalar_tol must be in (0, tol]");
    if (log_every < 0) throw DomainError("solver log_every must be >= 0");
    if (threads < 1) throw DomainError("solver threads must be >= 1");
    if (!std::isfinite(static_cast<double>(gauge_value)))
      throw DomainError("solver gauge_value must be finite");
  }
};

template <typename Scalar>
struct SolveReport {
  long iterations = 0;
  std::vector<Scalar> sup_change_history;  // sup_y |v^{2t+2} - v^{2t}| per sweep
  Scalar final_residual = std::numeric_limits<Scalar>::infinity();
  bool converged = false;
  long monotone_violations = 0;
  int gauge_attempts = 1;  // balanced solves: pinned runs until one succeeded
  double seconds = 0;
};

template <typename Scalar>
struct SolveResult {
  Potentials<Scalar> potentials;
  Matching<Scalar> matching;
  SolveReport<Scalar> report;
};

namespace detail {

// Streaming log-sum-exp of pair terms together with the softmax-weighted
// derivative sum.
template <typename Scalar>
struct LogSumAccumulator {
  Scalar max = -infinity<Scalar>();
  Scalar sum = 0;
  Scalar dsum = 0;

  void add(Scalar log_term, Scalar d) {
    using std::exp;
    if (log_term == -infinity<Scalar>()) return;
    if (log_term > max) {
      const Scalar scale = exp(max - log_term);
      sum = sum * scale + 1;
      dsum = dsum * scale + d;
      max = log_term;
    } else {
      const Scalar e = exp(log_term - max);
      sum += e;
      dsum += e * d;
    }
  }
  Scalar log() const { return sum > 0 ? max + std::log(sum) : -infinity<Scalar>(); }
  Scalar derivative() const { return sum > 0 ? dsum / sum : Scalar(0); }
};

// Finds w with H(w) = 0 where H(w) = T (log sum_k M_k(w) - log mass) is
// decreasing. `eval(w)` returns the accumulator for the terms at w.
template <typename Scalar, typename Eval>
Scalar solve_margin(Eval&& eval, Scalar mass, Scalar T, bool with_unmatched,
                    std::optional<Scalar> guess, Scalar rel_tol, char side, Index index) {
  using std::abs, std::log, std::isfinite;
  const Scalar log_mass = log(mass);
  auto H = [&](Scalar w, Scalar* dH) {
    const auto acc = eval(w);
    if (dH) *dH = T * acc.derivative();
    return T * (acc.log() - log_mass);
  };
  auto diverged = [&]() {
    std::ostringstream os;
    os << "margin equation for " << side << "-type " << index
       << " could not be bracketed (mass " << mass << ")";
    return DivergedMarketError(os.str(), side, static_cast<long>(index));
  };

  constexpr int kExpansions = 200;
  Scalar lo, hi;
  if (with_unmatched) {
    // The unmatched term alone reaches `mass` at -T log(mass).
    lo = -T * log_mass;
    Scalar step = std::max(Scalar(1), T);
    Scalar start = lo + step;
    if (guess && isfinite(*guess) && *guess > lo) start = *guess;
    hi = start;
    int k = 0;
    for (Scalar h = H(hi, nullptr); h >= 0; h = H(hi, nullptr)) {
      if (h == 0) return hi;
      if (++k > kExpansions || !isfinite(hi)) throw diverged();
      lo = hi;
      hi = lo + step;
      step *= 2;
    }
  } else {
    Scalar start = (guess && isfinite(*guess)) ? *guess : Scalar(0);
    Scalar step = std::max(Scalar(1), T);
    const Scalar h0 = H(start, nullptr);
    if (h0 == 0) return start;
    int k = 0;
    if (h0 > 0) {
      lo = start;
      hi = start + step;
      for (Scalar h = H(hi, nullptr); h >= 0; h = H(hi, nullptr)) {
        if (h == 0) return hi;
        if (++k > kExpansions || !isfinite(hi)) throw diverged();
        lo = hi;
        step *= 2;
        hi = lo + step;
      }
    } else {
      hi = start;
      lo = start - step;
      for (Scalar h = H(lo, nullptr); h <= 0; h = H(lo, nullptr)) {
        if (h == 0) return lo;
        if (++k > kExpansions || !isfinite(lo)) throw diverged();
        hi = lo;
        step *= 2;
        lo = hi - step;
      }
    }
  }

  // Safeguarded Newton inside [lo, hi].
  Scalar w = (guess && *guess > lo && *guess < hi) ? *guess : lo + (hi - lo) / 2;
  for (int it = 0; it < 300; ++it) {
    Scalar dh = 0;
    const Scalar h = H(w, &dh);
    if (h == 0) return w;
    (h > 0 ? lo : hi) = w;
    Scalar next = w - h / dh;
    if (!(dh < 0) || !(next > lo && next < hi)) next = lo + (hi - lo) / 2;
    if (abs(next - w) <= rel_tol * std::max(Scalar(1), abs(next))) return next;
    if (hi - lo <= rel_tol * std::max({Scalar(1), abs(lo), abs(hi)})) return lo + (hi - lo) / 2;
    w = next;
  }
  return w;
}

// Closed-form update when every pair on the line is TU. `beta` is
// log sum_k exp((Phi_k - w_k) / (c T)) over the opposite potentials, with
// c = 2 for the root kernel and c = 1 for exp(-Psi/T).
template <typename Scalar>
Scalar tu_update(Scalar beta, Scalar mass, Scalar T, Kernel kernel, bool with_unmatched) {
  using std::exp, std::log, std::log1p, std::sqrt;
  const Scalar c = kernel == Kernel::Root ? Scalar(2) : Scalar(1);
  const Scalar log_mass = log(mass);
  if (!with_unmatched) return c * T * (beta - log_mass);
  if (kernel == Kernel::ExpPsi) {
    // s (1 + e^beta) = mass with s = exp(-w/T)
    const Scalar softplus = beta > 0 ? beta + log1p(exp(-beta)) : log1p(exp(beta));
    return T * (softplus - log_mass);
  }
  // s^2 + e^beta s - mass = 0 with s = exp(-w/(2T)); s = 2 mass / (b + sqrt(b^2 + 4 mass))
  Scalar L;
  if (beta == -infinity<Scalar>())
    L = std::numbers::ln2_v<Scalar> + log_mass / 2;
  else if (beta >= 0)
    L = beta + log1p(sqrt(1 + 4 * mass * exp(-2 * beta)));
  else {
    const Scalar b = exp(beta);
    L = log(b + sqrt(b * b + 4 * mass));
  }
  const Scalar log_s = std::numbers::ln2_v<Scalar> + log_mass - L;
  return -2 * T * log_s;
}

template <typename Fn>
void parallel_for(Index count, int threads, Fn&& fn) {
  if (threads <= 1 || count < 2 * static_cast<Index>(threads)) {
    for (Index i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex lock;
  {
    std::vector<std::jthread> pool;
    const Index chunk = (count + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const Index begin = t * chunk, end = std::min(count, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back([&, begin, end] {
        try {
          for (Index i = begin; i < end; ++i) fn(i);
        } catch (...) {
          std::lock_guard g(lock);
          if (!failure) failure = std::current_exception();
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

/// Solves the x-margin equation for u_x with v held fixed. Entries of v
/// equal to +inf contribute no mass. `guess` seeds the Newton iteration.
template <typename Scalar>
Scalar update_u(const Market<Scalar>& market, const Arg<Vector<Scalar>>& v, Index x,
                Scalar scalar_tol = Scalar(1e-13), std::optional<Scalar> guess = std::nullopt) {
  const Scalar T = market.temperature();
  const Kernel kernel = market.kernel();
  const bool unmatched = !market.balanced();
  if (market.row_is_tu(x)) {
    detail::LogSumAccumulator<Scalar> acc;
    const Scalar c = kernel == Kernel::Root ? Scalar(2) : Scalar(1);
    for (Index y = 0; y < market.num_y(); ++y)
      if (v[y] != infinity<Scalar>()) acc.add((market.spec(x, y).phi - v[y]) / (c * T), 0);
    if (!unmatched && acc.sum == 0)
      throw DivergedMarketError("balanced x-margin has no finite partner", 'x', x);
    return detail::tu_update(acc.log(), market.n()[x], T, kernel, unmatched);
  }
  auto eval = [&](Scalar w) {
    detail::LogSumAccumulator<Scalar> acc;
    if (unmatched) acc.add(-w / T, -1 / T);
    for (Index y = 0; y < market.num_y(); ++y) {
      const auto t = pair_term(kernel, market.spec(x, y), T, w, v[y]);
      acc.add(t.log_mass, t.d_u);
    }
    return acc;
  };
  return detail::solve_margin(eval, market.n()[x], T, unmatched, guess, scalar_tol, 'x', x);
}

/// Mirror of update_u: solves the y-margin equation for v_y with u fixed.
template <typename Scalar>
Scalar update_v(const Market<Scalar>& market, const Arg<Vector<Scalar>>& u, Index y,
                Scalar scalar_tol = Scalar(1e-13), std::optional<Scalar> guess = std::nullopt) {
  const Scalar T = market.temperature();
  const Kernel kernel = market.kernel();
  const bool unmatched = !market.balanced();
  if (market.column_is_tu(y)) {
    detail::LogSumAccumulator<Scalar> acc;
    const Scalar c = kernel == Kernel::Root ? Scalar(2) : Scalar(1);
    for (Index x = 0; x < market.num_x(); ++x)
      if (u[x] != infinity<Scalar>()) acc.add((market.spec(x, y).phi - u[x]) / (c * T), 0);
    if (!unmatched && acc.sum == 0)
      throw DivergedMarketError("balanced y-margin has no finite partner", 'y', y);
    return detail::tu_update(acc.log(), market.m()[y], T, kernel, unmatched);
  }
  auto eval = [&](Scalar w) {
    detail::LogSumAccumulator<Scalar> acc;
    if (unmatched) acc.add(-w / T, -1 / T);
    for (Index x = 0; x < market.num_x(); ++x) {
      const auto t = pair_term(kernel, market.spec(x, y), T, u[x], w);
      acc.add(t.log_mass, t.d_v);
    }
    return acc;
  };
  return detail::solve_margin(eval, market.m()[y], T, unmatched, guess, scalar_tol, 'y', y);
}

namespace detail {

template <typename Scalar>
SolveResult<Scalar> ipfp_sweeps(const Market<Scalar>& market, const SolverConfig<Scalar>& config,
                                const Vector<Scalar>* initial_v, Scalar pin) {
  using std::abs;
  config.validate();
  const auto clock_start = std::chrono::steady_clock::now();
  const Index nx = market.num_x(), ny = market.num_y();
  const bool balanced = market.balanced();
  const Index anchor = config.gauge_anchor;
  if (balanced && (anchor < 0 || anchor >= nx))
    throw PreconditionError("gauge anchor out of range");
  if (initial_v && initial_v->size() != ny)
    throw PreconditionError("initial v has the wrong size");

  Vector<Scalar> u, v;
  if (balanced) {
    u = Vector<Scalar>::Constant(nx, pin);
    v = initial_v ? *initial_v : Vector<Scalar>::Zero(ny);
  } else {
    u = Vector<Scalar>::Constant(nx, infinity<Scalar>());
    v = initial_v ? *initial_v : Vector<Scalar>::Constant(ny, infinity<Scalar>());
  }

  auto idx = [&](Index k, Index count) { return config.reverse ? count - 1 - k : k; };
  auto guess_of = [](Scalar w) {
    return w == infinity<Scalar>() ? std::nullopt : std::optional<Scalar>(w);
  };
  auto solve_u = [&](Index x) {
    if (balanced && x == anchor) return;
    u[x] = update_u(market, v, x, config.scalar_tol, guess_of(u[x]));
  };
  auto solve_v = [&](Index y) { v[y] = update_v(market, u, y, config.scalar_tol, guess_of(v[y])); };

  SolveReport<Scalar> report;
  Vector<Scalar> v_prev;
  for (long it = 1; it <= config.max_iter; ++it) {
    v_prev = v;
    if (config.order == SweepOrder::Alternating) {
      detail::parallel_for(nx, config.threads, [&](Index k) { solve_u(idx(k, nx)); });
      detail::parallel_for(ny, config.threads, [&](Index k) { solve_v(idx(k, ny)); });
    } else {
      for (Index k = 0; k < std::max(nx, ny); ++k) {
        if (k < nx) solve_u(idx(k, nx));
        if (k < ny) solve_v(idx(k, ny));
      }
    }

    Scalar change = 0;
    for (Index y = 0; y < ny; ++y) {
      if (v_prev[y] == infinity<Scalar>()) {
        change = infinity<Scalar>();
        continue;
      }
      change = std::max(change, abs(v[y] - v_prev[y]));
      if (!balanced &&
          v[y] > v_prev[y] + 10 * config.scalar_tol * std::max(Scalar(1), abs(v_prev[y])))
        ++report.monotone_violations;
    }
    report.sup_change_history.push_back(change);
    report.iterations = it;

    const bool small_step = change < config.tol;
    Scalar res = infinity<Scalar>();
    if (small_step || (config.log_every > 0 && it % config.log_every == 0))
      res = scaled_residual(market, Potentials<Scalar>{u, v});
    if (config.log_every > 0 && it % config.log_every == 0)
      std::clog << "ipfp sweep " << it << ": sup change " << change << ", residual " << res
                << '\n';
    if (small_step && res <= config.tol) {
      report.converged = true;
      report.final_residual = res;
      break;
    }
  }

  Potentials<Scalar> pot{u, v};
  if (!report.converged && u.allFinite() && v.allFinite())
    report.final_residual = scaled_residual(market, pot);
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  SolveResult<Scalar> out{pot, {}, std::move(report)};
  if (u.allFinite() && v.allFinite()) out.matching = matching_from_potentials(market, pot);
  return out;
}

}  // namespace detail

/// Runs the alternating scheme without throwing on max_iter; the report's
/// `converged` flag tells whether both the step and residual tests passed.
///
/// Balanced markets start from v = 0 with u[gauge_anchor] held at
/// gauge_value. Only TU and LTU are shift invariant; for saturating
/// families (ETU, NTU) the solution set can miss that value, which shows up
/// as a margin that cannot be bracketed. With gauge_search the pin is then
/// moved outward, alternating above and below gauge_value with offsets
/// growing by sqrt(2), and the first pin that solves is kept. Unbalanced
/// markets start at v = +inf unless `initial_v` is given.
template <typename Scalar>
SolveResult<Scalar> ipfp_run(const Market<Scalar>& market, const SolverConfig<Scalar>& config,
                             const Vector<Scalar>* initial_v = nullptr) {
  using std::sqrt;
  config.validate();
  if (!market.balanced() || !config.gauge_search)
    return detail::ipfp_sweeps(market, config, initial_v, config.gauge_value);

  constexpr int kOffsets = 60;  // up to 2^30 times the base offset
  const Scalar base = std::max(Scalar(1), market.temperature()) / 8;
  Scalar offset = base;
  for (int attempt = 0;; ++attempt) {
    Scalar pin = config.gauge_value;
    if (attempt > 0) {
      pin += attempt % 2 ? offset : -offset;
      if (attempt % 2 == 0) offset *= sqrt(Scalar(2));
    }
    try {
      auto out = detail::ipfp_sweeps(market, config, initial_v, pin);
      out.report.gauge_attempts = attempt + 1;
      return out;
    } catch (const DivergedMarketError& e) {
      if (attempt >= 2 * kOffsets) {
        std::ostringstream os;
        os << e.what() << "; no balanced solution found with u[" << config.gauge_anchor
           << "] within " << offset << " of " << config.gauge_value;
        throw DivergedMarketError(os.str(), e.side(), e.index());
      }
    }
  }
}

/// Solves the market; throws NonConvergenceError (carrying the report
/// statistics) when max_iter sweeps do not suffice.
template <typename Scalar>
SolveResult<Scalar> ipfp_solve(const Market<Scalar>& market, const SolverConfig<Scalar>& config,
                               const Vector<Scalar>* initial_v = nullptr) {
  auto result = ipfp_run(market, config, initial_v);
  if (!result.report.converged) {
    std::ostringstream os;
    os << "ipfp did not converge in " << result.report.iterations
       << " sweeps (scaled residual " << result.report.final_residual << ")";
    std::vector<double> history(result.report.sup_change_history.begin(),
                                result.report.sup_change_history.end());
    throw NonConvergenceError(os.str(), result.report.iterations,
                              static_cast<double>(result.report.final_residual),
                              std::move(history));
  }
  return result;
}

/// Newton's method on the full unbalanced system, started from `pot` and
/// safeguarded by backtracking on the scaled residual. Used to finish
/// solves where ipfp crawls: when the unmatched masses are small, ipfp
/// moves along the surplus-sharing direction by steps of that size.
/// Updates `pot` in place and returns the number of accepted steps.
template <typename Scalar>
int newton_refine(const Market<Scalar>& market, Potentials<Scalar>& pot, Scalar target,
                  int max_steps = 50) {
  using std::abs, std::exp;
  if (market.balanced()) throw PreconditionError("newton_refine needs an unbalanced market");
  detail::require_shape(market, pot);
  const Index nx = market.num_x(), ny = market.num_y();
  const Scalar T = market.temperature();

  // Margin violations scaled by the margin masses, optionally with the
  // Jacobian of that map.
  auto evaluate = [&](const Vector<Scalar>& u, const Vector<Scalar>& v, Matrix<Scalar>* jac) {
    Vector<Scalar> F(nx + ny);
    for (Index x = 0; x < nx; ++x) F[x] = m_unmatched(T, u[x]) - market.n()[x];
    for (Index y = 0; y < ny; ++y) F[nx + y] = m_unmatched(T, v[y]) - market.m()[y];
    if (jac) {
      jac->setZero(nx + ny, nx + ny);
      for (Index x = 0; x < nx; ++x) (*jac)(x, x) = -m_unmatched(T, u[x]) / T;
      for (Index y = 0; y < ny; ++y) (*jac)(nx + y, nx + y) = -m_unmatched(T, v[y]) / T;
    }
    for (Index y = 0; y < ny; ++y)
      for (Index x = 0; x < nx; ++x) {
        const auto t = pair_term(market.kernel(), market.spec(x, y), T, u[x], v[y]);
        const Scalar mass = exp(t.log_mass);
        F[x] += mass;
        F[nx + y] += mass;
        if (jac) {
          (*jac)(x, x) += mass * t.d_u;
          (*jac)(x, nx + y) += mass * t.d_v;
          (*jac)(nx + y, x) += mass * t.d_u;
          (*jac)(nx + y, nx + y) += mass * t.d_v;
        }
      }
    for (Index x = 0; x < nx; ++x) {
      F[x] /= market.n()[x];
      if (jac) jac->row(x) /= market.n()[x];
    }
    for (Index y = 0; y < ny; ++y) {
      F[nx + y] /= market.m()[y];
      if (jac) jac->row(nx + y) /= market.m()[y];
    }
    return F;
  };
  auto norm = [](const Vector<Scalar>& F) {
    return F.allFinite() ? F.cwiseAbs().maxCoeff() : infinity<Scalar>();
  };

  int accepted = 0;
  Matrix<Scalar> J;
  Vector<Scalar> F = evaluate(pot.u, pot.v, &J);
  Scalar res = norm(F);
  for (int step = 0; step < max_steps && res > target; ++step) {
    const Vector<Scalar> delta = J.partialPivLu().solve(-F);
    if (!delta.allFinite()) break;
    bool moved = false;
    for (Scalar t = 1; t > Scalar(1e-6); t /= 2) {
      const Vector<Scalar> u = pot.u + t * delta.head(nx);
      const Vector<Scalar> v = pot.v + t * delta.tail(ny);
      const Vector<Scalar> F_new = evaluate(u, v, nullptr);
      const Scalar r = norm(F_new);
      if (r < res) {
        pot.u = u;
        pot.v = v;
        moved = true;
        break;
      }
    }
    if (!moved) break;
    ++accepted;
    F = evaluate(pot.u, pot.v, &J);
    res = norm(F);
  }
  return accepted;
}

/// Canonical representative of a balanced market's solution family with
/// u[anchor] = 0. TU markets are shifted exactly (u - c, v + c leaves every
/// pair mass unchanged); other families are re-solved with the pin, warm
/// started from `pot`, and throw DivergedMarketError when no solution has
/// u[anchor] = 0.
template <typename Scalar>
Potentials<Scalar> gauge_pin(const Market<Scalar>& market, const Potentials<Scalar>& pot,
                             Index anchor, const SolverConfig<Scalar>& config = {}) {
  if (!market.balanced()) throw PreconditionError("gauge_pin requires a balanced market");
  if (anchor < 0 || anchor >= market.num_x())
    throw PreconditionError("gauge anchor out of range");
  detail::require_shape(market, pot);
  if (market.all_of_family(Family::TU)) {
    const Scalar c = pot.u[anchor];
    return {(pot.u.array() - c).matrix(), (pot.v.array() + c).matrix()};
  }
  if (pot.u[anchor] == 0 && scaled_residual(market, pot) <= config.tol) return pot;
  SolverConfig<Scalar> pinned = config;
  pinned.gauge_anchor = anchor;
  pinned.gauge_value = 0;
  pinned.gauge_search = false;
  return ipfp_solve(market, pinned, &pot.v).potentials;
}

template <typename Scalar>
struct JacobianDiagnostic {
  Matrix<Scalar> jacobian;  // -D zeta, so that the diagonal is positive
  Vector<Scalar> row_margins;
  Vector<Scalar> column_margins;
  Scalar min_row_margin = 0;
  Scalar min_column_margin = 0;
  Scalar margin = 0;  // max of the two minima
  bool diagonal_positive = false;
  bool dominant_diagonal = false;
};

/// zeta(u, v): the left-hand sides of the system, x block then y block.
template <typename Scalar>
Vector<Scalar> system_map(const Market<Scalar>& market, const Vector<Scalar>& u,
                          const Vector<Scalar>& v) {
  const Index nx = market.num_x(), ny = market.num_y();
  const Scalar T = market.temperature();
  const Matrix<Scalar> M = pair_masses(market, u, v);
  Vector<Scalar> z(nx + ny);
  for (Index x = 0; x < nx; ++x) {
    Scalar s = market.balanced() ? Scalar(0) : m_unmatched(T, u[x]);
    for (Index y = 0; y < ny; ++y) s += M(x, y);
    z[x] = s;
  }
  for (Index y = 0; y < ny; ++y) {
    Scalar s = market.balanced() ? Scalar(0) : m_unmatched(T, v[y]);
    for (Index x = 0; x < nx; ++x) s += M(x, y);
    z[nx + y] = s;
  }
  return z;
}

/// Central-difference Jacobian of the system map with row and column
/// dominance margins. Either kind of strict dominance with a positive
/// diagonal makes the matrix a P-matrix.
template <typename Scalar>
JacobianDiagnostic<Scalar> jacobian_diagnostic(const Market<Scalar>& market,
                                               const Potentials<Scalar>& pot,
                                               Scalar step = Scalar(1e-6)) {
  using std::abs, std::isfinite;
  if (!(step > 0) || !isfinite(step)) throw StepSizeError("finite-difference step must be > 0");
  for (const auto& s : market.transfers()) {
    if (s.family == Family::NTU)
      throw UnsupportedFamilyError("jacobian diagnostic is undefined on the NTU kink");
    if (!s.smooth())
      throw UnsupportedFamilyError("jacobian diagnostic needs a custom gradient");
  }
  detail::require_shape(market, pot);
  const Index nx = market.num_x(), ny = market.num_y(), n = nx + ny;
  JacobianDiagnostic<Scalar> out;
  out.jacobian.resize(n, n);
  for (Index k = 0; k < n; ++k) {
    Vector<Scalar> up = pot.u, vp = pot.v, um = pot.u, vm = pot.v;
    if (k < nx) {
      up[k] += step;
      um[k] -= step;
    } else {
      vp[k - nx] += step;
      vm[k - nx] -= step;
    }
    out.jacobian.col(k) = -(system_map(market, up, vp) - system_map(market, um, vm)) / (2 * step);
  }
  if (!out.jacobian.allFinite()) throw StepSizeError("non-finite finite-difference Jacobian");
  const Vector<Scalar> diag = out.jacobian.diagonal();
  if ((diag.array() == 0).any()) throw StepSizeError("zero diagonal in finite-difference Jacobian");

  const Matrix<Scalar> A = out.jacobian.cwiseAbs();
  out.row_margins = 2 * diag.cwiseAbs() - A.rowwise().sum();
  out.column_margins = 2 * diag.cwiseAbs() - A.colwise().sum().transpose();
  out.min_row_margin = out.row_margins.minCoeff();
  out.min_column_margin = out.column_margins.minCoeff();
  out.margin = std::max(out.min_row_margin, out.min_column_margin);
  out.diagonal_positive = (diag.array() > 0).all();
  out.dominant_diagonal = out.diagonal_positive && out.margin > 0;
  return out;
}

}  // namespace itu
