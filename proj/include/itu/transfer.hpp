#pragma once

// Transfer-function families Psi(t, r) and the matching functions derived
// from them. Everything here is a pure function of its arguments.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>

#include "itu/errors.hpp"

namespace itu {

/// Exponents are clamped to +/- this value before exponentiation.
inline constexpr double kExponentClamp = 350.0;

/// Non-deduced scalar argument.
template <typename Scalar>
using Arg = std::type_identity_t<Scalar>;

enum class Family { TU, NTU, LTU, ETU, Custom };

inline std::string_view family_name(Family f) {
  switch (f) {
    case Family::TU: return "TU";
    case Family::NTU: return "NTU";
    case Family::LTU: return "LTU";
    case Family::ETU: return "ETU";
    case Family::Custom: return "Custom";
  }
  return "?";
}

inline std::optional<Family> family_from_name(std::string_view name) {
  if (name == "TU") return Family::TU;
  if (name == "NTU") return Family::NTU;
  if (name == "LTU") return Family::LTU;
  if (name == "ETU") return Family::ETU;
  return std::nullopt;
}

/// How the pair mass M_xy is obtained from Psi.
///
/// Root: M_xy(u, v) is the m > 0 solving Psi(T log m + u, T log m + v) = 0
/// (aggregate market with Gumbel heterogeneity).
/// ExpPsi: M_ij(u, v) = exp(-Psi(u, v) / T) (entropic relaxation of the
/// individual equilibrium assignment problem).
enum class Kernel { Root, ExpPsi };

/// Per-pair transfer function. Only the parameters of `family` are read.
template <typename Scalar>
struct TransferSpec {
  using PsiFn = std::function<Scalar(Scalar, Scalar)>;
  using GradientFn = std::function<std::array<Scalar, 2>(Scalar, Scalar)>;

  Family family = Family::TU;
  Scalar phi = 0;     // TU joint surplus
  Scalar alpha = 0;   // NTU/LTU/ETU reservation shift on the x side
  Scalar gamma = 0;   // NTU/LTU/ETU reservation shift on the y side
  Scalar lambda = 1;  // LTU weight on t
  Scalar zeta = 1;    // LTU weight on r
  Scalar tau = 1;     // ETU degree of transferability

  // Custom family only.
  PsiFn psi;
  GradientFn gradient;
  bool monotone_certified = false;

  static TransferSpec tu(Scalar phi) {
    TransferSpec s;
    s.family = Family::TU;
    s.phi = phi;
    return s;
  }
  static TransferSpec ntu(Scalar alpha, Scalar gamma) {
    TransferSpec s;
    s.family = Family::NTU;
    s.alpha = alpha;
    s.gamma = gamma;
    return s;
  }
  static TransferSpec ltu(Scalar lambda, Scalar zeta, Scalar alpha, Scalar gamma) {
    TransferSpec s;
    s.family = Family::LTU;
    s.lambda = lambda;
    s.zeta = zeta;
    s.alpha = alpha;
    s.gamma = gamma;
    return s;
  }
  static TransferSpec etu(Scalar tau, Scalar alpha = 0, Scalar gamma = 0) {
    TransferSpec s;
    s.family = Family::ETU;
    s.tau = tau;
    s.alpha = alpha;
    s.gamma = gamma;
    return s;
  }
  /// `monotone` certifies that psi is continuous and isotone in both
  /// arguments and strictly increasing along the diagonal.
  static TransferSpec custom(PsiFn psi, GradientFn gradient = {}, bool monotone = true) {
    TransferSpec s;
    s.family = Family::Custom;
    s.psi = std::move(psi);
    s.gradient = std::move(gradient);
    s.monotone_certified = monotone;
    return s;
  }

  /// True when Psi is continuously differentiable with a known gradient.
  bool smooth() const {
    return family == Family::TU || family == Family::LTU || family == Family::ETU ||
           (family == Family::Custom && static_cast<bool>(gradient));
  }
};

template <typename Scalar>
std::string describe(const TransferSpec<Scalar>& s) {
  std::ostringstream os;
  os << family_name(s.family);
  switch (s.family) {
    case Family::TU: os << "(phi=" << s.phi << ")"; break;
    case Family::NTU: os << "(alpha=" << s.alpha << ", gamma=" << s.gamma << ")"; break;
    case Family::LTU:
      os << "(lambda=" << s.lambda << ", zeta=" << s.zeta << ", alpha=" << s.alpha
         << ", gamma=" << s.gamma << ")";
      break;
    case Family::ETU:
      os << "(tau=" << s.tau << ", alpha=" << s.alpha << ", gamma=" << s.gamma << ")";
      break;
    case Family::Custom: break;
  }
  return os.str();
}

template <typename Scalar>
void validate(const TransferSpec<Scalar>& s) {
  using std::isfinite;
  if (!isfinite(s.phi) || !isfinite(s.alpha) || !isfinite(s.gamma) ||
      !isfinite(s.lambda) || !isfinite(s.zeta) || !isfinite(s.tau))
    throw DomainError("transfer parameters must be finite: " + describe(s));
  switch (s.family) {
    case Family::LTU:
      if (!(s.lambda > 0) || !(s.zeta > 0))
        throw DomainError("LTU weights lambda and zeta must be > 0: " + describe(s));
      break;
    case Family::ETU:
      if (!(s.tau > 0)) throw DomainError("ETU tau must be > 0: " + describe(s));
      break;
    case Family::Custom:
      if (!s.psi) throw DomainError("custom transfer without a psi function");
      if (!s.monotone_certified)
        throw DomainError("custom transfer lacks a monotonicity certificate");
      break;
    default: break;
  }
}

// ---------------------------------------------------------------------------
// Scalar helpers

template <typename Scalar>
constexpr Scalar infinity() {
  return std::numeric_limits<Scalar>::infinity();
}

/// log(exp(a) + exp(b)), exact for infinite arguments.
template <typename Scalar>
Scalar log_add_exp(Scalar a, Scalar b) {
  using std::abs, std::exp, std::log1p;
  if (a == -infinity<Scalar>()) return b;
  if (b == -infinity<Scalar>()) return a;
  const Scalar hi = std::max(a, b);
  if (hi == infinity<Scalar>()) return hi;
  return hi + log1p(exp(-abs(a - b)));
}

/// exp(a) / (exp(a) + exp(b))
template <typename Scalar>
Scalar logistic_weight(Scalar a, Scalar b) {
  using std::exp;
  const Scalar d = b - a;
  if (d >= 0) {
    const Scalar e = exp(-d);
    return e / (1 + e);
  }
  return 1 / (1 + exp(d));
}

template <typename Scalar>
struct ClampedExp {
  Scalar value;
  bool saturated;
};

/// exp(x) with the exponent clamped to +/- kExponentClamp. exp(-inf) is an
/// exact zero and is not reported as saturation.
template <typename Scalar>
ClampedExp<Scalar> clamped_exp(Scalar x) {
  using std::exp;
  const Scalar bound = static_cast<Scalar>(kExponentClamp);
  if (x == -infinity<Scalar>()) return {Scalar(0), false};
  if (x > bound) return {exp(bound), true};
  if (x < -bound) return {exp(-bound), true};
  return {exp(x), false};
}

namespace detail {

template <typename Scalar>
void require_finite(Scalar t, Scalar r, const char* what) {
  using std::isfinite;
  if (!isfinite(t) || !isfinite(r)) {
    std::ostringstream os;
    os << what << ": non-finite argument (" << t << ", " << r << ")";
    throw DomainError(os.str());
  }
}

template <typename Scalar>
void require_temperature(Scalar T) {
  using std::isfinite;
  if (!(T > 0) || !isfinite(T)) {
    std::ostringstream os;
    os << "temperature must be positive and finite, got " << T;
    throw DomainError(os.str());
  }
}

// Potentials may be +inf (the initial sentinel); NaN and -inf are rejected.
template <typename Scalar>
bool is_sentinel_pair(Scalar u, Scalar v) {
  using std::isnan;
  if (isnan(u) || isnan(v) || u == -infinity<Scalar>() || v == -infinity<Scalar>()) {
    std::ostringstream os;
    os << "invalid potential (" << u << ", " << v << ")";
    throw DomainError(os.str());
  }
  return u == infinity<Scalar>() || v == infinity<Scalar>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Psi and its gradient

template <typename Scalar>
Scalar psi_eval(const TransferSpec<Scalar>& s, Arg<Scalar> t, Arg<Scalar> r) {
  detail::require_finite(t, r, "psi_eval");
  switch (s.family) {
    case Family::TU: return t + r - s.phi;
    case Family::NTU: return std::max(t - s.alpha, r - s.gamma);
    case Family::LTU: return s.lambda * (t - s.alpha) + s.zeta * (r - s.gamma);
    case Family::ETU:
      return s.tau * (log_add_exp((t - s.alpha) / s.tau, (r - s.gamma) / s.tau) -
                      std::numbers::ln2_v<Scalar>);
    case Family::Custom: return s.psi(t, r);
  }
  return 0;
}

/// (dPsi/dt, dPsi/dr). NTU returns the gradient of the active branch and
/// splits evenly on the kink. Custom without a gradient falls back to
/// central differences.
template <typename Scalar>
std::array<Scalar, 2> psi_gradient(const TransferSpec<Scalar>& s, Arg<Scalar> t, Arg<Scalar> r) {
  detail::require_finite(t, r, "psi_gradient");
  switch (s.family) {
    case Family::TU: return {Scalar(1), Scalar(1)};
    case Family::NTU: {
      const Scalar a = t - s.alpha, b = r - s.gamma;
      if (a > b) return {Scalar(1), Scalar(0)};
      if (a < b) return {Scalar(0), Scalar(1)};
      return {Scalar(0.5), Scalar(0.5)};
    }
    case Family::LTU: return {s.lambda, s.zeta};
    case Family::ETU: {
      const Scalar w = logistic_weight((t - s.alpha) / s.tau, (r - s.gamma) / s.tau);
      return {w, 1 - w};
    }
    case Family::Custom: {
      if (s.gradient) return s.gradient(t, r);
      using std::abs;
      const Scalar ht = Scalar(1e-6) * std::max<Scalar>(1, abs(t));
      const Scalar hr = Scalar(1e-6) * std::max<Scalar>(1, abs(r));
      return {(s.psi(t + ht, r) - s.psi(t - ht, r)) / (2 * ht),
              (s.psi(t, r + hr) - s.psi(t, r - hr)) / (2 * hr)};
    }
  }
  return {Scalar(0), Scalar(0)};
}

// ---------------------------------------------------------------------------
// Matching function M_xy

/// log m for the root of Psi(T s + u, T s + v) = 0 in s = log m, found by
/// bracketing from s = 0 with doubling steps inside [-350, 350] followed by
/// bisection. Works for every family; Custom specs with a gradient get two
/// Newton polish steps.
template <typename Scalar>
Scalar log_m_xy_bisect(const TransferSpec<Scalar>& s, Arg<Scalar> T, Arg<Scalar> u,
                       Arg<Scalar> v, Arg<Scalar> rel_tol = Scalar(1e-13)) {
  using std::abs;
  detail::require_temperature(T);
  if (detail::is_sentinel_pair(u, v)) return -infinity<Scalar>();

  auto f = [&](Scalar x) { return psi_eval(s, T * x + u, T * x + v); };
  const Scalar bound = static_cast<Scalar>(kExponentClamp);
  auto unbounded = [&]() {
    std::ostringstream os;
    os << "no root of the pair equation with |log m| <= " << kExponentClamp << " for "
       << describe(s) << " at u=" << u << ", v=" << v << ", T=" << T;
    return UnboundedTransferError(os.str());
  };

  Scalar lo, hi;
  const Scalar f0 = f(Scalar(0));
  if (f0 == 0) return 0;
  if (f0 < 0) {
    lo = 0;
    hi = 1;
    while (f(hi) < 0) {
      if (hi >= bound) throw unbounded();
      lo = hi;
      hi = std::min(2 * hi, bound);
    }
  } else {
    hi = 0;
    lo = -1;
    while (f(lo) > 0) {
      if (lo <= -bound) throw unbounded();
      hi = lo;
      lo = std::max(2 * lo, -bound);
    }
  }

  while (hi - lo > rel_tol * std::max({Scalar(1), abs(lo), abs(hi)})) {
    const Scalar mid = lo + (hi - lo) / 2;
    if (mid <= lo || mid >= hi) break;
    const Scalar fm = f(mid);
    if (fm == 0) return mid;
    (fm < 0 ? lo : hi) = mid;
  }
  Scalar x = lo + (hi - lo) / 2;

  if (s.family == Family::Custom && s.gradient) {
    for (int k = 0; k < 2; ++k) {
      const Scalar fx = f(x);
      const auto g = s.gradient(T * x + u, T * x + v);
      const Scalar slope = T * (g[0] + g[1]);
      if (!(slope > 0)) break;
      const Scalar next = x - fx / slope;
      if (next < lo || next > hi || !(abs(f(next)) <= abs(fx))) break;
      x = next;
    }
  }
  return x;
}

/// log M_xy(u, v) for the root kernel. Closed forms for the built-in
/// families; Custom goes through log_m_xy_bisect. A +inf potential yields
/// -inf (zero mass).
template <typename Scalar>
Scalar log_m_xy(const TransferSpec<Scalar>& s, Arg<Scalar> T, Arg<Scalar> u, Arg<Scalar> v) {
  detail::require_temperature(T);
  if (detail::is_sentinel_pair(u, v)) return -infinity<Scalar>();
  switch (s.family) {
    case Family::TU: return (s.phi - u - v) / (2 * T);
    case Family::NTU: return std::min(s.alpha - u, s.gamma - v) / T;
    case Family::LTU:
      return (s.lambda * (s.alpha - u) + s.zeta * (s.gamma - v)) / (T * (s.lambda + s.zeta));
    case Family::ETU:
      return -(s.tau / T) * (log_add_exp((u - s.alpha) / s.tau, (v - s.gamma) / s.tau) -
                             std::numbers::ln2_v<Scalar>);
    case Family::Custom: return log_m_xy_bisect(s, T, u, v);
  }
  return 0;
}

template <typename Scalar>
Scalar m_xy(const TransferSpec<Scalar>& s, Arg<Scalar> T, Arg<Scalar> u, Arg<Scalar> v) {
  return clamped_exp(log_m_xy(s, T, u, v)).value;
}

/// M_x0(w) = M_0y(w) = exp(-w / T), with saturation reporting.
template <typename Scalar>
ClampedExp<Scalar> m_unmatched_checked(Scalar T, Arg<Scalar> w) {
  detail::require_temperature(T);
  using std::isnan;
  if (isnan(w) || w == -infinity<Scalar>()) throw DomainError("m_unmatched: invalid potential");
  return clamped_exp(-w / T);
}

template <typename Scalar>
Scalar m_unmatched(Scalar T, Arg<Scalar> w) {
  return m_unmatched_checked<Scalar>(T, w).value;
}

/// log of a pair mass and its partial derivatives in (u, v).
template <typename Scalar>
struct PairTerm {
  Scalar log_mass;
  Scalar d_u;
  Scalar d_v;
};

/// log M and its gradient for either kernel. For the root kernel the
/// gradient follows from the implicit function theorem,
/// d log m / du = -Psi_t / (T (Psi_t + Psi_r)) at the root point.
template <typename Scalar>
PairTerm<Scalar> pair_term(Kernel kernel, const TransferSpec<Scalar>& s, Arg<Scalar> T,
                           Arg<Scalar> u, Arg<Scalar> v) {
  detail::require_temperature(T);
  if (detail::is_sentinel_pair(u, v)) return {-infinity<Scalar>(), Scalar(0), Scalar(0)};
  if (kernel == Kernel::ExpPsi) {
    const auto g = psi_gradient(s, u, v);
    return {-psi_eval(s, u, v) / T, -g[0] / T, -g[1] / T};
  }
  const Scalar lm = log_m_xy(s, T, u, v);
  switch (s.family) {
    case Family::TU: return {lm, -1 / (2 * T), -1 / (2 * T)};
    case Family::NTU: {
      const Scalar a = s.alpha - u, b = s.gamma - v;
      if (a < b) return {lm, -1 / T, Scalar(0)};
      if (a > b) return {lm, Scalar(0), -1 / T};
      return {lm, -1 / (2 * T), -1 / (2 * T)};
    }
    case Family::LTU: {
      const Scalar d = T * (s.lambda + s.zeta);
      return {lm, -s.lambda / d, -s.zeta / d};
    }
    case Family::ETU: {
      const Scalar w = logistic_weight((u - s.alpha) / s.tau, (v - s.gamma) / s.tau);
      return {lm, -w / T, -(1 - w) / T};
    }
    case Family::Custom: {
      const auto g = psi_gradient(s, T * lm + u, T * lm + v);
      const Scalar d = T * (g[0] + g[1]);
      return {lm, -g[0] / d, -g[1] / d};
    }
  }
  return {lm, Scalar(0), Scalar(0)};
}

template <typename Scalar>
Scalar log_pair_mass(Kernel kernel, const TransferSpec<Scalar>& s, Arg<Scalar> T,
                     Arg<Scalar> u, Arg<Scalar> v) {
  if (kernel == Kernel::Root) return log_m_xy(s, T, u, v);
  detail::require_temperature(T);
  if (detail::is_sentinel_pair(u, v)) return -infinity<Scalar>();
  return -psi_eval(s, u, v) / T;
}

template <typename Scalar>
Scalar pair_mass(Kernel kernel, const TransferSpec<Scalar>& s, Arg<Scalar> T, Arg<Scalar> u,
                 Arg<Scalar> v) {
  return clamped_exp(log_pair_mass(kernel, s, T, u, v)).value;
}

// ---------------------------------------------------------------------------
// Closed-form aggregate masses at unit temperature

/// mu_xy as a function of the unmatched masses, T = 1.
template <typename Scalar>
Scalar closed_form_mu(const TransferSpec<Scalar>& s, Arg<Scalar> mu_x0, Arg<Scalar> mu_0y) {
  using std::exp, std::log, std::sqrt, std::pow, std::min;
  if (!(mu_x0 > 0) || !(mu_0y > 0))
    throw DomainError("closed_form_mu: unmatched masses must be positive");
  switch (s.family) {
    case Family::TU: return sqrt(mu_x0) * sqrt(mu_0y) * exp(s.phi / 2);
    case Family::NTU: return min(mu_x0 * exp(s.alpha), mu_0y * exp(s.gamma));
    case Family::LTU: {
      const Scalar w = s.lambda + s.zeta;
      return exp((s.lambda * s.alpha + s.zeta * s.gamma) / w) * pow(mu_x0, s.lambda / w) *
             pow(mu_0y, s.zeta / w);
    }
    case Family::ETU: {
      const Scalar a = (-s.alpha - log(mu_x0)) / s.tau;
      const Scalar b = (-s.gamma - log(mu_0y)) / s.tau;
      return exp(-s.tau * (log_add_exp(a, b) - std::numbers::ln2_v<Scalar>));
    }
    case Family::Custom: break;
  }
  throw UnsupportedFamilyError("closed_form_mu: no closed form for custom transfers");
}

}  // namespace itu
