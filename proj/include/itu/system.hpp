#pragma once

// Aggregate market and the nonlinear Bernstein-Schroedinger system
//
//   M_x0(u_x) + sum_y M_xy(u_x, v_y) = n_x
//   M_0y(v_y) + sum_x M_xy(u_x, v_y) = m_y
//
// The balanced variant drops the unmatched terms.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "itu/errors.hpp"
#include "itu/transfer.hpp"
#include "itu/types.hpp"

namespace itu {

/// Immutable market description. Transfers are either one global spec or a
/// full row-major X-by-Y table.
template <typename Scalar>
class Market {
 public:
  Market(std::vector<std::string> x_types, std::vector<std::string> y_types, Vector<Scalar> n,
         Vector<Scalar> m, std::vector<TransferSpec<Scalar>> transfers, Scalar temperature,
         bool balanced = false, Kernel kernel = Kernel::Root)
      : x_types_(std::move(x_types)),
        y_types_(std::move(y_types)),
        n_(std::move(n)),
        m_(std::move(m)),
        transfers_(std::move(transfers)),
        temperature_(temperature),
        balanced_(balanced),
        kernel_(kernel) {
    check();
  }

  /// Market with one transfer spec shared by every pair.
  Market(std::vector<std::string> x_types, std::vector<std::string> y_types, Vector<Scalar> n,
         Vector<Scalar> m, const TransferSpec<Scalar>& global, Scalar temperature,
         bool balanced = false, Kernel kernel = Kernel::Root)
      : Market(std::move(x_types), std::move(y_types), std::move(n), std::move(m),
               std::vector<TransferSpec<Scalar>>{global}, temperature, balanced, kernel) {}

  Index num_x() const { return static_cast<Index>(x_types_.size()); }
  Index num_y() const { return static_cast<Index>(y_types_.size()); }
  const std::vector<std::string>& x_types() const { return x_types_; }
  const std::vector<std::string>& y_types() const { return y_types_; }
  const Vector<Scalar>& n() const { return n_; }
  const Vector<Scalar>& m() const { return m_; }
  Scalar temperature() const { return temperature_; }
  bool balanced() const { return balanced_; }
  Kernel kernel() const { return kernel_; }
  bool uniform_transfers() const { return transfers_.size() == 1; }
  const std::vector<TransferSpec<Scalar>>& transfers() const { return transfers_; }

  const TransferSpec<Scalar>& spec(Index x, Index y) const {
    return transfers_.size() == 1 ? transfers_.front()
                                  : transfers_[static_cast<std::size_t>(x * num_y() + y)];
  }

  /// True when every pair in row x (or column y) is TU.
  bool row_is_tu(Index x) const {
    for (Index y = 0; y < num_y(); ++y)
      if (spec(x, y).family != Family::TU) return false;
    return true;
  }
  bool column_is_tu(Index y) const {
    for (Index x = 0; x < num_x(); ++x)
      if (spec(x, y).family != Family::TU) return false;
    return true;
  }
  bool all_of_family(Family f) const {
    return std::all_of(transfers_.begin(), transfers_.end(),
                       [f](const auto& s) { return s.family == f; });
  }
  bool smooth() const {
    return std::all_of(transfers_.begin(), transfers_.end(),
                       [](const auto& s) { return s.smooth(); });
  }

  Index x_index(const std::string& label) const { return find(x_types_, label, "x"); }
  Index y_index(const std::string& label) const { return find(y_types_, label, "y"); }

  Market with_temperature(Scalar T) const {
    return Market(x_types_, y_types_, n_, m_, transfers_, T, balanced_, kernel_);
  }

  /// Reorders x types: the new i-th type is the old `order[i]`-th.
  Market permuted_x(const std::vector<Index>& order) const {
    std::vector<std::string> labels;
    Vector<Scalar> n(num_x());
    for (Index i = 0; i < num_x(); ++i) {
      labels.push_back(x_types_[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
      n[i] = n_[order[static_cast<std::size_t>(i)]];
    }
    std::vector<TransferSpec<Scalar>> table = transfers_;
    if (!uniform_transfers()) {
      for (Index i = 0; i < num_x(); ++i)
        for (Index y = 0; y < num_y(); ++y)
          table[static_cast<std::size_t>(i * num_y() + y)] =
              spec(order[static_cast<std::size_t>(i)], y);
    }
    return Market(std::move(labels), y_types_, std::move(n), m_, std::move(table),
                  temperature_, balanced_, kernel_);
  }

 private:
  static Index find(const std::vector<std::string>& v, const std::string& label,
                    const char* side) {
    auto it = std::find(v.begin(), v.end(), label);
    if (it == v.end())
      throw PreconditionError(std::string("unknown ") + side + " type '" + label + "'");
    return static_cast<Index>(it - v.begin());
  }

  void check() const {
    using std::abs, std::isfinite;
    if (x_types_.empty() || y_types_.empty())
      throw DomainError("market needs at least one x type and one y type");
    if (n_.size() != num_x() || m_.size() != num_y())
      throw DomainError("mass vectors do not match the number of types");
    for (Index i = 0; i < n_.size(); ++i)
      if (!(n_[i] > 0) || !isfinite(n_[i]))
        throw DomainError("n[" + x_types_[static_cast<std::size_t>(i)] + "] must be positive");
    for (Index i = 0; i < m_.size(); ++i)
      if (!(m_[i] > 0) || !isfinite(m_[i]))
        throw DomainError("m[" + y_types_[static_cast<std::size_t>(i)] + "] must be positive");
    if (transfers_.size() != 1 &&
        transfers_.size() != static_cast<std::size_t>(num_x() * num_y()))
      throw DomainError("transfer table must hold one spec or |X|*|Y| specs");
    for (const auto& s : transfers_) validate(s);
    detail::require_temperature(temperature_);
    if (balanced_) {
      const Scalar sn = n_.sum(), sm = m_.sum();
      if (abs(sn - sm) > Scalar(1e-12) * std::max(abs(sn), abs(sm))) {
        std::ostringstream os;
        os.precision(17);
        os << "balanced market requires equal total masses: sum n = " << sn
           << ", sum m = " << sm;
        throw DomainError(os.str());
      }
    }
  }

  std::vector<std::string> x_types_;
  std::vector<std::string> y_types_;
  Vector<Scalar> n_;
  Vector<Scalar> m_;
  std::vector<TransferSpec<Scalar>> transfers_;
  Scalar temperature_;
  bool balanced_;
  Kernel kernel_;
};

template <typename Scalar>
struct Potentials {
  Vector<Scalar> u;
  Vector<Scalar> v;
};

template <typename Scalar>
struct Matching {
  Matrix<Scalar> mu;
  Vector<Scalar> mu_x0;
  Vector<Scalar> mu_0y;
};

namespace detail {

template <typename Scalar>
void require_shape(const Market<Scalar>& market, const Potentials<Scalar>& pot) {
  if (pot.u.size() != market.num_x() || pot.v.size() != market.num_y())
    throw PreconditionError("potentials do not match the market dimensions");
  if (!pot.u.allFinite() || !pot.v.allFinite())
    throw PreconditionError("potentials must be finite");
}

}  // namespace detail

/// Pair masses M_xy(u_x, v_y) for the whole market.
template <typename Scalar>
Matrix<Scalar> pair_masses(const Market<Scalar>& market, const Vector<Scalar>& u,
                           const Vector<Scalar>& v) {
  Matrix<Scalar> M(market.num_x(), market.num_y());
  const Scalar T = market.temperature();
  for (Index y = 0; y < market.num_y(); ++y)
    for (Index x = 0; x < market.num_x(); ++x)
      M(x, y) = pair_mass(market.kernel(), market.spec(x, y), T, u[x], v[y]);
  return M;
}

/// x- and y-margin violations of the system at the given potentials.
/// Sums run in a fixed order, so results are reproducible bit for bit.
template <typename Scalar>
std::pair<Vector<Scalar>, Vector<Scalar>> residual(const Market<Scalar>& market,
                                                   const Potentials<Scalar>& pot) {
  detail::require_shape(market, pot);
  const Scalar T = market.temperature();
  const Matrix<Scalar> M = pair_masses(market, pot.u, pot.v);
  Vector<Scalar> rx(market.num_x()), ry(market.num_y());
  for (Index x = 0; x < market.num_x(); ++x) {
    Scalar s = market.balanced() ? Scalar(0) : m_unmatched(T, pot.u[x]);
    for (Index y = 0; y < market.num_y(); ++y) s += M(x, y);
    rx[x] = s - market.n()[x];
  }
  for (Index y = 0; y < market.num_y(); ++y) {
    Scalar s = market.balanced() ? Scalar(0) : m_unmatched(T, pot.v[y]);
    for (Index x = 0; x < market.num_x(); ++x) s += M(x, y);
    ry[y] = s - market.m()[y];
  }
  return {rx, ry};
}

/// max over margins of |violation| / margin mass.
template <typename Scalar>
Scalar scaled_residual(const Market<Scalar>& market, const Potentials<Scalar>& pot) {
  const auto [rx, ry] = residual(market, pot);
  const Scalar a = (rx.array().abs() / market.n().array()).maxCoeff();
  const Scalar b = (ry.array().abs() / market.m().array()).maxCoeff();
  return std::max(a, b);
}

template <typename Scalar>
Matching<Scalar> matching_from_potentials(const Market<Scalar>& market,
                                          const Potentials<Scalar>& pot) {
  detail::require_shape(market, pot);
  const Scalar T = market.temperature();
  Matching<Scalar> out;
  out.mu = pair_masses(market, pot.u, pot.v);
  out.mu_x0 = Vector<Scalar>::Zero(market.num_x());
  out.mu_0y = Vector<Scalar>::Zero(market.num_y());
  if (!market.balanced()) {
    for (Index x = 0; x < market.num_x(); ++x) out.mu_x0[x] = m_unmatched(T, pot.u[x]);
    for (Index y = 0; y < market.num_y(); ++y) out.mu_0y[y] = m_unmatched(T, pot.v[y]);
  }
  return out;
}

}  // namespace itu
