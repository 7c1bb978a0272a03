#include "itu/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "itu/errors.hpp"

namespace itu {

namespace {

// Minimum-cost perfect assignment on a square matrix via shortest
// augmenting paths with dual potentials. Returns row -> column.
std::vector<int> min_cost_square(const MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is the virtual root of each augmentation.
  std::vector<double> row_pot(n + 1, 0.0), col_pot(n + 1, 0.0);
  std::vector<int> col_owner(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    col_owner[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = col_owner[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - row_pot[i0] - col_pot[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          row_pot[col_owner[j]] += delta;
          col_pot[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (col_owner[j0] != 0);
    do {
      const int j1 = way[j0];
      col_owner[j0] = col_owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j)
    if (col_owner[j] > 0) row_to_col[col_owner[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace

Assignment max_weight_assignment(const MatrixXd& weight, bool allow_unmatched) {
  const Index rows = weight.rows(), cols = weight.cols();
  Assignment out;
  out.partner.assign(static_cast<std::size_t>(rows), -1);
  if (rows == 0 || cols == 0) return out;
  if (!allow_unmatched && !weight.allFinite())
    throw DomainError("assignment weights must be finite");

  const Index n = std::max(rows, cols);
  // Padding cells cost 0; forbidden cells cost the same as staying single.
  MatrixXd cost = MatrixXd::Zero(n, n);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) {
      const double w = weight(i, j);
      cost(i, j) = allow_unmatched ? -std::max(w, 0.0) : -w;
      if (std::isnan(cost(i, j))) throw DomainError("assignment weight is NaN");
    }
  const auto row_to_col = min_cost_square(cost);
  for (Index i = 0; i < rows; ++i) {
    const int j = row_to_col[static_cast<std::size_t>(i)];
    if (j < 0 || j >= cols) continue;
    if (allow_unmatched && !(weight(i, j) > 0)) continue;
    out.partner[static_cast<std::size_t>(i)] = j;
    out.value += weight(i, j);
  }
  return out;
}

}  // namespace itu
