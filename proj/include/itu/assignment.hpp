#pragma once

#include <vector>

#include "itu/types.hpp"

namespace itu {

struct Assignment {
  std::vector<int> partner;  // partner[row] = column, or -1 when unmatched
  double value = 0;
};

/// Exact maximum-weight bipartite matching (Hungarian method, O(n^3)).
///
/// With `allow_unmatched`, pairs of weight <= 0 (including -inf) are never
/// used and any row or column may stay single. Without it, the matching
/// has min(rows, cols) pairs and every weight must be finite.
/// Ties resolve deterministically.
Assignment max_weight_assignment(const MatrixXd& weight, bool allow_unmatched);

}  // namespace itu
