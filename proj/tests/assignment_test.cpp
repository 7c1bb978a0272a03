#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include "itu/assignment.hpp"

using namespace itu;

namespace {

// Best value over all partial matchings by exhaustive search.
double brute_force(const MatrixXd& w, bool allow_unmatched, Index i, std::vector<bool>& used) {
  if (i == w.rows()) {
    if (allow_unmatched) return 0;
    const Index matched = std::count(used.begin(), used.end(), true);
    return matched == std::min(w.rows(), w.cols()) ? 0 : -std::numeric_limits<double>::infinity();
  }
  double best = brute_force(w, allow_unmatched, i + 1, used);
  for (Index j = 0; j < w.cols(); ++j) {
    if (used[static_cast<std::size_t>(j)]) continue;
    if (allow_unmatched && !(w(i, j) > 0)) continue;
    used[static_cast<std::size_t>(j)] = true;
    best = std::max(best, w(i, j) + brute_force(w, allow_unmatched, i + 1, used));
    used[static_cast<std::size_t>(j)] = false;
  }
  return best;
}

double brute_force(const MatrixXd& w, bool allow_unmatched) {
  std::vector<bool> used(static_cast<std::size_t>(w.cols()), false);
  return brute_force(w, allow_unmatched, 0, used);
}

void expect_consistent(const MatrixXd& w, const Assignment& a) {
  double total = 0;
  std::vector<bool> used(static_cast<std::size_t>(w.cols()), false);
  ASSERT_EQ(a.partner.size(), static_cast<std::size_t>(w.rows()));
  for (Index i = 0; i < w.rows(); ++i) {
    const int j = a.partner[static_cast<std::size_t>(i)];
    if (j < 0) continue;
    EXPECT_FALSE(used[static_cast<std::size_t>(j)]);
    used[static_cast<std::size_t>(j)] = true;
    total += w(i, j);
  }
  EXPECT_NEAR(total, a.value, 1e-12);
}

}  // namespace

TEST(Assignment, DiagonalExample) {
  MatrixXd w(2, 2);
  w << 4, 0, 0, 4;
  const auto a = max_weight_assignment(w, true);
  EXPECT_EQ(a.partner, (std::vector<int>{0, 1}));
  EXPECT_DOUBLE_EQ(a.value, 8);
}

TEST(Assignment, AllNegativeLeavesEveryoneSingle) {
  MatrixXd w = -MatrixXd::Ones(3, 2);
  const auto a = max_weight_assignment(w, true);
  EXPECT_EQ(a.partner, (std::vector<int>{-1, -1, -1}));
  EXPECT_EQ(a.value, 0);
}

TEST(Assignment, ForcedMatchingTakesNegativePairs) {
  MatrixXd w(2, 2);
  w << -1, -5, -5, -2;
  const auto a = max_weight_assignment(w, false);
  EXPECT_EQ(a.partner, (std::vector<int>{0, 1}));
  EXPECT_DOUBLE_EQ(a.value, -3);
}

TEST(Assignment, MinusInfinityMarksForbiddenPairs) {
  const double ninf = -std::numeric_limits<double>::infinity();
  MatrixXd w(2, 2);
  w << ninf, 3, ninf, 1;
  const auto a = max_weight_assignment(w, true);
  EXPECT_EQ(a.partner, (std::vector<int>{1, -1}));
  EXPECT_DOUBLE_EQ(a.value, 3);
  EXPECT_THROW(max_weight_assignment(w, false), std::exception);
}

TEST(Assignment, SymmetricTieIsDeterministic) {
  const MatrixXd w = MatrixXd::Constant(2, 2, 1.0);
  const auto a = max_weight_assignment(w, true);
  const auto b = max_weight_assignment(w, true);
  EXPECT_EQ(a.partner, b.partner);
  EXPECT_DOUBLE_EQ(a.value, 2);
}

TEST(Assignment, MatchesBruteForce) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> weight(-3, 5);
  for (int trial = 0; trial < 300; ++trial) {
    const Index rows = 1 + static_cast<Index>(rng() % 6), cols = 1 + static_cast<Index>(rng() % 6);
    MatrixXd w(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) w(i, j) = weight(rng);
    for (bool allow : {true, false}) {
      const auto a = max_weight_assignment(w, allow);
      expect_consistent(w, a);
      EXPECT_NEAR(a.value, brute_force(w, allow), 1e-10) << rows << "x" << cols;
      if (!allow) {
        const auto matched =
            std::count_if(a.partner.begin(), a.partner.end(), [](int j) { return j >= 0; });
        EXPECT_EQ(matched, std::min(rows, cols));
      }
    }
  }
}
