#pragma once

#include "mine/common.hpp"

#include <vector>

namespace mine::ot {

struct Assignment {
  std::vector<int> row_to_col;
  double cost = 0.0;
};

// Exact minimum-cost perfect matching on a square cost matrix, O(n^3)
// shortest augmenting path with row/column potentials.
Assignment solve_assignment(const RowMatrix& cost);

// cost(i, j) = ||a_i - b_j||^2. Rows are split into fixed chunks across
// OpenMP threads, so the result does not depend on the thread count.
RowMatrix squared_distances(const RowMatrix& a, const RowMatrix& b);
// Single-threaded reference for squared_distances.
RowMatrix squared_distances_serial(const RowMatrix& a, const RowMatrix& b);

}  // namespace mine::ot
