#include "mine/assignment.hpp"

#include <limits>

namespace mine::ot {

Assignment solve_assignment(const RowMatrix& cost) {
  require(cost.rows() == cost.cols(), ErrorKind::Shape, "assignment: cost matrix must be square");
  require(cost.allFinite(), ErrorKind::InvalidInput, "assignment: non-finite cost");
  const int n = static_cast<int>(cost.rows());
  Assignment out;
  if (n == 0) return out;

  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is a virtual source.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);

  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  out.row_to_col.assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) out.row_to_col[static_cast<std::size_t>(match[j] - 1)] = j - 1;
  for (int i = 0; i < n; ++i) out.cost += cost(i, out.row_to_col[static_cast<std::size_t>(i)]);
  return out;
}

namespace {

constexpr Eigen::Index kRowChunk = 32;

void distance_rows(const RowMatrix& a, const RowMatrix& b, RowMatrix& out, Eigen::Index begin,
                   Eigen::Index end) {
  for (Eigen::Index i = begin; i < end; ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) {
        const double diff = a(i, k) - b(j, k);
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
}

}  // namespace

RowMatrix squared_distances(const RowMatrix& a, const RowMatrix& b) {
  require(a.cols() == b.cols(), ErrorKind::Shape, "squared_distances: dimension mismatch");
  RowMatrix out(a.rows(), b.rows());
  const Eigen::Index chunks = (a.rows() + kRowChunk - 1) / kRowChunk;
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    distance_rows(a, b, out, c * kRowChunk, std::min(a.rows(), (c + 1) * kRowChunk));
  }
  return out;
}

RowMatrix squared_distances_serial(const RowMatrix& a, const RowMatrix& b) {
  require(a.cols() == b.cols(), ErrorKind::Shape, "squared_distances: dimension mismatch");
  RowMatrix out(a.rows(), b.rows());
  distance_rows(a, b, out, 0, a.rows());
  return out;
}

}  // namespace mine::ot
