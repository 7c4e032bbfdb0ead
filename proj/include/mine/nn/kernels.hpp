#pragma once

#include "mine/common.hpp"

namespace mine::nn::kernels {

// Row-chunked OpenMP kernels. Work is split into fixed chunks of kChunk rows
// and partial reductions are combined in chunk order, so results are
// bit-identical for any thread count.
inline constexpr Eigen::Index kChunk = 64;

RowMatrix matmul(const RowMatrix& a, const RowMatrix& b);     // a * b
RowMatrix matmul_tn(const RowMatrix& a, const RowMatrix& b);  // a^T * b
RowMatrix matmul_nt(const RowMatrix& a, const RowMatrix& b);  // a * b^T
RowMatrix column_sums(const RowMatrix& a);                    // 1 x cols

// Per-block products for stacked blocks of `block` rows: block i of the
// result is A_i * B_i^T (block x block) or A_i * B_i (block x cols).
RowMatrix block_matmul_nt(const RowMatrix& a, const RowMatrix& b, Eigen::Index block);
RowMatrix block_matmul(const RowMatrix& a, const RowMatrix& b, Eigen::Index block);
// Block i of the result is A_i^T * B_i.
RowMatrix block_matmul_tn(const RowMatrix& a, const RowMatrix& b, Eigen::Index block);

// Naive single-threaded references.
RowMatrix matmul_serial(const RowMatrix& a, const RowMatrix& b);
RowMatrix matmul_tn_serial(const RowMatrix& a, const RowMatrix& b);
RowMatrix matmul_nt_serial(const RowMatrix& a, const RowMatrix& b);
RowMatrix block_matmul_nt_serial(const RowMatrix& a, const RowMatrix& b, Eigen::Index block);

}  // namespace mine::nn::kernels
