#include "mine/nn/kernels.hpp"

#include <algorithm>
#include <vector>

namespace mine::nn::kernels {

namespace {

Eigen::Index chunk_count(Eigen::Index rows) { return (rows + kChunk - 1) / kChunk; }

void check_blocks(const RowMatrix& a, const RowMatrix& b, Eigen::Index block) {
  require(block > 0 && a.rows() % block == 0, ErrorKind::Shape, "block size must divide rows");
  require(a.rows() == b.rows(), ErrorKind::Shape, "block operands need equal row counts");
}

}  // namespace

RowMatrix matmul(const RowMatrix& a, const RowMatrix& b) {
  require(a.cols() == b.rows(), ErrorKind::Shape, "matmul: inner dimension mismatch");
  RowMatrix out(a.rows(), b.cols());
  const auto chunks = chunk_count(a.rows());
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const auto r0 = c * kChunk;
    const auto n = std::min(kChunk, a.rows() - r0);
    out.middleRows(r0, n).noalias() = a.middleRows(r0, n) * b;
  }
  return out;
}

RowMatrix matmul_tn(const RowMatrix& a, const RowMatrix& b) {
  require(a.rows() == b.rows(), ErrorKind::Shape, "matmul_tn: row count mismatch");
  const auto chunks = chunk_count(a.rows());
  std::vector<RowMatrix> partial(static_cast<std::size_t>(chunks));
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const auto r0 = c * kChunk;
    const auto n = std::min(kChunk, a.rows() - r0);
    partial[static_cast<std::size_t>(c)].noalias() =
        a.middleRows(r0, n).transpose() * b.middleRows(r0, n);
  }
  RowMatrix out = RowMatrix::Zero(a.cols(), b.cols());
  for (const auto& p : partial) out += p;
  return out;
}

RowMatrix matmul_nt(const RowMatrix& a, const RowMatrix& b) {
  require(a.cols() == b.cols(), ErrorKind::Shape, "matmul_nt: column count mismatch");
  RowMatrix out(a.rows(), b.rows());
  const auto chunks = chunk_count(a.rows());
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const auto r0 = c * kChunk;
    const auto n = std::min(kChunk, a.rows() - r0);
    out.middleRows(r0, n).noalias() = a.middleRows(r0, n) * b.transpose();
  }
  return out;
}

RowMatrix column_sums(const RowMatrix& a) {
  const auto chunks = chunk_count(a.rows());
  std::vector<RowMatrix> partial(static_cast<std::size_t>(chunks));
#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < chunks; ++c) {
    const auto r0 = c * kChunk;
    const auto n = std::min(kChunk, a.rows() - r0);
    partial[static_cast<std::size_t>(c)] = a.middleRows(r0, n).colwise().sum();
  }
  RowMatrix out = RowMatrix::Zero(1, a.cols());
  for (const auto& p : partial) out += p;
  return out;
}

RowMatrix block_matmul_nt(const RowMatrix& a, const RowMatrix& b, Eigen::Index block) {
  check_blocks(a, b, block);
  require(a.cols() == b.cols(), ErrorKind::Shape, "block_matmul_nt: column count mismatch");
  RowMatrix out(a.rows(), block);
  const auto blocks = a.rows() / block;
#pragma omp parallel for schedule(static)
  for (Eigen::Index k = 0; k < blocks; ++k) {
    out.middleRows(k * block, block).noalias() =
        a.middleRows(k * block, block) * b.middleRows(k * block, block).transpose();
  }
  return out;
}

RowMatrix block_matmul(const RowMatrix& a, const RowMatrix& b, Eigen::Index block) {
  check_blocks(a, b, block);
  require(a.cols() == block, ErrorKind::Shape, "block_matmul: left blocks must be square");
  RowMatrix out(a.rows(), b.cols());
  const auto blocks = a.rows() / block;
#pragma omp parallel for schedule(static)
  for (Eigen::Index k = 0; k < blocks; ++k) {
    out.middleRows(k * block, block).noalias() =
        a.middleRows(k * block, block) * b.middleRows(k * block, block);
  }
  return out;
}

RowMatrix block_matmul_tn(const RowMatrix& a, const RowMatrix& b, Eigen::Index block) {
  check_blocks(a, b, block);
  require(a.cols() == block, ErrorKind::Shape, "block_matmul_tn: left blocks must be square");
  RowMatrix out(a.rows(), b.cols());
  const auto blocks = a.rows() / block;
#pragma omp parallel for schedule(static)
  for (Eigen::Index k = 0; k < blocks; ++k) {
    out.middleRows(k * block, block).noalias() =
        a.middleRows(k * block, block).transpose() * b.middleRows(k * block, block);
  }
  return out;
}

RowMatrix matmul_serial(const RowMatrix& a, const RowMatrix& b) {
  require(a.cols() == b.rows(), ErrorKind::Shape, "matmul: inner dimension mismatch");
  RowMatrix out = RowMatrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (Eigen::Index j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

RowMatrix matmul_tn_serial(const RowMatrix& a, const RowMatrix& b) {
  require(a.rows() == b.rows(), ErrorKind::Shape, "matmul_tn: row count mismatch");
  RowMatrix out = RowMatrix::Zero(a.cols(), b.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index i = 0; i < a.cols(); ++i) {
      const double ari = a(r, i);
      for (Eigen::Index j = 0; j < b.cols(); ++j) out(i, j) += ari * b(r, j);
    }
  return out;
}

RowMatrix matmul_nt_serial(const RowMatrix& a, const RowMatrix& b) {
  require(a.cols() == b.cols(), ErrorKind::Shape, "matmul_nt: column count mismatch");
  RowMatrix out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  return out;
}

RowMatrix block_matmul_nt_serial(const RowMatrix& a, const RowMatrix& b, Eigen::Index block) {
  check_blocks(a, b, block);
  RowMatrix out(a.rows(), block);
  for (Eigen::Index k = 0; k < a.rows() / block; ++k)
    for (Eigen::Index i = 0; i < block; ++i)
      for (Eigen::Index j = 0; j < block; ++j) {
        double s = 0.0;
        for (Eigen::Index c = 0; c < a.cols(); ++c) s += a(k * block + i, c) * b(k * block + j, c);
        out(k * block + i, j) = s;
      }
  return out;
}

}  // namespace mine::nn::kernels
