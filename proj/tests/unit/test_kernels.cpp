#include "mine/nn/kernels.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <omp.h>

using namespace mine;
namespace k = mine::nn::kernels;

namespace {

template <class F>
void for_thread_counts(F&& f) {
  const int saved = omp_get_max_threads();
  for (int t : {1, 2, 4, 7}) {
    omp_set_num_threads(t);
    f(t);
  }
  omp_set_num_threads(saved);
}

}  // namespace

TEST_CASE("matmul family matches the serial references") {
  Rng r(1);
  const RowMatrix a = test::random_matrix(333, 17, r), b = test::random_matrix(17, 9, r);
  const RowMatrix c = test::random_matrix(333, 9, r);
  CHECK((k::matmul(a, b) - k::matmul_serial(a, b)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((k::matmul_tn(a, c) - k::matmul_tn_serial(a, c)).cwiseAbs().maxCoeff() < 1e-11);
  const RowMatrix d = test::random_matrix(40, 17, r);
  CHECK((k::matmul_nt(a, d) - k::matmul_nt_serial(a, d)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((k::column_sums(c) - c.colwise().sum()).cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("block products match per-block dense products") {
  Rng r(2);
  const Eigen::Index S = 11, B = 13;
  const RowMatrix a = test::random_matrix(B * S, 5, r), b = test::random_matrix(B * S, 5, r);
  const RowMatrix p = test::random_matrix(B * S, S, r);
  const RowMatrix nt = k::block_matmul_nt(a, b, S);
  const RowMatrix nn = k::block_matmul(p, a, S);
  const RowMatrix tn = k::block_matmul_tn(p, a, S);
  CHECK((nt - k::block_matmul_nt_serial(a, b, S)).cwiseAbs().maxCoeff() < 1e-12);
  for (Eigen::Index blk = 0; blk < B; ++blk) {
    const RowMatrix ab = a.middleRows(blk * S, S) * b.middleRows(blk * S, S).transpose();
    CHECK((nt.middleRows(blk * S, S) - ab).cwiseAbs().maxCoeff() < 1e-12);
    const RowMatrix pa = p.middleRows(blk * S, S) * a.middleRows(blk * S, S);
    CHECK((nn.middleRows(blk * S, S) - pa).cwiseAbs().maxCoeff() < 1e-12);
    const RowMatrix pta = p.middleRows(blk * S, S).transpose() * a.middleRows(blk * S, S);
    CHECK((tn.middleRows(blk * S, S) - pta).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("kernels are bit-identical for any thread count") {
  Rng r(3);
  const RowMatrix a = test::random_matrix(1000, 32, r), b = test::random_matrix(32, 64, r);
  const RowMatrix c = test::random_matrix(1000, 64, r);
  RowMatrix ref_mm, ref_tn, ref_cs, ref_bnt;
  for_thread_counts([&](int t) {
    const RowMatrix mm = k::matmul(a, b), tn = k::matmul_tn(a, c), cs = k::column_sums(c);
    const RowMatrix bnt = k::block_matmul_nt(a, a, 10);
    if (t == 1) {
      ref_mm = mm;
      ref_tn = tn;
      ref_cs = cs;
      ref_bnt = bnt;
    } else {
      CHECK(mm == ref_mm);
      CHECK(tn == ref_tn);
      CHECK(cs == ref_cs);
      CHECK(bnt == ref_bnt);
    }
  });
}

TEST_CASE("kernels reject mismatched shapes") {
  const RowMatrix a = RowMatrix::Zero(4, 3), b = RowMatrix::Zero(2, 3);
  CHECK_THROWS_AS(k::matmul(a, b), Error);
  CHECK_THROWS_AS(k::block_matmul_nt(a, a, 3), Error);
}
