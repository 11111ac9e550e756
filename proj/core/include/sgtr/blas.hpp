#pragma once

// Row-major dgemm wrapper. Thread count is pinned to 1 so results are
// reproducible regardless of the host configuration.

namespace sgtr::blas {

// c = alpha * op(a) * op(b) + beta * c, row-major.
// op(a) is n x k after optional transpose, op(b) is k x m, c is n x m.
void gemm(bool trans_a, bool trans_b, int n, int m, int k, double alpha,
          const double* a, const double* b, double beta, double* c);

}  // namespace sgtr::blas
