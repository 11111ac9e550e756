#include "sgtr/blas.hpp"

#include <cblas.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

extern "C" void openblas_set_num_threads(int);

namespace sgtr::blas {

namespace {
struct RuntimeInit {
  RuntimeInit() {
    openblas_set_num_threads(1);
#if defined(__GLIBC__)
    // the conv scratch buffers are tens of MB and are allocated and freed on
    // every step; keep them on the heap instead of mmap/munmap round-trips,
    // which otherwise dominate system time
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  }
};
const RuntimeInit g_init;
}  // namespace

void gemm(bool trans_a, bool trans_b, int n, int m, int k, double alpha,
          const double* a, const double* b, double beta, double* c) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, n, m, k, alpha, a,
              trans_a ? n : k, b, trans_b ? k : m, beta, c, m);
}

}  // namespace sgtr::blas
