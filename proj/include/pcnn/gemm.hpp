#pragma once

#include <cstddef>

// Row-major accumulate-into kernels: C += op(A) * op(B). Summation order is
// fixed, so results are reproducible run to run.
namespace pcnn::gemm {

// C[m,n] += A[m,k] * B[k,n]
inline void nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
               double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
inline void nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
               double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += ai[p] * bj[p];
        s1 += ai[p + 1] * bj[p + 1];
        s2 += ai[p + 2] * bj[p + 2];
        s3 += ai[p + 3] * bj[p + 3];
      }
      for (; p < k; ++p) s0 += ai[p] * bj[p];
      c[i * n + j] += (s0 + s1) + (s2 + s3);
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
inline void tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
               double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace pcnn::gemm
