#include "qvnn/gemm.hpp"

#include "qvnn/error.hpp"

#ifdef QVNN_USE_BLAS
#include <cblas.h>
#endif

namespace qvnn {

#ifdef QVNN_USE_BLAS

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
                static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

const char* gemm_backend() { return "cblas"; }

#else

// Blocked fallback; slower than a tuned BLAS but keeps the library self-contained.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
    auto a_at = [&](std::size_t r, std::size_t s) { return trans_a ? a[s * lda + r] : a[r * lda + s]; };
    auto b_at = [&](std::size_t r, std::size_t s) { return trans_b ? b[s * ldb + r] : b[r * ldb + s]; };

    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t s = 0; s < n; ++s) c[r * ldc + s] *= beta;

    constexpr std::size_t kBlock = 64;
    for (std::size_t r0 = 0; r0 < m; r0 += kBlock) {
        const std::size_t r1 = std::min(r0 + kBlock, m);
        for (std::size_t p0 = 0; p0 < k; p0 += kBlock) {
            const std::size_t p1 = std::min(p0 + kBlock, k);
            for (std::size_t r = r0; r < r1; ++r) {
                for (std::size_t p = p0; p < p1; ++p) {
                    const double av = alpha * a_at(r, p);
                    if (av == 0.0) continue;
                    double* crow = c + r * ldc;
                    if (!trans_b) {
                        const double* brow = b + p * ldb;
                        for (std::size_t s = 0; s < n; ++s) crow[s] += av * brow[s];
                    } else {
                        for (std::size_t s = 0; s < n; ++s) crow[s] += av * b[s * ldb + p];
                    }
                }
            }
        }
    }
}

const char* gemm_backend() { return "builtin"; }

#endif

RealMatrix matmul(const RealMatrix& a, const RealMatrix& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimensions differ: " + std::to_string(a.cols) + " vs " +
                         std::to_string(b.rows));
    RealMatrix c(a.rows, b.cols);
    gemm(false, false, a.rows, b.cols, a.cols, 1.0, a.data.data(), a.cols, b.data.data(), b.cols, 0.0, c.data.data(),
         c.cols);
    return c;
}

}  // namespace qvnn
