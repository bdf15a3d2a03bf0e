// AVX2+FMA variants of the dense kernels. Compiled with -mavx2 -mfma in a
// dedicated translation unit; only reached after a runtime cpuid check.

#include "tanglefl/simd/kernels.hpp"

#if defined(__x86_64__) || defined(__amd64__)

#include <immintrin.h>

#include <cstring>

namespace tanglefl::simd {
namespace {

double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
    }
    double sum = hsum(acc);
    for (; i < n; ++i) sum += x[i] * y[i];
    return sum;
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d r = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
        _mm256_storeu_pd(y + i, r);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_avx2(std::size_t n, double alpha, double* x) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) x[i] *= alpha;
}

// Broadcast A[i,l], FMA along the rows of B into the rows of C.
void row_fma(const double* brow, double* crow, double av, std::size_t n) {
    const __m256d a4 = _mm256_set1_pd(av);
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        __m256d r = _mm256_fmadd_pd(a4, _mm256_loadu_pd(brow + j),
                                    _mm256_loadu_pd(crow + j));
        _mm256_storeu_pd(crow + j, r);
    }
    for (; j < n; ++j) crow[j] += av * brow[j];
}

void matmul_nn_avx2(std::size_t m, std::size_t k, std::size_t n,
                    const double* a, const double* b, double* c) {
    std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            row_fma(b + l * n, c + i * n, a[i * k + l], n);
        }
    }
}

void matmul_tn_avx2(std::size_t r, std::size_t m, std::size_t n,
                    const double* a, const double* b, double* c) {
    std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t l = 0; l < r; ++l) {
        const double* arow = a + l * m;
        const double* brow = b + l * n;
        for (std::size_t i = 0; i < m; ++i) {
            row_fma(brow, c + i * n, arow[i], n);
        }
    }
}

void matmul_nt_avx2(std::size_t m, std::size_t k, std::size_t n,
                    const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            c[i * n + j] = dot_avx2(arow, b + j * k, k);
        }
    }
}

} // namespace

const KernelTable* avx2_kernels() {
    static const KernelTable table{
        "avx2",        dot_avx2,       axpy_avx2,
        scale_avx2,    matmul_nn_avx2, matmul_tn_avx2,
        matmul_nt_avx2,
    };
    return &table;
}

} // namespace tanglefl::simd

#endif // x86_64
