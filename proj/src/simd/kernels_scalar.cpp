#include "tanglefl/simd/kernels.hpp"

#include <cstring>

namespace tanglefl::simd {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy_scalar(std::size_t n, double alpha, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(std::size_t n, double alpha, double* x) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void matmul_nn_scalar(std::size_t m, std::size_t k, std::size_t n,
                      const double* a, const double* b, double* c) {
    std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double av = a[i * k + l];
            const double* brow = b + l * n;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_tn_scalar(std::size_t r, std::size_t m, std::size_t n,
                      const double* a, const double* b, double* c) {
    std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t l = 0; l < r; ++l) {
        const double* arow = a + l * m;
        const double* brow = b + l * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt_scalar(std::size_t m, std::size_t k, std::size_t n,
                      const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            c[i * n + j] = dot_scalar(arow, b + j * k, k);
        }
    }
}

} // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table{
        "scalar",        dot_scalar,       axpy_scalar,
        scale_scalar,    matmul_nn_scalar, matmul_tn_scalar,
        matmul_nt_scalar,
    };
    return table;
}

} // namespace tanglefl::simd
