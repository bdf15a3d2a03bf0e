#pragma once

// Dense double-precision kernels behind the FL math. A scalar reference
// implementation always exists; an AVX2+FMA variant is selected at runtime
// when the CPU supports it. Both variants are equivalence-tested against
// each other and against naive oracles.
//
// Matrix convention: row-major, C is fully overwritten.
//   matmul_nn: A[m x k] * B[k x n]      -> C[m x n]
//   matmul_tn: A[r x m]^T * B[r x n]    -> C[m x n]
//   matmul_nt: A[m x k] * B[n x k]^T    -> C[m x n]

#include <cstddef>
#include <string>
#include <string_view>

namespace tanglefl::simd {

struct KernelTable {
    const char* name;
    double (*dot)(const double* x, const double* y, std::size_t n);
    void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
    void (*scale)(std::size_t n, double alpha, double* x);
    void (*matmul_nn)(std::size_t m, std::size_t k, std::size_t n,
                      const double* a, const double* b, double* c);
    void (*matmul_tn)(std::size_t r, std::size_t m, std::size_t n,
                      const double* a, const double* b, double* c);
    void (*matmul_nt)(std::size_t m, std::size_t k, std::size_t n,
                      const double* a, const double* b, double* c);
};

const KernelTable& scalar_kernels();

// Null when the binary was built without AVX2 support.
const KernelTable* avx2_kernels();

// True when the running CPU reports AVX2 and FMA.
bool cpu_supports_avx2();

// "auto" picks the best supported variant. Throws std::invalid_argument on
// an unknown name and std::runtime_error when the variant is unsupported.
void select_backend(std::string_view name);

const KernelTable& active();
std::string active_name();

} // namespace tanglefl::simd
