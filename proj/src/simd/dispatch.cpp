#include "tanglefl/simd/kernels.hpp"

#include <atomic>
#include <stdexcept>

namespace tanglefl::simd {

#if !defined(TANGLEFL_HAVE_AVX2_BUILD)
const KernelTable* avx2_kernels() { return nullptr; }
#endif

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(__amd64__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

const KernelTable* detect_best() {
    if (const KernelTable* t = avx2_kernels(); t != nullptr && cpu_supports_avx2()) {
        return t;
    }
    return &scalar_kernels();
}

std::atomic<const KernelTable*> g_active{nullptr};

const KernelTable* active_ptr() {
    const KernelTable* t = g_active.load(std::memory_order_acquire);
    if (t == nullptr) {
        t = detect_best();
        g_active.store(t, std::memory_order_release);
    }
    return t;
}

} // namespace

void select_backend(std::string_view name) {
    if (name == "auto") {
        g_active.store(detect_best(), std::memory_order_release);
        return;
    }
    if (name == "scalar") {
        g_active.store(&scalar_kernels(), std::memory_order_release);
        return;
    }
    if (name == "avx2") {
        const KernelTable* t = avx2_kernels();
        if (t == nullptr || !cpu_supports_avx2()) {
            throw std::runtime_error("avx2 kernels not supported on this machine");
        }
        g_active.store(t, std::memory_order_release);
        return;
    }
    throw std::invalid_argument("unknown kernel backend: " + std::string(name));
}

const KernelTable& active() { return *active_ptr(); }

std::string active_name() { return active_ptr()->name; }

} // namespace tanglefl::simd
