#pragma once

// Inner-loop arithmetic kernels with a scalar reference implementation and
// SIMD variants (AVX2 on x86-64, NEON on AArch64) selected once at runtime.
//
// Elementwise kernels (axpy, mul, relu, relu_backward, step_project) are
// bitwise identical across variants: every variant performs the same IEEE
// operations per element and the project is built with -ffp-contract=off.
// Reductions (dot, abs_sum) use a lane-striped summation order in the SIMD
// variants and agree with the scalar reference only to rounding.

#include <cstddef>
#include <string_view>

namespace mup {

/// Project-wide floating point type.
using Real = double;

namespace kernels {

enum class Isa { scalar, avx2, neon };

struct KernelTable {
    Isa isa;
    const char* name;

    Real (*dot)(const Real* a, const Real* b, std::size_t n);
    Real (*abs_sum)(const Real* x, std::size_t n);
    // y += alpha * x
    void (*axpy)(Real alpha, const Real* x, Real* y, std::size_t n);
    // out = a * b
    void (*mul)(const Real* a, const Real* b, Real* out, std::size_t n);
    // out = x > 0 ? x : 0
    void (*relu)(const Real* x, Real* out, std::size_t n);
    // dx = z > 0 ? dy : 0
    void (*relu_backward)(const Real* z, const Real* dy, Real* dx, std::size_t n);
    // x = clamp(x + beta * sign(g), lower, upper), sign(0) = 0
    void (*step_project)(Real* x, const Real* g, Real beta, const Real* lower, const Real* upper,
                         std::size_t n);
};

const KernelTable& scalar_table() noexcept;

/// Null when the variant is not compiled in or the CPU lacks the extension.
const KernelTable* avx2_table() noexcept;
const KernelTable* neon_table() noexcept;

/// The table used by every numeric routine in the library. Chosen on first use:
/// the MUP_KERNELS environment variable ("scalar", "avx2", "neon") wins when the
/// requested variant is available, otherwise the widest supported variant.
const KernelTable& active() noexcept;

/// Overrides the active table. Returns false if the variant is unavailable.
/// Not thread-safe; intended for process start-up and tests.
bool force(Isa isa) noexcept;

std::string_view to_string(Isa isa) noexcept;

}  // namespace kernels
}  // namespace mup
