#include "kernels_impl.hpp"

#if defined(MUP_HAVE_NEON)

#include <arm_neon.h>

namespace mup::kernels::detail {
namespace {

Real dot_neon(const Real* a, const Real* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vaddq_f64(acc0, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
        acc1 = vaddq_f64(acc1, vmulq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2)));
    }
    Real acc = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

Real abs_sum_neon(const Real* x, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vaddq_f64(acc0, vabsq_f64(vld1q_f64(x + i)));
        acc1 = vaddq_f64(acc1, vabsq_f64(vld1q_f64(x + i + 2)));
    }
    Real acc = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) acc += x[i] < 0 ? -x[i] : x[i];
    return acc;
}

void axpy_neon(Real alpha, const Real* x, Real* y, std::size_t n) {
    const float64x2_t a = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(a, vld1q_f64(x + i))));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void mul_neon(const Real* a, const Real* b, Real* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void relu_neon(const Real* x, Real* out, std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t v = vld1q_f64(x + i);
        uint64x2_t keep = vcgtq_f64(v, zero);
        vst1q_f64(out + i, vreinterpretq_f64_u64(vandq_u64(keep, vreinterpretq_u64_f64(v))));
    }
    for (; i < n; ++i) out[i] = x[i] > 0 ? x[i] : Real(0);
}

void relu_backward_neon(const Real* z, const Real* dy, Real* dx, std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        uint64x2_t keep = vcgtq_f64(vld1q_f64(z + i), zero);
        vst1q_f64(dx + i,
                  vreinterpretq_f64_u64(vandq_u64(keep, vreinterpretq_u64_f64(vld1q_f64(dy + i)))));
    }
    for (; i < n; ++i) dx[i] = z[i] > 0 ? dy[i] : Real(0);
}

void step_project_neon(Real* x, const Real* g, Real beta, const Real* lower, const Real* upper,
                       std::size_t n) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    const float64x2_t pos = vdupq_n_f64(beta);
    const float64x2_t neg = vdupq_n_f64(-beta);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t gv = vld1q_f64(g + i);
        uint64x2_t up = vcgtq_f64(gv, zero);
        uint64x2_t down = vcltq_f64(gv, zero);
        float64x2_t step = vreinterpretq_f64_u64(
            vorrq_u64(vandq_u64(up, vreinterpretq_u64_f64(pos)),
                      vandq_u64(down, vreinterpretq_u64_f64(neg))));
        float64x2_t v = vaddq_f64(vld1q_f64(x + i), step);
        float64x2_t lo = vld1q_f64(lower + i);
        float64x2_t hi = vld1q_f64(upper + i);
        v = vbslq_f64(vcltq_f64(v, lo), lo, v);
        v = vbslq_f64(vcgtq_f64(v, hi), hi, v);
        vst1q_f64(x + i, v);
    }
    if (i < n) kScalarTable.step_project(x + i, g + i, beta, lower + i, upper + i, n - i);
}

}  // namespace

const KernelTable kNeonTable{
    Isa::neon,        "neon",           dot_neon,           abs_sum_neon, axpy_neon,
    mul_neon,         relu_neon,        relu_backward_neon, step_project_neon,
};

}  // namespace mup::kernels::detail

#endif
