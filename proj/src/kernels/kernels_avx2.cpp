// Compiled with -mavx2 only; dispatch guarantees these entry points are never
// reached on a CPU without AVX2.
#include "kernels_impl.hpp"

#if defined(MUP_HAVE_AVX2)

#include <immintrin.h>

namespace mup::kernels::detail {
namespace {

inline Real hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

Real dot_avx2(const Real* a, const Real* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
        acc1 = _mm256_add_pd(acc1,
                             _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    Real acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

Real abs_sum_avx2(const Real* x, std::size_t n) {
    const __m256d sign = _mm256_set1_pd(-0.0);
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_andnot_pd(sign, _mm256_loadu_pd(x + i)));
        acc1 = _mm256_add_pd(acc1, _mm256_andnot_pd(sign, _mm256_loadu_pd(x + i + 4)));
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_add_pd(acc0, _mm256_andnot_pd(sign, _mm256_loadu_pd(x + i)));
    Real acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] < 0 ? -x[i] : x[i];
    return acc;
}

void axpy_avx2(Real alpha, const Real* x, Real* y, std::size_t n) {
    const __m256d a = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(yv, _mm256_mul_pd(a, _mm256_loadu_pd(x + i))));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void mul_avx2(const Real* a, const Real* b, Real* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void relu_avx2(const Real* x, Real* out, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(out + i, _mm256_and_pd(_mm256_cmp_pd(v, zero, _CMP_GT_OQ), v));
    }
    for (; i < n; ++i) out[i] = x[i] > 0 ? x[i] : Real(0);
}

void relu_backward_avx2(const Real* z, const Real* dy, Real* dx, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d keep = _mm256_cmp_pd(_mm256_loadu_pd(z + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(dx + i, _mm256_and_pd(keep, _mm256_loadu_pd(dy + i)));
    }
    for (; i < n; ++i) dx[i] = z[i] > 0 ? dy[i] : Real(0);
}

void step_project_avx2(Real* x, const Real* g, Real beta, const Real* lower, const Real* upper,
                       std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    const __m256d pos = _mm256_set1_pd(beta);
    const __m256d neg = _mm256_set1_pd(-beta);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d gv = _mm256_loadu_pd(g + i);
        __m256d step = _mm256_or_pd(_mm256_and_pd(_mm256_cmp_pd(gv, zero, _CMP_GT_OQ), pos),
                                    _mm256_and_pd(_mm256_cmp_pd(gv, zero, _CMP_LT_OQ), neg));
        __m256d v = _mm256_add_pd(_mm256_loadu_pd(x + i), step);
        __m256d lo = _mm256_loadu_pd(lower + i);
        __m256d hi = _mm256_loadu_pd(upper + i);
        // Same comparisons as the scalar reference so signed zeros agree too.
        v = _mm256_blendv_pd(v, lo, _mm256_cmp_pd(v, lo, _CMP_LT_OQ));
        v = _mm256_blendv_pd(v, hi, _mm256_cmp_pd(v, hi, _CMP_GT_OQ));
        _mm256_storeu_pd(x + i, v);
    }
    if (i < n) kScalarTable.step_project(x + i, g + i, beta, lower + i, upper + i, n - i);
}

}  // namespace

const KernelTable kAvx2Table{
    Isa::avx2,        "avx2",           dot_avx2,           abs_sum_avx2, axpy_avx2,
    mul_avx2,         relu_avx2,        relu_backward_avx2, step_project_avx2,
};

}  // namespace mup::kernels::detail

#endif
