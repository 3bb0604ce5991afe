#include "kernels_impl.hpp"

namespace mup::kernels::detail {
namespace {

Real dot_scalar(const Real* a, const Real* b, std::size_t n) {
    Real acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

Real abs_sum_scalar(const Real* x, std::size_t n) {
    Real acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] < 0 ? -x[i] : x[i];
    return acc;
}

void axpy_scalar(Real alpha, const Real* x, Real* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void mul_scalar(const Real* a, const Real* b, Real* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void relu_scalar(const Real* x, Real* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0 ? x[i] : Real(0);
}

void relu_backward_scalar(const Real* z, const Real* dy, Real* dx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = z[i] > 0 ? dy[i] : Real(0);
}

void step_project_scalar(Real* x, const Real* g, Real beta, const Real* lower, const Real* upper,
                         std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        Real step = g[i] > 0 ? beta : (g[i] < 0 ? -beta : Real(0));
        Real v = x[i] + step;
        v = v < lower[i] ? lower[i] : v;
        v = v > upper[i] ? upper[i] : v;
        x[i] = v;
    }
}

}  // namespace

const KernelTable kScalarTable{
    Isa::scalar,        "scalar",           dot_scalar,         abs_sum_scalar, axpy_scalar,
    mul_scalar,         relu_scalar,        relu_backward_scalar, step_project_scalar,
};

}  // namespace mup::kernels::detail
