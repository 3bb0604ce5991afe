#include <cstdlib>
#include <string_view>

#include "kernels_impl.hpp"

namespace mup::kernels {
namespace {

const KernelTable* best_available() noexcept {
    if (const KernelTable* t = avx2_table()) return t;
    if (const KernelTable* t = neon_table()) return t;
    return &scalar_table();
}

const KernelTable* from_env() noexcept {
    const char* env = std::getenv("MUP_KERNELS");
    if (env == nullptr) return nullptr;
    std::string_view want(env);
    if (want == "scalar") return &scalar_table();
    if (want == "avx2") return avx2_table();
    if (want == "neon") return neon_table();
    return nullptr;
}

const KernelTable*& current() noexcept {
    static const KernelTable* table = [] {
        const KernelTable* t = from_env();
        return t != nullptr ? t : best_available();
    }();
    return table;
}

}  // namespace

const KernelTable& scalar_table() noexcept { return detail::kScalarTable; }

const KernelTable* avx2_table() noexcept {
#if defined(MUP_HAVE_AVX2)
    if (__builtin_cpu_supports("avx2")) return &detail::kAvx2Table;
#endif
    return nullptr;
}

const KernelTable* neon_table() noexcept {
#if defined(MUP_HAVE_NEON)
    return &detail::kNeonTable;
#else
    return nullptr;
#endif
}

const KernelTable& active() noexcept { return *current(); }

bool force(Isa isa) noexcept {
    const KernelTable* t = nullptr;
    switch (isa) {
        case Isa::scalar: t = &scalar_table(); break;
        case Isa::avx2: t = avx2_table(); break;
        case Isa::neon: t = neon_table(); break;
    }
    if (t == nullptr) return false;
    current() = t;
    return true;
}

std::string_view to_string(Isa isa) noexcept {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "unknown";
}

}  // namespace mup::kernels
