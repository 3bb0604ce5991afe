#pragma once

#include "mup/kernels.hpp"

namespace mup::kernels::detail {

extern const KernelTable kScalarTable;
#if defined(MUP_HAVE_AVX2)
extern const KernelTable kAvx2Table;
#endif
#if defined(MUP_HAVE_NEON)
extern const KernelTable kNeonTable;
#endif

}  // namespace mup::kernels::detail
