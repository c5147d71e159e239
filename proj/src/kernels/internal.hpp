#pragma once

#include "udeoc/kernels.hpp"

namespace udeoc::kernels::detail {

const Table& scalar_table();
#if defined(UDEOC_HAVE_AVX2)
const Table& avx2_table();
#endif

}  // namespace udeoc::kernels::detail
