#pragma once

#include "seqnet/kernels.hpp"

namespace seqnet::kernels {

extern const KernelTable kScalarKernels;
#if defined(__x86_64__) || defined(_M_X64)
#define SEQNET_HAVE_AVX2_KERNELS 1
extern const KernelTable kAvx2Kernels;
#endif

} // namespace seqnet::kernels
