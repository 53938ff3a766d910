#include "kernel_tables.hpp"

#include "seqnet/errors.hpp"

#include <cstdlib>
#include <string>

namespace seqnet::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(SEQNET_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable* initial_table() {
    const bool avx2 = cpu_has_avx2();
    if (const char* env = std::getenv("SEQNET_ISA")) {
        const std::string want(env);
        if (want == "scalar") return &kScalarKernels;
#if defined(SEQNET_HAVE_AVX2_KERNELS)
        if (want == "avx2" && avx2) return &kAvx2Kernels;
#endif
    }
#if defined(SEQNET_HAVE_AVX2_KERNELS)
    if (avx2) return &kAvx2Kernels;
#endif
    return &kScalarKernels;
}

const KernelTable*& current() {
    static const KernelTable* table = initial_table();
    return table;
}

} // namespace

bool isa_supported(Isa isa) {
    switch (isa) {
    case Isa::scalar:
        return true;
    case Isa::avx2:
        return cpu_has_avx2();
    }
    return false;
}

const KernelTable& table(Isa isa) {
    if (!isa_supported(isa)) {
        throw Error("kernel ISA '" + std::string(isa_name(isa)) + "' is not supported on this CPU");
    }
#if defined(SEQNET_HAVE_AVX2_KERNELS)
    if (isa == Isa::avx2) return kAvx2Kernels;
#endif
    return kScalarKernels;
}

const KernelTable& active() { return *current(); }

Isa active_isa() { return current()->isa; }

void set_active_isa(Isa isa) { current() = &table(isa); }

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

} // namespace seqnet::kernels
