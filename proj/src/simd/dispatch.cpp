#include <cstdlib>
#include <string_view>

#include "blendiff/simd/kernels.hpp"

namespace blendiff::simd {

#if defined(BLENDIFF_HAVE_AVX2)
const KernelTable* avx2_table_if_compiled();
#endif

bool cpu_supports_avx2() {
#if defined(BLENDIFF_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

const KernelTable* avx2_kernels() {
#if defined(BLENDIFF_HAVE_AVX2)
    if (cpu_supports_avx2()) return avx2_table_if_compiled();
#endif
    return nullptr;
}

namespace {

const KernelTable& select_kernels() {
    const char* env = std::getenv("BLENDIFF_SIMD");
    const std::string_view choice = env ? env : "";
    if (choice == "scalar") return scalar_kernels();
    if (const KernelTable* avx2 = avx2_kernels()) return *avx2;
    return scalar_kernels();
}

}  // namespace

const KernelTable& active_kernels() {
    static const KernelTable& table = select_kernels();
    return table;
}

}  // namespace blendiff::simd
