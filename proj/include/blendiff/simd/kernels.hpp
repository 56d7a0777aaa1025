#pragma once

// Elementwise and reduction kernels over double arrays.
//
// Every variant produces bit-identical results: the scalar kernels are the
// reference and fix the accumulation order (four interleaved partial sums,
// combined as (s0 + s1) + (s2 + s3), then the tail in index order) that the
// vector variants reproduce lane for lane. Nothing here fuses multiply-add.

#include <cstddef>
#include <string_view>

namespace blendiff::simd {

struct KernelTable {
    const char* name;

    // out = a*x + b*y
    void (*axpby)(double a, const double* x, double b, const double* y, double* out, std::size_t n);
    // out = x + a*y + b*z
    void (*xpaypbz)(const double* x, double a, const double* y, double b, const double* z, double* out,
                    std::size_t n);
    // out = a*x
    void (*scale)(double a, const double* x, double* out, std::size_t n);
    // out = x*y
    void (*mul)(const double* x, const double* y, double* out, std::size_t n);
    // out = fg*m + bg*(1 - m)
    void (*blend)(const double* fg, const double* bg, const double* m, double* out, std::size_t n);
    // m == 0 -> bg, m == 1 -> fg (both bit-exact), otherwise blend
    void (*paste)(const double* fg, const double* bg, const double* m, double* out, std::size_t n);

    double (*sum)(const double* x, std::size_t n);
    double (*dot)(const double* x, const double* y, std::size_t n);
    // sum (x - a*y)^2
    double (*sqdist_scaled)(const double* x, double a, const double* y, std::size_t n);
};

const KernelTable& scalar_kernels();

// nullptr when the variant was not compiled in or the CPU lacks the feature.
const KernelTable* avx2_kernels();

// Selected once per process. BLENDIFF_SIMD=scalar|avx2 overrides detection.
const KernelTable& active_kernels();

bool cpu_supports_avx2();

}  // namespace blendiff::simd
