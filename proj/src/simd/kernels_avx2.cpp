// AVX2 variants, compiled with -mavx2 only (no -mfma).

#include <immintrin.h>

#include "blendiff/simd/kernels.hpp"

namespace blendiff::simd {
namespace {

constexpr std::size_t kLanes = 4;

void axpby_avx2(double a, const double* x, double b, const double* y, double* out, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    const __m256d vb = _mm256_set1_pd(b);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m256d l = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
        const __m256d r = _mm256_mul_pd(vb, _mm256_loadu_pd(y + i));
        _mm256_storeu_pd(out + i, _mm256_add_pd(l, r));
    }
    for (; i < n; ++i) {
        const double l = a * x[i];
        const double r = b * y[i];
        out[i] = l + r;
    }
}

void xpaypbz_avx2(const double* x, double a, const double* y, double b, const double* z, double* out,
                  std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    const __m256d vb = _mm256_set1_pd(b);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m256d ay = _mm256_mul_pd(va, _mm256_loadu_pd(y + i));
        const __m256d bz = _mm256_mul_pd(vb, _mm256_loadu_pd(z + i));
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_add_pd(_mm256_loadu_pd(x + i), ay), bz));
    }
    for (; i < n; ++i) {
        const double ay = a * y[i];
        const double bz = b * z[i];
        out[i] = (x[i] + ay) + bz;
    }
}

void scale_avx2(double a, const double* x, double* out, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = a * x[i];
}

void mul_avx2(const double* x, const double* y, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

inline __m256d blend4(__m256d fg, __m256d bg, __m256d m, __m256d one) {
    return _mm256_add_pd(_mm256_mul_pd(fg, m), _mm256_mul_pd(bg, _mm256_sub_pd(one, m)));
}

void blend_avx2(const double* fg, const double* bg, const double* m, double* out, std::size_t n) {
    const __m256d one = _mm256_set1_pd(1.0);
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        _mm256_storeu_pd(out + i,
                         blend4(_mm256_loadu_pd(fg + i), _mm256_loadu_pd(bg + i), _mm256_loadu_pd(m + i), one));
    }
    for (; i < n; ++i) {
        const double f = fg[i] * m[i];
        const double b = bg[i] * (1.0 - m[i]);
        out[i] = f + b;
    }
}

void paste_avx2(const double* fg, const double* bg, const double* m, double* out, std::size_t n) {
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m256d vf = _mm256_loadu_pd(fg + i);
        const __m256d vb = _mm256_loadu_pd(bg + i);
        const __m256d vm = _mm256_loadu_pd(m + i);
        __m256d r = blend4(vf, vb, vm, one);
        r = _mm256_blendv_pd(r, vf, _mm256_cmp_pd(vm, one, _CMP_EQ_OQ));
        r = _mm256_blendv_pd(r, vb, _mm256_cmp_pd(vm, zero, _CMP_EQ_OQ));
        _mm256_storeu_pd(out + i, r);
    }
    for (; i < n; ++i) {
        if (m[i] == 0.0) {
            out[i] = bg[i];
        } else if (m[i] == 1.0) {
            out[i] = fg[i];
        } else {
            const double f = fg[i] * m[i];
            const double b = bg[i] * (1.0 - m[i]);
            out[i] = f + b;
        }
    }
}

inline double horizontal(__m256d acc) {
    alignas(32) double lanes[kLanes];
    _mm256_store_pd(lanes, acc);
    return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

double sum_avx2(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double total = horizontal(acc);
    for (; i < n; ++i) total = total + x[i];
    return total;
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    double total = horizontal(acc);
    for (; i < n; ++i) total = total + x[i] * y[i];
    return total;
}

double sqdist_scaled_avx2(const double* x, double a, const double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_mul_pd(va, _mm256_loadu_pd(y + i)));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
    }
    double total = horizontal(acc);
    for (; i < n; ++i) {
        const double d = x[i] - a * y[i];
        total = total + d * d;
    }
    return total;
}

constexpr KernelTable kAvx2{
    "avx2",     axpby_avx2, xpaypbz_avx2, scale_avx2, mul_avx2,
    blend_avx2, paste_avx2, sum_avx2,     dot_avx2,   sqdist_scaled_avx2,
};

}  // namespace

const KernelTable* avx2_table_if_compiled() { return &kAvx2; }

}  // namespace blendiff::simd
