#include "blendiff/simd/kernels.hpp"

namespace blendiff::simd {
namespace {

constexpr std::size_t kLanes = 4;

void axpby_scalar(double a, const double* x, double b, const double* y, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double l = a * x[i];
        const double r = b * y[i];
        out[i] = l + r;
    }
}

void xpaypbz_scalar(const double* x, double a, const double* y, double b, const double* z, double* out,
                    std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double ay = a * y[i];
        const double bz = b * z[i];
        out[i] = (x[i] + ay) + bz;
    }
}

void scale_scalar(double a, const double* x, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i];
}

void mul_scalar(const double* x, const double* y, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void blend_scalar(const double* fg, const double* bg, const double* m, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double f = fg[i] * m[i];
        const double b = bg[i] * (1.0 - m[i]);
        out[i] = f + b;
    }
}

void paste_scalar(const double* fg, const double* bg, const double* m, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
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

template <typename Term>
double lane_reduce(std::size_t n, Term term) {
    double acc[kLanes] = {0.0, 0.0, 0.0, 0.0};
    const std::size_t body = n - n % kLanes;
    for (std::size_t i = 0; i < body; i += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) acc[l] = acc[l] + term(i + l);
    }
    double total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (std::size_t i = body; i < n; ++i) total = total + term(i);
    return total;
}

double sum_scalar(const double* x, std::size_t n) {
    return lane_reduce(n, [x](std::size_t i) { return x[i]; });
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
    return lane_reduce(n, [x, y](std::size_t i) { return x[i] * y[i]; });
}

double sqdist_scaled_scalar(const double* x, double a, const double* y, std::size_t n) {
    return lane_reduce(n, [x, a, y](std::size_t i) {
        const double d = x[i] - a * y[i];
        return d * d;
    });
}

constexpr KernelTable kScalar{
    "scalar",       axpby_scalar, xpaypbz_scalar, scale_scalar,        mul_scalar,
    blend_scalar,   paste_scalar, sum_scalar,     dot_scalar,          sqdist_scaled_scalar,
};

}  // namespace

const KernelTable& scalar_kernels() { return kScalar; }

}  // namespace blendiff::simd
