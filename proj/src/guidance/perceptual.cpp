#include <cmath>

#include "blendiff/guidance.hpp"
#include "blendiff/imaging.hpp"
#include "blendiff/simd/kernels.hpp"

namespace blendiff {
namespace {

constexpr int kScales = 3;
constexpr int kFilters = 8;
constexpr std::uint64_t kFilterSeed = 0x5EED;
constexpr double kNormEps = 1e-10;

using Filter = std::array<double, 9>;

std::array<Filter, kFilters> make_filters() {
    Rng rng(kFilterSeed);
    std::array<Filter, kFilters> bank{};
    for (auto& f : bank) {
        for (double& v : f) v = rng.normal();
        double mean = 0.0;
        for (double v : f) mean += v;
        mean /= 9.0;
        double norm = 0.0;
        for (double& v : f) {
            v -= mean;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : f) v /= norm;
    }
    return bank;
}

void check_inputs(const ImageTensor& a, const ImageTensor& b) {
    require_same_shape(a, b, "perceptual_proxy");
    if (a.height() < 4 || a.width() < 4) throw InvalidArgument("perceptual proxy needs images of at least 4x4");
}

std::vector<ImageTensor> pyramid(const ImageTensor& x) {
    std::vector<ImageTensor> levels{x};
    for (int s = 1; s < kScales; ++s) levels.push_back(avg_pool2(levels.back()));
    return levels;
}

// 'same' 3x3 correlation with reflect-101 borders.
std::vector<double> conv(std::span<const double> in, int h, int w, const Filter& f) {
    std::vector<double> out(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    acc += f[(dy + 1) * 3 + (dx + 1)] *
                           in[static_cast<std::size_t>(reflect_index(y + dy, h)) * w + reflect_index(x + dx, w)];
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    return out;
}

void conv_adjoint(std::span<const double> g, int h, int w, const Filter& f, std::span<double> out) {
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double gv = g[static_cast<std::size_t>(y) * w + x];
            if (gv == 0.0) continue;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    out[static_cast<std::size_t>(reflect_index(y + dy, h)) * w + reflect_index(x + dx, w)] +=
                        f[(dy + 1) * 3 + (dx + 1)] * gv;
        }
}

struct FeatureMap {
    std::vector<double> raw;   // filter response
    std::vector<double> norm;  // |raw| / ||raw||
    double length = 0.0;       // sqrt(sum raw^2 + eps)
};

FeatureMap feature(std::span<const double> plane, int h, int w, const Filter& f) {
    FeatureMap m;
    m.raw = conv(plane, h, w, f);
    double ss = 0.0;
    for (double v : m.raw) ss += v * v;
    m.length = std::sqrt(ss + kNormEps);
    m.norm.resize(m.raw.size());
    for (std::size_t i = 0; i < m.raw.size(); ++i) m.norm[i] = std::abs(m.raw[i]) / m.length;
    return m;
}

}  // namespace

const std::array<std::array<double, 9>, 8>& perceptual_filters() {
    static const auto bank = make_filters();
    return bank;
}

double perceptual_proxy(const ImageTensor& x1, const ImageTensor& x2) {
    check_inputs(x1, x2);
    const auto& bank = perceptual_filters();
    const auto p1 = pyramid(x1);
    const auto p2 = pyramid(x2);
    double total = 0.0;
    for (int s = 0; s < kScales; ++s) {
        const int h = p1[s].height(), w = p1[s].width();
        double acc = 0.0;
        for (int c = 0; c < x1.channels(); ++c)
            for (const Filter& f : bank) {
                const FeatureMap a = feature(p1[s].plane(c), h, w, f);
                const FeatureMap b = feature(p2[s].plane(c), h, w, f);
                for (std::size_t i = 0; i < a.norm.size(); ++i) {
                    const double d = a.norm[i] - b.norm[i];
                    acc += d * d;
                }
            }
        total += acc / static_cast<double>(static_cast<std::size_t>(x1.channels()) * kFilters * h * w);
    }
    return total / kScales;
}

ImageTensor perceptual_proxy_grad(const ImageTensor& x1, const ImageTensor& x2) {
    check_inputs(x1, x2);
    const auto& bank = perceptual_filters();
    const auto p1 = pyramid(x1);
    const auto p2 = pyramid(x2);

    std::vector<ImageTensor> grads;
    for (const auto& level : p2) grads.push_back(ImageTensor::zeros(level.shape()));

    for (int s = 0; s < kScales; ++s) {
        const int h = p2[s].height(), w = p2[s].width();
        const double scale = 1.0 / (kScales * static_cast<double>(static_cast<std::size_t>(x2.channels()) * kFilters * h * w));
        for (int c = 0; c < x2.channels(); ++c)
            for (const Filter& f : bank) {
                const FeatureMap a = feature(p1[s].plane(c), h, w, f);
                const FeatureMap b = feature(p2[s].plane(c), h, w, f);
                const std::size_t n = b.raw.size();
                std::vector<double> g_norm(n);
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    g_norm[i] = -2.0 * (a.norm[i] - b.norm[i]) * scale;
                    dot += g_norm[i] * std::abs(b.raw[i]);
                }
                const double l = b.length;
                const double l3 = l * l * l;
                std::vector<double> g_raw(n);
                for (std::size_t i = 0; i < n; ++i) {
                    const double abs_v = std::abs(b.raw[i]);
                    const double g_abs = g_norm[i] / l - abs_v * dot / l3;
                    const double sign = b.raw[i] > 0.0 ? 1.0 : (b.raw[i] < 0.0 ? -1.0 : 0.0);
                    g_raw[i] = g_abs * sign;
                }
                conv_adjoint(g_raw, h, w, f, grads[s].plane(c));
            }
    }

    for (int s = kScales - 1; s > 0; --s) {
        ImageTensor& fine = grads[s - 1];
        const ImageTensor& coarse = grads[s];
        for (int c = 0; c < coarse.channels(); ++c)
            for (int y = 0; y < coarse.height(); ++y)
                for (int x = 0; x < coarse.width(); ++x) {
                    const double g = 0.25 * coarse.at(c, y, x);
                    fine.at(c, 2 * y, 2 * x) += g;
                    fine.at(c, 2 * y, 2 * x + 1) += g;
                    fine.at(c, 2 * y + 1, 2 * x) += g;
                    fine.at(c, 2 * y + 1, 2 * x + 1) += g;
                }
    }
    return grads.front();
}

double mse(const ImageTensor& a, const ImageTensor& b) {
    require_same_shape(a, b, "mse");
    return simd::active_kernels().sqdist_scaled(a.data().data(), 1.0, b.data().data(), a.size()) /
           static_cast<double>(a.size());
}

}  // namespace blendiff
