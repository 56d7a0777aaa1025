#include "blendiff/warp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace blendiff {

ProjectiveTransform::ProjectiveTransform() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

ProjectiveTransform::ProjectiveTransform(const std::array<double, 9>& m) : m_(m) {
    if (m_[8] == 0.0 || !std::isfinite(m_[8])) throw DegenerateError("homography has a zero bottom-right entry");
    const double s = m_[8];
    for (double& v : m_) v /= s;
    if (std::abs(determinant()) < 1e-12) throw DegenerateError("homography is not invertible");
}

ProjectiveTransform ProjectiveTransform::translation(double dx, double dy) {
    return ProjectiveTransform({1, 0, dx, 0, 1, dy, 0, 0, 1});
}

ProjectiveTransform ProjectiveTransform::from_corners(const std::array<std::array<double, 2>, 4>& src,
                                                      const std::array<std::array<double, 2>, 4>& dst) {
    Eigen::Matrix<double, 8, 8> a;
    Eigen::Matrix<double, 8, 1> b;
    for (int i = 0; i < 4; ++i) {
        const double x = src[i][0], y = src[i][1];
        const double u = dst[i][0], v = dst[i][1];
        a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
        a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
        b(2 * i) = u;
        b(2 * i + 1) = v;
    }
    const Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
    if (!lu.isInvertible()) throw DegenerateError("corner correspondence is singular");
    const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
    if (!h.allFinite()) throw DegenerateError("corner correspondence is singular");
    return ProjectiveTransform({h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0});
}

double ProjectiveTransform::determinant() const {
    const Eigen::Matrix3d m = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(m_.data());
    return m.determinant();
}

ProjectiveTransform ProjectiveTransform::inverse() const {
    const Eigen::Matrix3d m = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(m_.data());
    const Eigen::Matrix<double, 3, 3, Eigen::RowMajor> inv = m.inverse();
    std::array<double, 9> out{};
    std::copy(inv.data(), inv.data() + 9, out.begin());
    return ProjectiveTransform(out);
}

bool ProjectiveTransform::is_identity() const { return *this == ProjectiveTransform(); }

std::array<double, 2> ProjectiveTransform::apply(double x, double y) const {
    const double w = m_[6] * x + m_[7] * y + m_[8];
    return {(m_[0] * x + m_[1] * y + m_[2]) / w, (m_[3] * x + m_[4] * y + m_[5]) / w};
}

namespace {

// Continuous reflect-101 into [0, n-1].
double reflect_coord(double v, int n) {
    if (n <= 1) return 0.0;
    const double period = 2.0 * (n - 1);
    v = std::fmod(v, period);
    if (v < 0) v += period;
    if (v > n - 1) v = period - v;
    return std::clamp(v, 0.0, static_cast<double>(n - 1));
}

void axis_pair(double v, int n, int& i0, int& i1, double& frac) {
    if (n <= 1) {
        i0 = i1 = 0;
        frac = 0.0;
        return;
    }
    i0 = std::min(static_cast<int>(std::floor(v)), n - 2);
    i1 = i0 + 1;
    frac = v - i0;
}

}  // namespace

WarpPlan::WarpPlan(int height, int width, const ProjectiveTransform& transform)
    : height_(height), width_(width), identity_(transform.is_identity()) {
    if (identity_) return;
    const ProjectiveTransform inv = transform.inverse();
    taps_.resize(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const auto [sx, sy] = inv.apply(x, y);
            int x0, x1, y0, y1;
            double fx, fy;
            axis_pair(reflect_coord(std::isfinite(sx) ? sx : 0.0, width), width, x0, x1, fx);
            axis_pair(reflect_coord(std::isfinite(sy) ? sy : 0.0, height), height, y0, y1, fy);
            Taps& t = taps_[static_cast<std::size_t>(y) * width + x];
            t.index = {y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1};
            t.weight = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
        }
}

void WarpPlan::warp_plane(const double* in, double* out) const {
    for (std::size_t p = 0; p < taps_.size(); ++p) {
        const Taps& t = taps_[p];
        out[p] = (t.weight[0] * in[t.index[0]] + t.weight[1] * in[t.index[1]]) +
                 (t.weight[2] * in[t.index[2]] + t.weight[3] * in[t.index[3]]);
    }
}

void WarpPlan::splat_plane(const double* grad, double* out) const {
    for (std::size_t p = 0; p < taps_.size(); ++p) {
        const Taps& t = taps_[p];
        for (int k = 0; k < 4; ++k) out[t.index[k]] += t.weight[k] * grad[p];
    }
}

ImageTensor WarpPlan::apply(const ImageTensor& image) const {
    if (image.height() != height_ || image.width() != width_) throw ShapeMismatch("warp plan built for another size");
    if (identity_) return image;
    ImageTensor out = ImageTensor::zeros(image.shape());
    for (int c = 0; c < image.channels(); ++c) warp_plane(image.plane(c).data(), out.plane(c).data());
    return out;
}

ImageTensor WarpPlan::adjoint(const ImageTensor& grad) const {
    if (grad.height() != height_ || grad.width() != width_) throw ShapeMismatch("warp plan built for another size");
    if (identity_) return grad;
    ImageTensor out = ImageTensor::zeros(grad.shape());
    for (int c = 0; c < grad.channels(); ++c) splat_plane(grad.plane(c).data(), out.plane(c).data());
    return out;
}

Mask WarpPlan::apply(const Mask& mask) const {
    if (mask.height() != height_ || mask.width() != width_) throw ShapeMismatch("warp plan built for another size");
    if (identity_) return mask;
    std::vector<double> out(mask.size());
    warp_plane(mask.data().data(), out.data());
    for (double& v : out) v = v >= 0.5 ? 1.0 : 0.0;
    return Mask(height_, width_, std::move(out));
}

ImageTensor warp_projective(const ImageTensor& image, const ProjectiveTransform& transform) {
    return WarpPlan(image.height(), image.width(), transform).apply(image);
}

Mask warp_projective(const Mask& mask, const ProjectiveTransform& transform) {
    return WarpPlan(mask.height(), mask.width(), transform).apply(mask);
}

}  // namespace blendiff
