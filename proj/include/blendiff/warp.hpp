#pragma once

#include <array>
#include <vector>

#include "blendiff/tensor.hpp"

namespace blendiff {

// 3x3 homography mapping source pixel coordinates (x = column, y = row,
// pixel centers on integers) to destination coordinates. Row-major,
// normalized so that m[8] == 1.
class ProjectiveTransform {
  public:
    ProjectiveTransform();  // identity
    explicit ProjectiveTransform(const std::array<double, 9>& m);

    static ProjectiveTransform identity() { return {}; }
    static ProjectiveTransform translation(double dx, double dy);
    // Solves for the homography taking src[i] to dst[i]; throws DegenerateError
    // when the correspondence is singular.
    static ProjectiveTransform from_corners(const std::array<std::array<double, 2>, 4>& src,
                                            const std::array<std::array<double, 2>, 4>& dst);

    const std::array<double, 9>& matrix() const { return m_; }
    double determinant() const;
    ProjectiveTransform inverse() const;
    bool is_identity() const;
    std::array<double, 2> apply(double x, double y) const;

    friend bool operator==(const ProjectiveTransform&, const ProjectiveTransform&) = default;

  private:
    std::array<double, 9> m_;
};

// Inverse-mapped bilinear sampling with reflect-101 borders, materialized as
// four (index, weight) taps per output pixel. One plan drives the forward
// warp and its adjoint.
class WarpPlan {
  public:
    WarpPlan(int height, int width, const ProjectiveTransform& transform);

    int height() const { return height_; }
    int width() const { return width_; }
    bool identity() const { return identity_; }

    ImageTensor apply(const ImageTensor& image) const;
    // Transpose of apply: splats a gradient on the warped image back to source pixels.
    ImageTensor adjoint(const ImageTensor& grad) const;
    // Bilinear warp followed by a 0.5 threshold.
    Mask apply(const Mask& mask) const;

  private:
    struct Taps {
        std::array<int, 4> index;
        std::array<double, 4> weight;
    };

    void warp_plane(const double* in, double* out) const;
    void splat_plane(const double* grad, double* out) const;

    int height_;
    int width_;
    bool identity_;
    std::vector<Taps> taps_;
};

ImageTensor warp_projective(const ImageTensor& image, const ProjectiveTransform& transform);
Mask warp_projective(const Mask& mask, const ProjectiveTransform& transform);

}  // namespace blendiff
