#include "blendiff/guidance.hpp"

namespace blendiff {
namespace {

constexpr int kMaxRedraws = 10;

// Signed area terms of consecutive edges all share one sign for a convex quad.
bool convex(const std::array<std::array<double, 2>, 4>& q) {
    int sign = 0;
    for (int i = 0; i < 4; ++i) {
        const auto& a = q[i];
        const auto& b = q[(i + 1) % 4];
        const auto& c = q[(i + 2) % 4];
        const double cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        const int s = cross > 0 ? 1 : (cross < 0 ? -1 : 0);
        if (s == 0) return false;
        if (sign == 0) sign = s;
        if (s != sign) return false;
    }
    return true;
}

}  // namespace

std::vector<ProjectiveTransform> draw_augmentation_transforms(int height, int width, int count, Rng& rng,
                                                              double jitter) {
    if (count < 1) throw InvalidArgument("augmentation count must be >= 1");
    const double w1 = width - 1.0, h1 = height - 1.0;
    const std::array<std::array<double, 2>, 4> corners{{{0.0, 0.0}, {w1, 0.0}, {w1, h1}, {0.0, h1}}};
    std::vector<ProjectiveTransform> out{ProjectiveTransform::identity()};
    for (int i = 1; i < count; ++i) {
        bool done = false;
        for (int attempt = 0; attempt <= kMaxRedraws && !done; ++attempt) {
            auto moved = corners;
            for (auto& corner : moved) {
                corner[0] += rng.uniform(-jitter, jitter) * width;
                corner[1] += rng.uniform(-jitter, jitter) * height;
            }
            if (!convex(moved)) continue;
            try {
                out.push_back(ProjectiveTransform::from_corners(corners, moved));
                done = true;
            } catch (const DegenerateError&) {
            }
        }
        if (!done) throw DegenerateError("could not draw an invertible augmentation after 10 retries");
    }
    return out;
}

std::vector<Augmentation> extending_augmentations(const ImageTensor& image, const Mask& mask, int count, Rng& rng,
                                                  double jitter) {
    require_mask_fits(image, mask, "extending_augmentations");
    const auto transforms = draw_augmentation_transforms(image.height(), image.width(), count, rng, jitter);
    std::vector<Augmentation> out;
    out.reserve(transforms.size());
    for (const auto& t : transforms) {
        const WarpPlan plan(image.height(), image.width(), t);
        out.push_back({plan.apply(image), plan.apply(mask), t});
    }
    return out;
}

}  // namespace blendiff
