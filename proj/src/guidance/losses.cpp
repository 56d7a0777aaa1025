#include <cmath>

#include "blendiff/guidance.hpp"
#include "blendiff/imaging.hpp"
#include "blendiff/simd/kernels.hpp"

namespace blendiff {

double bg_distance(const ImageTensor& x1, const ImageTensor& x2, const Mask& mask) {
    require_same_shape(x1, x2, "bg_distance");
    require_mask_fits(x1, mask, "bg_distance");
    const Mask background = mask.inverted();
    const ImageTensor a = apply_mask(x1, background);
    const ImageTensor b = apply_mask(x2, background);
    return 0.5 * (mse(a, b) + perceptual_proxy(a, b));
}

ImageTensor bg_distance_grad(const ImageTensor& x1, const ImageTensor& x2, const Mask& mask) {
    require_same_shape(x1, x2, "bg_distance_grad");
    require_mask_fits(x1, mask, "bg_distance_grad");
    const Mask background = mask.inverted();
    const ImageTensor a = apply_mask(x1, background);
    const ImageTensor b = apply_mask(x2, background);
    ImageTensor g = perceptual_proxy_grad(a, b);
    // d/db of 1/2 (MSE + proxy); MSE part is (b - a) / n
    const double inv_n = 1.0 / static_cast<double>(a.size());
    simd::active_kernels().xpaypbz(g.data().data(), 2.0 * inv_n, b.data().data(), -2.0 * inv_n, a.data().data(),
                                   g.data().data(), g.size());
    simd::active_kernels().scale(0.5, g.data().data(), g.data().data(), g.size());
    return apply_mask(g, background);
}

namespace {

ImageTensor pairwise_sum(std::vector<ImageTensor>& terms, std::size_t lo, std::size_t hi) {
    if (hi - lo == 1) return std::move(terms[lo]);
    const std::size_t mid = lo + (hi - lo) / 2;
    ImageTensor left = pairwise_sum(terms, lo, mid);
    const ImageTensor right = pairwise_sum(terms, mid, hi);
    simd::active_kernels().axpby(1.0, left.data().data(), 1.0, right.data().data(), left.data().data(), left.size());
    return left;
}

}  // namespace

double guidance_loss(const GuidanceModel& model, const ImageTensor& x0_hat, const ImageTensor& x_source,
                     const Mask& mask, const std::string& prompt, std::span<const ProjectiveTransform> transforms,
                     double lambda, bool augment_bg_loss) {
    if (transforms.empty()) throw InvalidArgument("need at least one transform");
    double clip = 0.0;
    double bg = 0.0;
    for (const auto& t : transforms) {
        const WarpPlan plan(x0_hat.height(), x0_hat.width(), t);
        const ImageTensor warped = plan.apply(x0_hat);
        const Mask warped_mask = plan.apply(mask);
        if (!prompt.empty()) clip += clip_distance(model, warped, warped_mask, prompt);
        if (lambda > 0.0 && augment_bg_loss) bg += bg_distance(plan.apply(x_source), warped, warped_mask);
    }
    const double n = static_cast<double>(transforms.size());
    double total = clip / n;
    if (lambda > 0.0) total += lambda * (augment_bg_loss ? bg / n : bg_distance(x_source, x0_hat, mask));
    return total;
}

ImageTensor guidance_loss_grad(const GuidanceModel& model, const ImageTensor& x0_hat, const ImageTensor& x_source,
                               const Mask& mask, const std::string& prompt,
                               std::span<const ProjectiveTransform> transforms, double lambda, bool augment_bg_loss) {
    if (transforms.empty()) throw InvalidArgument("need at least one transform");
    if (lambda < 0.0) throw InvalidArgument("lambda must be >= 0");
    require_mask_fits(x0_hat, mask, "guidance_gradient");
    if (lambda > 0.0) require_same_shape(x0_hat, x_source, "guidance_gradient");

    std::vector<ImageTensor> terms;
    terms.reserve(transforms.size());
    for (const auto& t : transforms) {
        const WarpPlan plan(x0_hat.height(), x0_hat.width(), t);
        const ImageTensor warped = plan.apply(x0_hat);
        const Mask warped_mask = plan.apply(mask);
        ImageTensor g = prompt.empty() ? ImageTensor::zeros(x0_hat.shape())
                                       : clip_distance_grad(model, warped, warped_mask, prompt);
        if (lambda > 0.0 && augment_bg_loss) {
            const ImageTensor gb = bg_distance_grad(plan.apply(x_source), warped, warped_mask);
            simd::active_kernels().axpby(1.0, g.data().data(), lambda, gb.data().data(), g.data().data(), g.size());
        }
        terms.push_back(plan.adjoint(g));
    }
    ImageTensor total = pairwise_sum(terms, 0, terms.size());
    const auto& k = simd::active_kernels();
    k.scale(1.0 / static_cast<double>(transforms.size()), total.data().data(), total.data().data(), total.size());
    if (lambda > 0.0 && !augment_bg_loss) {
        const ImageTensor gb = bg_distance_grad(x_source, x0_hat, mask);
        k.axpby(1.0, total.data().data(), lambda, gb.data().data(), total.data().data(), total.size());
    }
    return total;
}

ImageTensor guidance_gradient(const GuidanceModel& model, const ImageTensor& x0_hat, const ImageTensor& x_source,
                              const Mask& mask, const std::string& prompt, const GuidanceOptions& options, Rng& rng) {
    if (options.augmentations < 1) throw InvalidArgument("augmentation count must be >= 1");
    const auto transforms =
        draw_augmentation_transforms(x0_hat.height(), x0_hat.width(), options.augmentations, rng, options.jitter);
    ImageTensor g = guidance_loss_grad(model, x0_hat, x_source, mask, prompt, transforms, options.lambda,
                                       options.augment_bg_loss);
    simd::active_kernels().scale(-1.0, g.data().data(), g.data().data(), g.size());
    return g;
}

}  // namespace blendiff
