#include <algorithm>
#include <cmath>

#include "blendiff/editor.hpp"
#include "blendiff/imaging.hpp"

namespace blendiff {

ImageTensor composite_scribble(const ImageTensor& base, const ScribbleParams& scribble) {
    require_same_shape(base, scribble.layer, "scribble layer");
    require_mask_fits(base, scribble.mask, "scribble mask");
    return paste(scribble.layer, base, threshold(scribble.mask));
}

Mask scribble_edit_mask(const ScribbleParams& scribble) {
    const Mask painted = threshold(scribble.mask);
    if (!painted.any()) throw InvalidArgument("scribble mask is empty");
    if (!scribble.edit_mask) return dilate(painted, scribble.dilate_radius);
    // Union of the painted strokes and the user mask.
    const Mask& user = *scribble.edit_mask;
    if (user.height() != painted.height() || user.width() != painted.width())
        throw ShapeMismatch("scribble edit mask does not match the scribble mask");
    std::vector<double> merged(painted.size());
    for (std::size_t i = 0; i < merged.size(); ++i) merged[i] = std::max(painted.data()[i], user.data()[i]);
    return Mask(painted.height(), painted.width(), std::move(merged));
}

std::vector<EditResult> scribble_edit(const ImageTensor& base, const ScribbleParams& scribble,
                                      const std::string& prompt, const EditEngine& engine, int k, int num_samples,
                                      std::uint64_t seed) {
    EditJob job;
    job.application = Application::scribble;
    job.request.source = base;
    job.request.prompt = prompt;
    job.request.k = k;
    job.request.seed = seed;
    job.num_samples = num_samples;
    job.scribble = scribble;
    return run_edit(job, engine);
}

std::vector<EditResult> background_replace(const ImageTensor& image, const Mask& background_mask,
                                           const std::string& prompt, const EditEngine& engine, int k,
                                           int num_samples, std::uint64_t seed) {
    EditJob job;
    job.application = Application::background_replace;
    job.request.source = image;
    job.request.mask = background_mask;
    job.request.prompt = prompt;
    job.request.k = k;
    job.request.seed = seed;
    job.num_samples = num_samples;
    return run_edit(job, engine);
}

int extrapolation_k(int segment, int segments, int k_min, int k_max) {
    if (segments <= 1) return k_min;
    const double f = static_cast<double>(segment) / static_cast<double>(segments - 1);
    return static_cast<int>(std::lround(k_min + (k_max - k_min) * f));
}

namespace {

constexpr std::uint64_t kSegmentSeedStride = 0x9E3779B97F4A7C15ULL;

// Grows the canvas to the right by `segments` strips of W/4 columns.
ImageTensor extend_right(ImageTensor canvas, int width, int segments, const std::string& prompt,
                         const ExtrapolateParams& p, const SampleRequest& base, std::uint64_t seed_offset,
                         const EditEngine& engine) {
    const int strip = width / 4;
    const int h = canvas.height();
    Mask strip_mask(h, width, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = width - strip; x < width; ++x) strip_mask.at(y, x) = 1.0;
    const Mask full(h, width, 1.0);

    EditJob job;
    job.request = base;
    job.request.prompt = prompt;
    job.num_samples = p.samples_per_segment;

    for (int s = 0; s < segments; ++s) {
        const ImageTensor window = crop_columns(canvas, canvas.width() - width, width);
        job.request.source = shift_left_reflect(window, strip);
        job.request.mask = strip_mask;
        job.request.k = extrapolation_k(s, segments, p.k_min, p.k_max);
        job.request.seed = base.seed + kSegmentSeedStride * (seed_offset + static_cast<std::uint64_t>(s) + 1);
        const ImageTensor best = run_edit(job, engine).front().image;
        canvas = concat_columns(canvas, crop_columns(best, width - strip, strip));

        if ((s + 1) % 4 == 0 && p.k_denoise > 0) {
            // Re-denoise the last four strips, which together fill one window.
            job.request.source = crop_columns(canvas, canvas.width() - width, width);
            job.request.mask = full;
            job.request.k = p.k_denoise;
            job.request.seed += 1;
            const ImageTensor smoothed = run_edit(job, engine).front().image;
            canvas = concat_columns(crop_columns(canvas, 0, canvas.width() - width), smoothed);
        }
    }
    return canvas;
}

}  // namespace

ImageTensor extrapolate(const ImageTensor& image, const ExtrapolateParams& params, const SampleRequest& base,
                        const EditEngine& engine) {
    const int width = image.width();
    if (width % 4 != 0) throw InvalidArgument("extrapolation needs a width divisible by 4, got " + std::to_string(width));
    if (params.segments_left < 0 || params.segments_right < 0) throw InvalidArgument("segment counts must be >= 0");
    ImageTensor canvas = image;
    if (params.segments_right > 0)
        canvas = extend_right(std::move(canvas), width, params.segments_right, params.prompt_right, params, base, 0,
                              engine);
    if (params.segments_left > 0) {
        ImageTensor flipped = flip_horizontal(canvas);
        flipped = extend_right(std::move(flipped), width, params.segments_left, params.prompt_left, params, base,
                               static_cast<std::uint64_t>(params.segments_right) + 1, engine);
        canvas = flip_horizontal(flipped);
    }
    return canvas;
}

}  // namespace blendiff
