#include <algorithm>
#include <cmath>

#include "blendiff/imaging.hpp"
#include "blendiff/simd/kernels.hpp"

namespace blendiff {

int reflect_index(int i, int n) {
    if (n <= 1) return 0;
    const int period = 2 * n - 2;
    i %= period;
    if (i < 0) i += period;
    return i >= n ? period - i : i;
}

ImageTensor to_diffusion_domain(const Raster8& raster) {
    if (raster.bytes.size() != raster.size()) throw ShapeMismatch("raster byte count does not match H*W*C");
    const int channels = raster.channels == 4 ? 3 : raster.channels;
    if (channels != 1 && channels != 3) throw InvalidArgument("rasters must have 1, 3 or 4 channels");
    ImageTensor out(raster.height, raster.width, channels);
    for (int y = 0; y < raster.height; ++y)
        for (int x = 0; x < raster.width; ++x)
            for (int c = 0; c < channels; ++c) {
                const std::size_t src = (static_cast<std::size_t>(y) * raster.width + x) * raster.channels + c;
                out.at(c, y, x) = raster.bytes[src] / 127.5 - 1.0;
            }
    return out;
}

Raster8 from_diffusion_domain(const ImageTensor& image) {
    Raster8 r{image.height(), image.width(), image.channels(), {}};
    if (r.channels != 1 && r.channels != 3) throw InvalidArgument("only 1- or 3-channel tensors map to rasters");
    r.bytes.resize(r.size());
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x)
            for (int c = 0; c < r.channels; ++c) {
                double v = image.at(c, y, x);
                v = std::isnan(v) ? 0.0 : std::clamp(v, -1.0, 1.0);
                r.bytes[(static_cast<std::size_t>(y) * r.width + x) * r.channels + c] =
                    static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
            }
    return r;
}

Mask mask_from_raster(const Raster8& raster) {
    std::vector<double> data(static_cast<std::size_t>(raster.height) * raster.width);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = raster.bytes[i * raster.channels] >= 128 ? 1.0 : 0.0;
    return Mask(raster.height, raster.width, std::move(data));
}

Raster8 mask_to_raster(const Mask& mask) {
    Raster8 r{mask.height(), mask.width(), 1, std::vector<std::uint8_t>(mask.size())};
    const auto d = mask.data();
    for (std::size_t i = 0; i < d.size(); ++i) r.bytes[i] = static_cast<std::uint8_t>(std::lround(d[i] * 255.0));
    return r;
}

ImageTensor load_tensor(const std::string& path) { return to_diffusion_domain(load_image(path).raster); }

Mask load_mask(const std::string& path) { return mask_from_raster(load_image(path).raster); }

void save_tensor(const std::string& path, const ImageTensor& image) { save_image(path, from_diffusion_domain(image)); }

namespace {

template <typename Kernel>
ImageTensor masked_combine(const ImageTensor& fg, const ImageTensor& bg, const Mask& mask, const char* what,
                           Kernel kernel) {
    require_same_shape(fg, bg, what);
    require_mask_fits(fg, mask, what);
    ImageTensor out = ImageTensor::zeros(fg.shape());
    for (int c = 0; c < fg.channels(); ++c)
        kernel(fg.plane(c).data(), bg.plane(c).data(), mask.data().data(), out.plane(c).data(), mask.size());
    return out;
}

}  // namespace

ImageTensor blend(const ImageTensor& fg, const ImageTensor& bg, const Mask& mask) {
    return masked_combine(fg, bg, mask, "blend", simd::active_kernels().blend);
}

ImageTensor paste(const ImageTensor& fg, const ImageTensor& bg, const Mask& mask) {
    return masked_combine(fg, bg, mask, "paste", simd::active_kernels().paste);
}

ImageTensor apply_mask(const ImageTensor& image, const Mask& mask) {
    require_mask_fits(image, mask, "apply_mask");
    ImageTensor out = ImageTensor::zeros(image.shape());
    for (int c = 0; c < image.channels(); ++c)
        simd::active_kernels().mul(image.plane(c).data(), mask.data().data(), out.plane(c).data(), mask.size());
    return out;
}

namespace {

struct Tap {
    int index;
    double weight;
};
using AxisTaps = std::vector<std::vector<Tap>>;

AxisTaps axis_taps(int in, int out, ResizeMode mode) {
    AxisTaps taps(out);
    if (mode == ResizeMode::area) {
        if (in % out != 0) throw InvalidArgument("area resize needs an integer reduction factor");
        const int f = in / out;
        for (int i = 0; i < out; ++i)
            for (int k = 0; k < f; ++k) taps[i].push_back({i * f + k, 1.0 / f});
        return taps;
    }
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
        const double src = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
        const int i0 = static_cast<int>(std::floor(src));
        const int i1 = std::min(i0 + 1, in - 1);
        const double frac = src - i0;
        taps[i].push_back({i0, 1.0 - frac});
        if (frac > 0.0) taps[i].push_back({i1, frac});
    }
    return taps;
}

std::vector<double> resize_plane(std::span<const double> in, int h, int w, const AxisTaps& ty, const AxisTaps& tx) {
    const int oh = static_cast<int>(ty.size());
    const int ow = static_cast<int>(tx.size());
    // rows first, then columns
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (const Tap& t : tx[x]) acc += t.weight * in[static_cast<std::size_t>(y) * w + t.index];
            tmp[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (const Tap& t : ty[y]) acc += t.weight * tmp[static_cast<std::size_t>(t.index) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

std::vector<double> resize_plane_adjoint(std::span<const double> g, int h, int w, const AxisTaps& ty,
                                         const AxisTaps& tx) {
    const int oh = static_cast<int>(ty.size());
    const int ow = static_cast<int>(tx.size());
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (const Tap& t : ty[y])
                tmp[static_cast<std::size_t>(t.index) * ow + x] += t.weight * g[static_cast<std::size_t>(y) * ow + x];
    std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x)
            for (const Tap& t : tx[x])
                out[static_cast<std::size_t>(y) * w + t.index] += t.weight * tmp[static_cast<std::size_t>(y) * ow + x];
    return out;
}

}  // namespace

ImageTensor resize(const ImageTensor& image, int height, int width, ResizeMode mode) {
    if (height <= 0 || width <= 0) throw InvalidArgument("resize target must be positive");
    if (height == image.height() && width == image.width()) return image;
    const AxisTaps ty = axis_taps(image.height(), height, mode);
    const AxisTaps tx = axis_taps(image.width(), width, mode);
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(height) * width * image.channels());
    for (int c = 0; c < image.channels(); ++c) {
        const auto plane = resize_plane(image.plane(c), image.height(), image.width(), ty, tx);
        data.insert(data.end(), plane.begin(), plane.end());
    }
    return ImageTensor(Shape{height, width, image.channels()}, std::move(data));
}

ImageTensor resize_adjoint(const ImageTensor& grad, int height, int width, ResizeMode mode) {
    if (height == grad.height() && width == grad.width()) return grad;
    const AxisTaps ty = axis_taps(height, grad.height(), mode);
    const AxisTaps tx = axis_taps(width, grad.width(), mode);
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(height) * width * grad.channels());
    for (int c = 0; c < grad.channels(); ++c) {
        const auto plane = resize_plane_adjoint(grad.plane(c), height, width, ty, tx);
        data.insert(data.end(), plane.begin(), plane.end());
    }
    return ImageTensor(Shape{height, width, grad.channels()}, std::move(data));
}

Mask resize(const Mask& mask, int height, int width, ResizeMode mode) {
    if (height == mask.height() && width == mask.width()) return mask;
    const AxisTaps ty = axis_taps(mask.height(), height, mode);
    const AxisTaps tx = axis_taps(mask.width(), width, mode);
    return Mask(height, width, resize_plane(mask.data(), mask.height(), mask.width(), ty, tx));
}

Mask dilate(const Mask& mask, int radius) {
    if (radius < 0) throw InvalidArgument("dilation radius must be non-negative");
    if (radius == 0) return mask;
    std::vector<std::pair<int, int>> offsets;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dy * dy + dx * dx <= radius * radius) offsets.emplace_back(dy, dx);
    Mask out(mask.height(), mask.width());
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) {
            double best = 0.0;
            for (const auto& [dy, dx] : offsets) {
                const int yy = y + dy;
                const int xx = x + dx;
                if (yy < 0 || yy >= mask.height() || xx < 0 || xx >= mask.width()) continue;
                best = std::max(best, mask.at(yy, xx));
            }
            out.at(y, x) = best;
        }
    return out;
}

Mask threshold(const Mask& mask, double level) {
    std::vector<double> data(mask.data().begin(), mask.data().end());
    for (double& v : data) v = v >= level ? 1.0 : 0.0;
    return Mask(mask.height(), mask.width(), std::move(data));
}

ImageTensor avg_pool2(const ImageTensor& image) {
    const int oh = image.height() / 2;
    const int ow = image.width() / 2;
    if (oh == 0 || ow == 0) throw InvalidArgument("image too small to pool");
    ImageTensor out(oh, ow, image.channels());
    for (int c = 0; c < image.channels(); ++c)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                out.at(c, y, x) = 0.25 * ((image.at(c, 2 * y, 2 * x) + image.at(c, 2 * y, 2 * x + 1)) +
                                          (image.at(c, 2 * y + 1, 2 * x) + image.at(c, 2 * y + 1, 2 * x + 1)));
    return out;
}

ImageTensor crop_columns(const ImageTensor& image, int x0, int width) {
    if (x0 < 0 || width <= 0 || x0 + width > image.width()) throw InvalidArgument("column crop out of range");
    ImageTensor out(image.height(), width, image.channels());
    for (int c = 0; c < image.channels(); ++c)
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < width; ++x) out.at(c, y, x) = image.at(c, y, x0 + x);
    return out;
}

ImageTensor concat_columns(const ImageTensor& left, const ImageTensor& right) {
    if (left.height() != right.height() || left.channels() != right.channels())
        throw ShapeMismatch("concat_columns: heights/channels differ");
    ImageTensor out(left.height(), left.width() + right.width(), left.channels());
    for (int c = 0; c < left.channels(); ++c)
        for (int y = 0; y < left.height(); ++y) {
            for (int x = 0; x < left.width(); ++x) out.at(c, y, x) = left.at(c, y, x);
            for (int x = 0; x < right.width(); ++x) out.at(c, y, left.width() + x) = right.at(c, y, x);
        }
    return out;
}

ImageTensor flip_horizontal(const ImageTensor& image) {
    ImageTensor out = ImageTensor::zeros(image.shape());
    const int w = image.width();
    for (int c = 0; c < image.channels(); ++c)
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = image.at(c, y, w - 1 - x);
    return out;
}

Mask flip_horizontal(const Mask& mask) {
    Mask out(mask.height(), mask.width());
    const int w = mask.width();
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = mask.at(y, w - 1 - x);
    return out;
}

ImageTensor shift_left_reflect(const ImageTensor& image, int shift) {
    const int w = image.width();
    if (shift < 0 || shift >= w) throw InvalidArgument("shift must lie in [0, width)");
    const int kept = w - shift;
    ImageTensor out = ImageTensor::zeros(image.shape());
    for (int c = 0; c < image.channels(); ++c)
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = image.at(c, y, reflect_index(x, kept) + shift);
    return out;
}

}  // namespace blendiff
