#include "blendiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "blendiff/simd/kernels.hpp"

namespace blendiff {

UnknownPrompt::UnknownPrompt(const std::string& prompt, std::vector<std::string> available)
    : Error([&] {
          std::string msg = "unknown prompt '" + prompt + "'; available:";
          for (const auto& key : available) msg += " '" + key + "'";
          return msg;
      }()),
      prompt_(prompt),
      available_(std::move(available)) {}

ImageTensor::ImageTensor(int height, int width, int channels, double fill) : shape_{height, width, channels} {
    if (height <= 0 || width <= 0 || channels <= 0)
        throw InvalidArgument("image dimensions must be positive");
    data_.assign(shape_.size(), fill);
}

ImageTensor::ImageTensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0)
        throw InvalidArgument("image dimensions must be positive");
    if (data_.size() != shape.size()) throw ShapeMismatch("image data length does not match H*W*C");
}

bool ImageTensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double ImageTensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

Mask::Mask(int height, int width, double fill) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) throw InvalidArgument("mask dimensions must be positive");
    data_.assign(static_cast<std::size_t>(height) * width, std::clamp(fill, 0.0, 1.0));
}

Mask::Mask(int height, int width, std::vector<double> data) : height_(height), width_(width), data_(std::move(data)) {
    if (height <= 0 || width <= 0) throw InvalidArgument("mask dimensions must be positive");
    if (data_.size() != static_cast<std::size_t>(height) * width)
        throw ShapeMismatch("mask data length does not match H*W");
    for (double& v : data_) v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
}

bool Mask::binary() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

bool Mask::any() const {
    return std::any_of(data_.begin(), data_.end(), [](double v) { return v > 0.0; });
}

double Mask::coverage() const {
    if (data_.empty()) return 0.0;
    return simd::active_kernels().sum(data_.data(), data_.size()) / static_cast<double>(data_.size());
}

Mask Mask::inverted() const {
    std::vector<double> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](double v) { return 1.0 - v; });
    return Mask(height_, width_, std::move(out));
}

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeMismatch(std::string(what) + ": shape mismatch (" + std::to_string(a.height()) + "x" +
                            std::to_string(a.width()) + "x" + std::to_string(a.channels()) + " vs " +
                            std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                            std::to_string(b.channels()) + ")");
    }
}

void require_mask_fits(const ImageTensor& image, const Mask& mask, const char* what) {
    if (image.height() != mask.height() || image.width() != mask.width())
        throw ShapeMismatch(std::string(what) + ": mask dimensions do not match image");
}

double l2_norm(const ImageTensor& x) {
    const auto d = x.data();
    return std::sqrt(simd::active_kernels().dot(d.data(), d.data(), d.size()));
}

}  // namespace blendiff
