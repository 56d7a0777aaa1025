#pragma once

// Planar (channel-major) image storage used by every numeric stage.

#include <cstddef>
#include <span>
#include <vector>

#include "blendiff/error.hpp"

namespace blendiff {

struct Shape {
    int height = 0;
    int width = 0;
    int channels = 0;

    std::size_t plane() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
    std::size_t size() const { return plane() * static_cast<std::size_t>(channels); }
    friend bool operator==(const Shape&, const Shape&) = default;
};

class ImageTensor {
  public:
    ImageTensor() = default;
    ImageTensor(int height, int width, int channels, double fill = 0.0);
    ImageTensor(Shape shape, std::vector<double> data);

    static ImageTensor zeros(Shape shape) { return ImageTensor(shape.height, shape.width, shape.channels); }
    static ImageTensor filled(Shape shape, double v) { return ImageTensor(shape.height, shape.width, shape.channels, v); }

    int height() const { return shape_.height; }
    int width() const { return shape_.width; }
    int channels() const { return shape_.channels; }
    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
    double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::span<double> plane(int c) { return std::span<double>(data_).subspan(c * shape_.plane(), shape_.plane()); }
    std::span<const double> plane(int c) const {
        return std::span<const double>(data_).subspan(c * shape_.plane(), shape_.plane());
    }

    bool all_finite() const;
    double max_abs() const;

    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

  private:
    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
    }

    Shape shape_{};
    std::vector<double> data_;
};

// Region indicator. Values are clamped into [0, 1] on construction.
class Mask {
  public:
    Mask() = default;
    Mask(int height, int width, double fill = 0.0);
    Mask(int height, int width, std::vector<double> data);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }

    double& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    double at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    bool binary() const;
    bool any() const;
    double coverage() const;
    Mask inverted() const;

    friend bool operator==(const Mask&, const Mask&) = default;

  private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what);
void require_mask_fits(const ImageTensor& image, const Mask& mask, const char* what);

double l2_norm(const ImageTensor& x);

}  // namespace blendiff
