#pragma once

// Pixel plumbing: 8-bit rasters, PNG/PGM codecs, diffusion-domain conversion,
// blending, resizing and morphology.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blendiff/tensor.hpp"

namespace blendiff {

struct Raster8 {
    int height = 0;
    int width = 0;
    int channels = 0;  // 1, 3 or 4; interleaved
    std::vector<std::uint8_t> bytes;

    std::size_t size() const { return static_cast<std::size_t>(height) * width * channels; }
    friend bool operator==(const Raster8&, const Raster8&) = default;
};

enum class ImageFormat { png, pgm };

// Alpha (if any) is split off into `alpha`; `raster` then has 1 or 3 channels.
struct DecodedImage {
    Raster8 raster;
    std::optional<Mask> alpha;
};

Raster8 decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Raster8& raster);
Raster8 decode_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm(const Raster8& raster);

Raster8 decode_image(std::span<const std::uint8_t> bytes, ImageFormat format);
std::vector<std::uint8_t> encode_image(const Raster8& raster, ImageFormat format);
// Sniffs the format from magic bytes and splits alpha into a mask (alpha >= 128 -> 1).
DecodedImage decode_with_alpha(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);
// Format from the extension (.png / .pgm), falling back to magic bytes on read.
DecodedImage load_image(const std::string& path);
void save_image(const std::string& path, const Raster8& raster);

// v = u / 127.5 - 1. A 4-channel raster loses its alpha channel.
ImageTensor to_diffusion_domain(const Raster8& raster);
// Clamp to [-1, 1], then u = round((v + 1) * 127.5).
Raster8 from_diffusion_domain(const ImageTensor& image);

// Single-channel raster, value >= 128 -> 1.
Mask mask_from_raster(const Raster8& raster);
Raster8 mask_to_raster(const Mask& mask);

ImageTensor load_tensor(const std::string& path);
Mask load_mask(const std::string& path);
void save_tensor(const std::string& path, const ImageTensor& image);

// fg*m + bg*(1 - m), mask broadcast over channels.
ImageTensor blend(const ImageTensor& fg, const ImageTensor& bg, const Mask& mask);
// Like blend, but exact selection where m is 0 or 1.
ImageTensor paste(const ImageTensor& fg, const ImageTensor& bg, const Mask& mask);
// x * m, mask broadcast over channels.
ImageTensor apply_mask(const ImageTensor& image, const Mask& mask);

enum class ResizeMode { bilinear, area };

ImageTensor resize(const ImageTensor& image, int height, int width, ResizeMode mode = ResizeMode::bilinear);
// Transpose of resize (as a linear map) applied to a gradient on the resized image.
ImageTensor resize_adjoint(const ImageTensor& grad, int height, int width, ResizeMode mode = ResizeMode::bilinear);
Mask resize(const Mask& mask, int height, int width, ResizeMode mode = ResizeMode::bilinear);

// Max filter with a disc structuring element of the given radius.
Mask dilate(const Mask& mask, int radius);
Mask threshold(const Mask& mask, double level = 0.5);

// 2x2 average pooling (trailing odd row/column dropped).
ImageTensor avg_pool2(const ImageTensor& image);

// Column helpers used by extrapolation.
ImageTensor crop_columns(const ImageTensor& image, int x0, int width);
ImageTensor concat_columns(const ImageTensor& left, const ImageTensor& right);
ImageTensor flip_horizontal(const ImageTensor& image);
Mask flip_horizontal(const Mask& mask);
// Shift content left by `shift` columns and fill the vacated right strip by
// mirror reflection of the remaining content.
ImageTensor shift_left_reflect(const ImageTensor& image, int shift);

// Reflect-101 index into [0, n).
int reflect_index(int i, int n);

}  // namespace blendiff
