#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "mmdt/tensor.hpp"

namespace mmdt {

/// H x W x 3 image, interleaved row-major, values nominally in [0, 1].
using Image = Tensor<float>;

inline Image make_image(Index height, Index width, float fill = 0.f) {
  return Image(Shape{height, width, 3}, fill);
}

inline Index image_height(const Image& im) { return im.dim(0); }
inline Index image_width(const Image& im) { return im.dim(1); }

/// Throws ShapeError unless `im` is H x W x 3 with finite values.
void validate_image(const Image& im);

/// Stacks images of equal size into an (N, 3, H, W) batch.
template <typename S>
Tensor<S> to_batch(std::span<const Image> images);
template <typename S>
Tensor<S> to_batch(const Image& image) {
  return to_batch<S>(std::span<const Image>(&image, 1));
}
/// Extracts sample `n` of an (N, 3, H, W) batch as an image.
template <typename S>
Image from_batch(const Tensor<S>& batch, Index n);

/// Crops an H x W x 3 window with top-left corner (y, x).
Image crop(const Image& im, Index y, Index x, Index height, Index width);

/// Reads PNG (8/16-bit gray, RGB, RGBA) or uncompressed 24/32-bit BMP; values scaled to [0, 1].
Image read_image(const std::filesystem::path& path);
/// Writes an 8-bit RGB PNG after clamping to [0, 1].
void write_png(const Image& im, const std::filesystem::path& path);

}  // namespace mmdt
