#include "mmdt/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace mmdt {

void validate_image(const Image& im) {
  if (im.rank() != 3 || im.dim(2) != 3)
    throw ShapeError("image must be H x W x 3, got " + shape_str(im.shape()));
  for (float v : im.values())
    if (!std::isfinite(v)) throw ShapeError("image contains non-finite values");
}

template <typename S>
Tensor<S> to_batch(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("empty image batch");
  const Index h = image_height(images[0]), w = image_width(images[0]);
  Tensor<S> out(Shape{static_cast<Index>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    require_shape(images[n].shape(), Shape{h, w, 3}, "to_batch");
    const float* src = images[n].data();
    for (Index c = 0; c < 3; ++c) {
      S* dst = out.data() + (static_cast<Index>(n) * 3 + c) * h * w;
      for (Index i = 0; i < h * w; ++i) dst[i] = static_cast<S>(src[i * 3 + c]);
    }
  }
  return out;
}

template <typename S>
Image from_batch(const Tensor<S>& batch, Index n) {
  if (batch.rank() != 4 || batch.dim(1) != 3)
    throw ShapeError("from_batch expects (N,3,H,W), got " + shape_str(batch.shape()));
  const Index h = batch.dim(2), w = batch.dim(3);
  Image out = make_image(h, w);
  for (Index c = 0; c < 3; ++c) {
    const S* src = batch.data() + (n * 3 + c) * h * w;
    for (Index i = 0; i < h * w; ++i) out[i * 3 + c] = static_cast<float>(src[i]);
  }
  return out;
}

template Tensor<float> to_batch<float>(std::span<const Image>);
template Tensor<double> to_batch<double>(std::span<const Image>);
template Image from_batch<float>(const Tensor<float>&, Index);
template Image from_batch<double>(const Tensor<double>&, Index);

Image crop(const Image& im, Index y, Index x, Index height, Index width) {
  if (y < 0 || x < 0 || y + height > image_height(im) || x + width > image_width(im))
    throw ShapeError("crop window outside image");
  Image out = make_image(height, width);
  const Index src_w = image_width(im);
  for (Index r = 0; r < height; ++r)
    std::memcpy(out.data() + r * width * 3, im.data() + ((y + r) * src_w + x) * 3,
                sizeof(float) * static_cast<std::size_t>(width * 3));
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  Image out = make_image(img.height, img.width);
  for (Index i = 0; i < out.size(); ++i) out[i] = static_cast<float>(buf[i]) / 255.f;
  return out;
}

std::uint32_t le32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t le16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

Image read_bmp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  if (bytes.size() < 54 || bytes[0] != 'B' || bytes[1] != 'M')
    throw IoError("not a BMP file: " + path.string());
  const std::uint32_t offset = le32(&bytes[10]);
  const std::int32_t width = static_cast<std::int32_t>(le32(&bytes[18]));
  std::int32_t height = static_cast<std::int32_t>(le32(&bytes[22]));
  const std::uint16_t bpp = le16(&bytes[28]);
  const std::uint32_t compression = le32(&bytes[30]);
  if ((bpp != 24 && bpp != 32) || (compression != 0 && compression != 3) || width <= 0)
    throw IoError("unsupported BMP variant in " + path.string());
  const bool bottom_up = height > 0;
  height = std::abs(height);
  const std::size_t stride = ((static_cast<std::size_t>(width) * bpp / 8) + 3) & ~std::size_t{3};
  if (offset + stride * static_cast<std::size_t>(height) > bytes.size())
    throw IoError("truncated BMP " + path.string());
  Image out = make_image(height, width);
  for (std::int32_t r = 0; r < height; ++r) {
    const unsigned char* row = &bytes[offset + stride * (bottom_up ? height - 1 - r : r)];
    for (std::int32_t c = 0; c < width; ++c) {
      const unsigned char* px = row + c * (bpp / 8);
      float* dst = out.data() + (static_cast<Index>(r) * width + c) * 3;
      dst[0] = px[2] / 255.f;
      dst[1] = px[1] / 255.f;
      dst[2] = px[0] / 255.f;
    }
  }
  return out;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat " + path.string());
  if (size == 0) throw IoError("empty file " + path.string());
  auto ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".png") return read_png(path);
  if (ext == ".bmp") return read_bmp(path);
  throw IoError("unsupported image extension: " + path.string());
}

void write_png(const Image& im, const std::filesystem::path& path) {
  validate_image(im);
  std::vector<png_byte> buf(static_cast<std::size_t>(im.size()));
  for (Index i = 0; i < im.size(); ++i)
    buf[i] = static_cast<png_byte>(std::lround(std::clamp(im[i], 0.f, 1.f) * 255.f));
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image_width(im));
  img.height = static_cast<png_uint_32>(image_height(im));
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

}  // namespace mmdt
