#include "memeface/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace memeface::image {

void require_image(const Tensor& img, const char* who) {
  if (img.rank() != 3 || img.dim(0) < 1 || img.dim(1) < 1 || img.dim(2) < 1) {
    throw std::invalid_argument(std::string(who) + ": expected a [C, H, W] image, got " + shape_string(img.shape()));
  }
}

Tensor decode_png(std::span<const std::uint8_t> bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw std::runtime_error(std::string("PNG decode failed: ") + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw std::runtime_error("PNG decode failed: " + msg);
  }
  const int height = static_cast<int>(png.height), width = static_cast<int>(png.width);
  Tensor img(Shape{3, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = 2.0 * buffer[(static_cast<std::size_t>(y) * width + x) * 3 + c] / 255.0 - 1.0;
  return img;
}

std::vector<std::uint8_t> encode_png(const Tensor& img) {
  require_image(img, "encode_png");
  const int channels = img.dim(0), height = img.dim(1), width = img.dim(2);
  if (channels != 3 && channels != 1) throw std::invalid_argument("encode_png: need 1 or 3 channels");
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(height) * width * 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = img.at(channels == 3 ? c : 0, y, x);
        const double byte = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
        pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c] = static_cast<std::uint8_t>(byte);
      }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(width);
  png.height = static_cast<png_uint_32>(height);
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("PNG encode failed: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("PNG encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

Tensor load_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_png(bytes);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void save_png(const Tensor& img, const std::filesystem::path& path) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

namespace {

// weights[o][i]: fraction of output cell o covered by input cell i.
std::vector<std::vector<std::pair<int, double>>> area_weights(int in_size, int out_size) {
  std::vector<std::vector<std::pair<int, double>>> weights(static_cast<std::size_t>(out_size));
  const double step = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const double lo = o * step, hi = (o + 1) * step;
    for (int i = static_cast<int>(std::floor(lo)); i < in_size && i < hi; ++i) {
      const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (overlap > 0.0) weights[o].emplace_back(i, overlap / step);
    }
  }
  return weights;
}

}  // namespace

Tensor resize_area(const Tensor& img, int out_height, int out_width) {
  require_image(img, "resize_area");
  if (out_height < 1 || out_width < 1) throw std::invalid_argument("resize_area: empty target size");
  const int channels = img.dim(0), height = img.dim(1), width = img.dim(2);
  if (height == out_height && width == out_width) return img;
  const auto wy = area_weights(height, out_height);
  const auto wx = area_weights(width, out_width);
  Tensor rows(Shape{channels, out_height, width});
  for (int c = 0; c < channels; ++c)
    for (int o = 0; o < out_height; ++o)
      for (int x = 0; x < width; ++x) {
        double s = 0.0;
        for (const auto& [i, w] : wy[o]) s += w * img.at(c, i, x);
        rows.at(c, o, x) = s;
      }
  Tensor out(Shape{channels, out_height, out_width});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < out_height; ++y)
      for (int o = 0; o < out_width; ++o) {
        double s = 0.0;
        for (const auto& [i, w] : wx[o]) s += w * rows.at(c, y, i);
        out.at(c, y, o) = s;
      }
  return out;
}

Tensor resize_nearest(const Tensor& img, int out_height, int out_width) {
  require_image(img, "resize_nearest");
  const int channels = img.dim(0), height = img.dim(1), width = img.dim(2);
  Tensor out(Shape{channels, out_height, out_width});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < out_height; ++y)
      for (int x = 0; x < out_width; ++x)
        out.at(c, y, x) = img.at(c, static_cast<int>(static_cast<long>(y) * height / out_height),
                                 static_cast<int>(static_cast<long>(x) * width / out_width));
  return out;
}

Tensor crop_rows(const Tensor& img, int begin, int end) {
  require_image(img, "crop_rows");
  if (begin < 0 || end > img.dim(1) || begin >= end) throw std::invalid_argument("crop_rows: bad row range");
  const int channels = img.dim(0), width = img.dim(2);
  Tensor out(Shape{channels, end - begin, width});
  for (int c = 0; c < channels; ++c)
    for (int y = begin; y < end; ++y)
      for (int x = 0; x < width; ++x) out.at(c, y - begin, x) = img.at(c, y, x);
  return out;
}

Tensor center_crop_square(const Tensor& img) {
  require_image(img, "center_crop_square");
  const int channels = img.dim(0), height = img.dim(1), width = img.dim(2);
  const int side = std::min(height, width);
  const int y0 = (height - side) / 2, x0 = (width - side) / 2;
  Tensor out(Shape{channels, side, side});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

double pixel_correlation(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("pixel_correlation: size mismatch");
  const double n = static_cast<double>(a.size());
  const double ma = a.sum() / n, mb = b.sum() / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace memeface::image
