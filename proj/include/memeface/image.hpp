#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "memeface/tensor.hpp"

// Images are Tensors of shape [3, H, W], channel-first, pixel values in [-1, 1].
// PNG files store 8-bit RGB; v = 2 * byte / 255 - 1.
namespace memeface::image {

Tensor decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Tensor& img);
Tensor load_png(const std::filesystem::path& path);
void save_png(const Tensor& img, const std::filesystem::path& path);

// Box-filter resampling: every output pixel is the area-weighted mean of the
// input pixels it covers. Works for both down- and up-scaling.
Tensor resize_area(const Tensor& img, int out_height, int out_width);
Tensor resize_nearest(const Tensor& img, int out_height, int out_width);

// Rows [begin, end).
Tensor crop_rows(const Tensor& img, int begin, int end);
// Largest centred square.
Tensor center_crop_square(const Tensor& img);

// Pearson correlation of the flattened pixels; 0 when either side is constant.
double pixel_correlation(const Tensor& a, const Tensor& b);

void require_image(const Tensor& img, const char* who);

}  // namespace memeface::image
