#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mnd/tensor.hpp"

namespace mnd {

/// Binary portable pixmaps. A [3,H,W] tensor is stored as P6, a [1,H,W] or
/// [H,W] tensor as P5. Values are clamped to [0,1] and rounded to 8 bits.
void write_pnm(const Tensor& image, const std::filesystem::path& path);
/// Raw 8-bit planes [C,H,W] with C = 1 or 3.
void write_pnm(std::span<const std::uint8_t> planes, std::size_t channels, std::size_t height, std::size_t width,
               const std::filesystem::path& path);
/// Reads P5 or P6 (maxval 255) into [C,H,W] with values / 255.
Tensor read_pnm(const std::filesystem::path& path);

/// Nearest-neighbour resize of a [C,H,W] image.
Tensor resize_nearest(const Tensor& image, std::size_t height, std::size_t width);

/// Every .ppm file of a directory in name order, resized to height x width.
std::vector<Tensor> load_image_folder(const std::filesystem::path& dir, std::size_t height, std::size_t width);

}  // namespace mnd
