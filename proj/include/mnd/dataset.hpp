#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mnd/tensor.hpp"

namespace mnd {

/// Labeled 8-bit images stored channel-major, [count][channels][height][width].
class Dataset {
 public:
  Dataset() = default;
  Dataset(Shape image_shape, std::size_t num_classes, std::uint64_t seed);

  const Shape& image_shape() const noexcept { return image_shape_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  std::size_t pixels_per_image() const noexcept { return shape_size(image_shape_); }

  void add(std::span<const std::uint8_t> pixels, std::uint32_t label);

  std::uint32_t label(std::size_t i) const { return labels_.at(i); }
  std::span<const std::uint32_t> labels() const noexcept { return labels_; }
  std::span<const std::uint8_t> pixels(std::size_t i) const;
  /// Image i as [C,H,W] doubles in [0,1].
  Tensor image(std::size_t i) const;
  /// Stacks the given records into [B,C,H,W].
  Tensor batch(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  Shape image_shape_;
  std::size_t num_classes_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<std::uint32_t> labels_;
  std::vector<std::uint8_t> pixels_;
};

struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 500;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t seed = 0;
};

/// Renders colored geometric textures: each class has its own shape, stripe
/// frequency and base hue, perturbed per sample by seeded jitter and noise.
/// Records are interleaved by class (0,1,...,C-1,0,1,...).
Dataset make_synthetic(const SyntheticSpec& spec);

/// Binary layout, little-endian: "MNDDAT1\0", u64 count, u32 channels,
/// u32 height, u32 width, u64 seed, u32 num_classes, then per record a u32
/// label followed by channels*height*width bytes.
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace mnd
