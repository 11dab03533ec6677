#include "mnd/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "binary_io.hpp"
#include "mnd/errors.hpp"

namespace mnd {

Dataset::Dataset(Shape image_shape, std::size_t num_classes, std::uint64_t seed)
    : image_shape_(std::move(image_shape)), num_classes_(num_classes), seed_(seed) {
  if (image_shape_.size() != 3) throw ShapeError("dataset images must be [C,H,W]");
}

void Dataset::add(std::span<const std::uint8_t> pixels, std::uint32_t label) {
  if (pixels.size() != pixels_per_image()) throw ShapeError("dataset record has the wrong pixel count");
  if (label >= num_classes_) throw UsageError("label " + std::to_string(label) + " out of range");
  pixels_.insert(pixels_.end(), pixels.begin(), pixels.end());
  labels_.push_back(label);
}

std::span<const std::uint8_t> Dataset::pixels(std::size_t i) const {
  if (i >= size()) throw UsageError("record index out of range");
  return std::span<const std::uint8_t>(pixels_).subspan(i * pixels_per_image(), pixels_per_image());
}

Tensor Dataset::image(std::size_t i) const {
  auto px = pixels(i);
  Tensor t(image_shape_);
  for (std::size_t k = 0; k < px.size(); ++k) t[k] = px[k] / 255.0;
  return t;
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  Shape shape{indices.size()};
  shape.insert(shape.end(), image_shape_.begin(), image_shape_.end());
  Tensor t(shape);
  const std::size_t n = pixels_per_image();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    auto px = pixels(indices[b]);
    for (std::size_t k = 0; k < n; ++k) t[b * n + k] = px[k] / 255.0;
  }
  return t;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  const double m = v - c;
  for (double& ch : rgb) ch += m;
  return rgb;
}

enum class Pattern { kStripes, kChecker, kDisk, kRing, kSquare, kCross };

struct ClassStyle {
  Pattern pattern;
  double frequency;  // cycles across the image, for textures
  double angle;      // radians, for stripes
  double hue;
};

// One style per class; classes beyond the table reuse patterns with shifted hue.
constexpr std::array<ClassStyle, 10> kStyles{{
    {Pattern::kStripes, 3.0, 0.0, 0.00},
    {Pattern::kStripes, 3.0, std::numbers::pi / 2, 0.10},
    {Pattern::kStripes, 5.0, std::numbers::pi / 4, 0.20},
    {Pattern::kStripes, 5.0, 3 * std::numbers::pi / 4, 0.30},
    {Pattern::kChecker, 4.0, 0.0, 0.40},
    {Pattern::kDisk, 0.0, 0.0, 0.50},
    {Pattern::kRing, 0.0, 0.0, 0.60},
    {Pattern::kSquare, 0.0, 0.0, 0.70},
    {Pattern::kCross, 0.0, 0.0, 0.80},
    {Pattern::kStripes, 8.0, std::numbers::pi / 3, 0.90},
}};

double pattern_mask(const ClassStyle& st, double u, double v, double phase, double cx, double cy,
                    double size, double angle_jitter) {
  const double tau = 2.0 * std::numbers::pi;
  switch (st.pattern) {
    case Pattern::kStripes: {
      const double a = st.angle + angle_jitter;
      const double t = u * std::cos(a) + v * std::sin(a);
      return 0.5 + 0.5 * std::sin(tau * st.frequency * t + phase);
    }
    case Pattern::kChecker: {
      const double s = std::sin(tau * st.frequency * 0.5 * u + phase) *
                       std::sin(tau * st.frequency * 0.5 * v + phase);
      return s > 0 ? 1.0 : 0.0;
    }
    case Pattern::kDisk: {
      const double r = std::hypot(u - cx, v - cy);
      return std::clamp((size - r) * 20.0 + 0.5, 0.0, 1.0);
    }
    case Pattern::kRing: {
      const double r = std::hypot(u - cx, v - cy);
      return std::clamp((0.08 - std::fabs(r - size)) * 20.0 + 0.5, 0.0, 1.0);
    }
    case Pattern::kSquare: {
      const double d = std::max(std::fabs(u - cx), std::fabs(v - cy));
      return std::clamp((size - d) * 20.0 + 0.5, 0.0, 1.0);
    }
    case Pattern::kCross: {
      const double d = std::min(std::fabs(u - cx), std::fabs(v - cy));
      const double reach = std::max(std::fabs(u - cx), std::fabs(v - cy));
      return (d < 0.07 && reach < size + 0.1) ? 1.0 : 0.0;
    }
  }
  return 0.0;
}

}  // namespace

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (spec.height < 16 || spec.width < 16) throw ConfigError("synthetic images must be at least 16x16");
  Dataset data(Shape{3, spec.height, spec.width}, spec.num_classes, spec.seed);
  const std::size_t h = spec.height, w = spec.width;
  std::vector<std::uint8_t> px(3 * h * w);
  const std::size_t total = spec.num_classes * spec.samples_per_class;
  for (std::size_t rec = 0; rec < total; ++rec) {
    const auto label = static_cast<std::uint32_t>(rec % spec.num_classes);
    std::mt19937_64 rng(splitmix64(spec.seed ^ splitmix64(rec)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    ClassStyle st = kStyles[label % kStyles.size()];
    st.hue += 0.37 * static_cast<double>(label / kStyles.size());
    const double hue = st.hue + (unit(rng) - 0.5) * 0.4;
    const double sat = 0.3 + 0.4 * unit(rng);
    const double val = 0.35 + 0.3 * unit(rng);
    const double contrast = (unit(rng) < 0.5 ? -1.0 : 1.0) * (0.15 + 0.15 * unit(rng));
    const auto fg = hsv_to_rgb(hue, sat, val + contrast);
    const auto bg = hsv_to_rgb(hue + (unit(rng) - 0.5) * 0.2, sat, val);
    const double phase = unit(rng) * 2.0 * std::numbers::pi;
    const double cx = 0.35 + 0.3 * unit(rng);
    const double cy = 0.35 + 0.3 * unit(rng);
    const double size = 0.18 + 0.1 * unit(rng);
    const double angle_jitter = (unit(rng) - 0.5) * 0.3;
    const double sigma = 0.06;

    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
        const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
        const double m = pattern_mask(st, u, v, phase, cx, cy, size, angle_jitter);
        for (std::size_t c = 0; c < 3; ++c) {
          const double val = bg[c] * (1.0 - m) + fg[c] * m + sigma * noise(rng);
          px[(c * h + y) * w + x] = static_cast<std::uint8_t>(std::lround(std::clamp(val, 0.0, 1.0) * 255.0));
        }
      }
    }
    data.add(px, label);
  }
  return data;
}

namespace {
constexpr std::string_view kDatasetMagic{"MNDDAT1\0", 8};
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  detail::ByteWriter out;
  out.text(kDatasetMagic);
  out.u64(data.size());
  for (std::size_t d : data.image_shape()) out.u32(static_cast<std::uint32_t>(d));
  out.u64(data.seed());
  out.u32(static_cast<std::uint32_t>(data.num_classes()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.u32(data.label(i));
    out.bytes(data.pixels(i));
  }
  detail::write_file(path.string(), out.buffer());
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path.string());
  detail::ByteReader in(bytes, "dataset " + path.string());
  auto magic = in.bytes(kDatasetMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kDatasetMagic.begin())) {
    throw CorruptFileError("dataset " + path.string() + ": bad magic");
  }
  const std::uint64_t count = in.u64();
  Shape shape{in.u32(), in.u32(), in.u32()};
  const std::uint64_t seed = in.u64();
  const std::uint32_t classes = in.u32();
  if (shape[0] == 0 || shape[1] == 0 || shape[2] == 0 || classes < 2) {
    throw CorruptFileError("dataset " + path.string() + ": invalid header");
  }
  Dataset data(shape, classes, seed);
  const std::size_t n = shape_size(shape);
  if (in.remaining() != count * (n + 4)) throw CorruptFileError("dataset " + path.string() + ": size mismatch");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t label = in.u32();
    if (label >= classes) throw CorruptFileError("dataset " + path.string() + ": label out of range");
    data.add(in.bytes(n), label);
  }
  return data;
}

}  // namespace mnd
