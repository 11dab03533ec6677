#include "mnd/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "binary_io.hpp"
#include "mnd/errors.hpp"

namespace mnd {

void write_pnm(std::span<const std::uint8_t> planes, std::size_t channels, std::size_t height, std::size_t width,
               const std::filesystem::path& path) {
  if (channels != 1 && channels != 3) throw ShapeError("pnm images need 1 or 3 channels");
  if (planes.size() != channels * height * width) throw ShapeError("pnm pixel count mismatch");
  detail::ByteWriter out;
  out.text((channels == 3 ? "P6\n" : "P5\n") + std::to_string(width) + " " + std::to_string(height) + "\n255\n");
  const std::size_t plane = height * width;
  std::vector<std::uint8_t> interleaved(planes.size());
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < channels; ++c) interleaved[i * channels + c] = planes[c * plane + i];
  }
  out.bytes(interleaved);
  detail::write_file(path.string(), out.buffer());
}

void write_pnm(const Tensor& image, const std::filesystem::path& path) {
  std::size_t c = 1, h = 0, w = 0;
  if (image.rank() == 3) {
    c = image.dim(0);
    h = image.dim(1);
    w = image.dim(2);
  } else if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else {
    throw ShapeError("write_pnm: expected [C,H,W] or [H,W]");
  }
  std::vector<std::uint8_t> px(image.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  }
  write_pnm(px, c, h, w, path);
}

namespace {

std::size_t header_number(detail::ByteReader& in, const std::string& what) {
  std::uint8_t ch = in.bytes(1)[0];
  while (std::isspace(ch) || ch == '#') {
    if (ch == '#') {
      while (ch != '\n') ch = in.bytes(1)[0];
    }
    ch = in.bytes(1)[0];
  }
  if (!std::isdigit(ch)) throw CorruptFileError(what + ": malformed header");
  std::size_t v = 0;
  while (std::isdigit(ch)) {
    v = v * 10 + static_cast<std::size_t>(ch - '0');
    if (v > 1u << 20) throw CorruptFileError(what + ": header value too large");
    ch = in.bytes(1)[0];
  }
  if (!std::isspace(ch)) throw CorruptFileError(what + ": malformed header");
  return v;
}

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
  const std::string what = "image " + path.string();
  const auto bytes = detail::read_file(path.string());
  detail::ByteReader in(bytes, what);
  auto magic = in.bytes(2);
  std::size_t channels = 0;
  if (magic[0] == 'P' && magic[1] == '6') {
    channels = 3;
  } else if (magic[0] == 'P' && magic[1] == '5') {
    channels = 1;
  } else {
    throw CorruptFileError(what + ": not a binary P5/P6 file");
  }
  const std::size_t width = header_number(in, what);
  const std::size_t height = header_number(in, what);
  const std::size_t maxval = header_number(in, what);
  if (maxval != 255) throw CorruptFileError(what + ": only 8-bit images are supported");
  if (width == 0 || height == 0) throw CorruptFileError(what + ": empty image");
  const std::size_t plane = width * height;
  auto px = in.bytes(plane * channels);
  Tensor image(Shape{channels, height, width});
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < channels; ++c) image[c * plane + i] = px[i * channels + c] / 255.0;
  }
  return image;
}

Tensor resize_nearest(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw ShapeError("resize_nearest: expected [C,H,W]");
  if (height == 0 || width == 0) throw ShapeError("resize_nearest: empty target size");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out(Shape{c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < height; ++y) {
      const std::size_t sy = y * h / height;
      for (std::size_t x = 0; x < width; ++x) {
        out[(ch * height + y) * width + x] = image[(ch * h + sy) * w + x * w / width];
      }
    }
  }
  return out;
}

std::vector<Tensor> load_image_folder(const std::filesystem::path& dir, std::size_t height, std::size_t width) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Tensor> images;
  for (const auto& f : files) images.push_back(resize_nearest(read_pnm(f), height, width));
  return images;
}

}  // namespace mnd
