#include "mnd/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "mnd/autodiff.hpp"
#include "mnd/errors.hpp"
#include "mnd/losses.hpp"

namespace mnd {

namespace {

void require_same_shape(const Tensor& z, const Tensor& x, const char* what) {
  if (z.shape() != x.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(z.shape()) + " vs " +
                     shape_string(x.shape()));
  }
}

int level(double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

double psnr(const Tensor& z, const Tensor& x) {
  require_same_shape(z, x, "psnr");
  if (z.empty()) throw ShapeError("psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z[i] - x[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(static_cast<double>(z.size()) / se);
}

double ssim_eval(const Tensor& z, const Tensor& x) {
  require_same_shape(z, x, "ssim");
  ad::Tape tape;
  return ssim(tape.constant_ref(z), tape.constant_ref(x)).item();
}

DiffMap abs_diff_map(const Tensor& z, const Tensor& x) {
  require_same_shape(z, x, "abs_diff_map");
  if (z.rank() != 3) throw ShapeError("abs_diff_map: expected [C,H,W] images");
  DiffMap map{z.dim(0), z.dim(1), z.dim(2), std::vector<std::uint8_t>(z.size(), 0)};
  const std::size_t plane = map.height * map.width;
  for (std::size_t c = 0; c < map.channels; ++c) {
    double peak = 0.0;
    for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) peak = std::max(peak, std::fabs(z[i] - x[i]));
    if (peak == 0.0) continue;
    for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
      map.values[i] = static_cast<std::uint8_t>(std::lround(std::fabs(z[i] - x[i]) / peak * 255.0));
    }
  }
  return map;
}

double deviation_pixel_ratio(const Tensor& z, const Tensor& x, unsigned threshold) {
  require_same_shape(z, x, "deviation_pixel_ratio");
  if (z.empty()) throw ShapeError("deviation_pixel_ratio: empty image");
  std::size_t changed = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (static_cast<unsigned>(std::abs(level(z[i]) - level(x[i]))) > threshold) ++changed;
  }
  return static_cast<double>(changed) / static_cast<double>(z.size());
}

Tensor grad_cam(const Classifier& classifier, const Tensor& image, std::size_t class_index) {
  if (class_index >= classifier.num_classes()) throw UsageError("grad_cam: class index out of range");
  if (image.shape() != classifier.input_shape()) throw ShapeError("grad_cam: image does not match the classifier");
  Tensor input = image;
  input.set_requires_grad(true);
  ad::Tape tape;
  ForwardPass pass = classifier.forward(tape, tape.leaf(input));
  if (!pass.features.valid()) throw UsageError("grad_cam: classifier has no conv activation");
  ad::Var score = ad::gather(pass.logits, {static_cast<std::ptrdiff_t>(class_index)}, Shape{1});
  tape.backward(score);

  const Tensor& act = pass.features.value();  // [1,K,h,w]
  auto grad = tape.grad_of(pass.features);
  const std::size_t k = act.dim(1), h = act.dim(2), w = act.dim(3);
  std::vector<double> cam(h * w, 0.0);
  if (!grad.empty()) {
    for (std::size_t c = 0; c < k; ++c) {
      double weight = 0.0;
      for (std::size_t i = 0; i < h * w; ++i) weight += grad[c * h * w + i];
      weight /= static_cast<double>(h * w);
      for (std::size_t i = 0; i < h * w; ++i) cam[i] += weight * act[c * h * w + i];
    }
  }
  for (double& v : cam) v = std::max(v, 0.0);

  // Bilinear upsample with half-pixel centers.
  const std::size_t out_h = image.dim(1), out_w = image.dim(2);
  Tensor heat(Shape{out_h, out_w});
  auto source = [](std::size_t i, std::size_t out, std::size_t in) {
    const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = source(y, out_h, h);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = source(x, out_w, w);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = cam[y0 * w + x0] * (1 - fx) + cam[y0 * w + x1] * fx;
      const double bottom = cam[y1 * w + x0] * (1 - fx) + cam[y1 * w + x1] * fx;
      heat[y * out_w + x] = top * (1 - fy) + bottom * fy;
    }
  }
  const auto [lo, hi] = std::minmax_element(heat.values().begin(), heat.values().end());
  const double a = *lo, b = *hi;
  for (double& v : heat.values()) v = b > a ? (v - a) / (b - a) : 0.0;
  return heat;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.size() < 2) throw UsageError("mean/std needs at least 2 values");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::vector<MethodSummary> aggregate(std::span<const ImageRecord> records, std::span<const std::string> methods) {
  std::vector<MethodSummary> out;
  for (const std::string& method : methods) {
    MethodSummary s;
    s.method = method;
    std::vector<double> p, q, iters, ratio;
    for (const ImageRecord& r : records) {
      if (r.method != method) continue;
      ++s.attempted;
      if (!r.success) continue;
      ++s.succeeded;
      if (std::isinf(r.psnr)) {
        ++s.inf_excluded;
      } else {
        p.push_back(r.psnr);
      }
      q.push_back(r.ssim);
      iters.push_back(static_cast<double>(r.iterations));
      ratio.push_back(r.deviation_ratio);
    }
    if (s.attempted < 2) throw UsageError("aggregate: method " + method + " needs at least 2 records");
    s.success_rate = static_cast<double>(s.succeeded) / static_cast<double>(s.attempted);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto fill = [&](const std::vector<double>& v, double& mean, double* sd) {
      if (v.size() >= 2) {
        const MeanStd ms = mean_std(v);
        mean = ms.mean;
        if (sd) *sd = ms.std;
      } else {
        mean = v.size() == 1 ? v[0] : nan;
        if (sd) *sd = nan;
      }
    };
    fill(p, s.psnr_mean, &s.psnr_std);
    fill(q, s.ssim_mean, &s.ssim_std);
    fill(iters, s.iterations_mean, nullptr);
    fill(ratio, s.ratio_mean, nullptr);
    out.push_back(s);
  }
  return out;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw UsageError("not a number: '" + s + "'");
  return v;
}

}  // namespace mnd
