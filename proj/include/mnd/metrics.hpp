#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mnd/classifier.hpp"
#include "mnd/tensor.hpp"

namespace mnd {

/// 10 log10(1 / MSE) with peak 1. Identical images give +infinity.
double psnr(const Tensor& z, const Tensor& x);
/// Same computation as the SSIM loss term, evaluated without gradients.
double ssim_eval(const Tensor& z, const Tensor& x);

/// Per-channel |Z - X| scaled so each channel's maximum becomes 255.
struct DiffMap {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<std::uint8_t> values;  // [C,H,W]
};

DiffMap abs_diff_map(const Tensor& z, const Tensor& x);

/// Fraction of channel samples whose 8-bit values differ by more than `threshold` levels.
double deviation_pixel_ratio(const Tensor& z, const Tensor& x, unsigned threshold = 0);

/// Heatmap [H,W] in [0,1] for `class_index`, taken at the last conv activation.
Tensor grad_cam(const Classifier& classifier, const Tensor& image, std::size_t class_index);

struct ImageRecord {
  std::string method;
  std::size_t image_id = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  bool success = false;
  std::size_t iterations = 0;
  double deviation_ratio = 0.0;
};

struct MethodSummary {
  std::string method;
  std::size_t attempted = 0;
  std::size_t succeeded = 0;
  double success_rate = 0.0;
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;
  double iterations_mean = 0.0;
  double ratio_mean = 0.0;
  /// Successful records left out of the PSNR statistics for being infinite.
  std::size_t inf_excluded = 0;
};

/// Mean and sample standard deviation over the successful records of each
/// method, in the order given. A method with fewer than 2 records is a usage
/// error; statistics that need 2 successes and lack them are NaN.
std::vector<MethodSummary> aggregate(std::span<const ImageRecord> records, std::span<const std::string> methods);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
/// Sample statistics; needs at least 2 values.
MeanStd mean_std(std::span<const double> values);

/// Renders a double for reports: shortest round-trip form, or "inf"/"-inf"/"nan".
std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace mnd
