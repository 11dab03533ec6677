#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mnd/classifier.hpp"
#include "mnd/losses.hpp"
#include "mnd/metrics.hpp"
#include "mnd/tensor.hpp"

namespace mnd {

struct AttackConfig {
  AttackMode mode = AttackMode::kNonTargeted;
  LossWeights weights{100.0, 100.0, 100.0, 1.0, Norm::kL1, Norm::kL1, true};
  NonTargetedForm form = NonTargetedForm::kProbPlusLogit;
  LabelSource label_source = LabelSource::kGroundTruth;
  double alpha = 1e-4;
  std::size_t max_iters = 1000;
  double convergence_tol = 1e-6;
  std::size_t patience = 10;
  /// Clamp every iterate to [0,1] instead of only the final one.
  bool clamp_each_step = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AttackResult {
  Tensor adversarial;
  bool success = false;
  std::size_t iterations_used = 0;
  std::size_t clean_class = 0;
  std::size_t adversarial_class = 0;
  std::optional<std::size_t> target_class;
  double final_loss = 0.0;
};

/// Clamp to [0,1] and round to the nearest multiple of 1/255.
Tensor project_to_grid(const Tensor& image);
bool on_grid(const Tensor& image);

/// Gradient descent on the total loss from Z = X, then projection.
/// `ground_truth` < 0 means no label is known.
AttackResult mnd_attack(const Tensor& x, const Classifier& classifier, const AttackConfig& config,
                        long ground_truth = -1);

enum class Baseline { kBim, kPgd, kMifgsm, kDi2fgsm };
inline constexpr Baseline kAllBaselines[] = {Baseline::kBim, Baseline::kPgd, Baseline::kMifgsm, Baseline::kDi2fgsm};
std::string_view baseline_name(Baseline b);

struct BaselineConfig {
  double epsilon = 8.0 / 255.0;
  double step = 2.0 / 255.0;
  std::size_t steps = 10;
  double decay = 1.0;
  double transform_prob = 0.5;
  double resize_min = 0.9;
  double resize_max = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

AttackResult bim_attack(const Tensor& x, const Classifier& classifier, std::size_t y_gt, const BaselineConfig& config);
AttackResult pgd_attack(const Tensor& x, const Classifier& classifier, std::size_t y_gt, const BaselineConfig& config);
AttackResult mifgsm_attack(const Tensor& x, const Classifier& classifier, std::size_t y_gt,
                           const BaselineConfig& config);
AttackResult di2fgsm_attack(const Tensor& x, const Classifier& classifier, std::size_t y_gt,
                            const BaselineConfig& config);
AttackResult run_baseline(Baseline b, const Tensor& x, const Classifier& classifier, std::size_t y_gt,
                          const BaselineConfig& config);

struct AblationRow {
  AblationPreset preset;
  std::vector<AttackResult> results;  // one per input image
  double success_rate = 0.0;
  MeanStd psnr;  // over successful attacks
  MeanStd ssim;
};

/// Runs every preset over the images with the same budget and seeds.
/// Rows with fewer than 2 successes report NaN statistics.
std::vector<AblationRow> run_ablation(std::span<const Tensor> images, std::span<const long> labels,
                                      const Classifier& classifier, const AttackConfig& base,
                                      std::size_t threads = 1);

/// Calls fn(i) for i in [0, n) on up to `threads` workers. The first
/// exception thrown is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace mnd
