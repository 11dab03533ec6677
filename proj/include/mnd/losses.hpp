#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

#include "mnd/autodiff.hpp"
#include "mnd/classifier.hpp"
#include "mnd/tensor.hpp"

namespace mnd {

enum class Norm { kNone, kL1, kL2 };

enum class AttackMode { kNonTargeted, kTargeted };

/// Which expression drives the non-targeted attack.
enum class NonTargetedForm {
  kProbPlusLogit,  // <y_gt, y_hat + u_hat>
  kProbPower,      // <y_gt, y_hat^r>
};

/// Where the non-targeted label comes from.
enum class LabelSource { kGroundTruth, kCleanPrediction };

struct LossWeights {
  double beta1 = 0.0;  // deviation
  double beta2 = 0.0;  // SSIM
  double beta3 = 0.0;  // gradient similarity
  double r = 1.0;      // power of the targeted loss
  Norm dev_norm = Norm::kL1;
  Norm grad_norm = Norm::kL1;
  bool use_ssim = true;

  /// Throws ConfigError on negative betas or r <= 0.
  void validate() const;
};

enum class AblationPreset { kNoNorm, kL1, kL2, kSsim, kL1Ssim, kL2Ssim, kMnd };

inline constexpr std::array<AblationPreset, 7> kAllPresets{
    AblationPreset::kNoNorm, AblationPreset::kL1,     AblationPreset::kL2, AblationPreset::kSsim,
    AblationPreset::kL1Ssim, AblationPreset::kL2Ssim, AblationPreset::kMnd};

/// Row label as printed in reports ("No norm", "l1", ..., "MND").
std::string_view preset_name(AblationPreset p);
/// Machine name used on the command line ("nonorm", "l1", ..., "mnd").
std::string_view preset_key(AblationPreset p);

/// Weights of an ablation row. `full` supplies the betas and r; each preset
/// keeps only its own terms (the L2 rows switch dev_norm to L2).
LossWeights preset_weights(AblationPreset p, const LossWeights& full);

/// Per-channel SSIM statistics.
struct SsimStats {
  double mu_z = 0.0, mu_x = 0.0;
  double sigma_z = 0.0, sigma_x = 0.0;
  double sigma_zx = 0.0;
  double c1 = 0.0, c2 = 0.0;
  double value = 0.0;
};

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// Adversarial terms. Label vectors are [C]; y_hat is the softmax output and
// u_hat the logits.
ad::Var adv_nontargeted(const ad::Var& y_gt, const ad::Var& y_hat, const ad::Var& u_hat);
ad::Var adv_nontargeted_power(const ad::Var& y_gt, const ad::Var& y_hat, double r);
ad::Var adv_targeted(const ad::Var& y_t, const ad::Var& y_hat, double r);
/// One-hot at the smallest entry of y (first index on ties).
Tensor select_target(const Tensor& y);

// Perceptual terms over [C,H,W] images.
ad::Var deviation(const ad::Var& z, const ad::Var& x, Norm norm);
ad::Var ssim(const ad::Var& z, const ad::Var& x);
std::vector<SsimStats> ssim_stats(const Tensor& z, const Tensor& x);
/// Sobel magnitude per channel with replicate padding.
ad::Var sobel(const ad::Var& image);
ad::Var grad_similarity(const ad::Var& z, const ad::Var& x, Norm norm);
ad::Var pqp_loss(const ad::Var& z, const ad::Var& x, const LossWeights& w);

/// The adversarial goal of one attack, resolved once from the clean image.
struct Objective {
  AttackMode mode = AttackMode::kNonTargeted;
  NonTargetedForm form = NonTargetedForm::kProbPlusLogit;
  std::size_t clean_class = 0;
  /// Class penalized (non-targeted) or pursued (targeted).
  std::size_t label = 0;
};

/// Non-targeted: label is `ground_truth` when the source is kGroundTruth and
/// a label is given (>= 0), otherwise the clean prediction. Targeted: label is
/// select_target of the clean prediction.
Objective resolve_objective(const Classifier& classifier, const Tensor& x, AttackMode mode,
                            LabelSource source = LabelSource::kGroundTruth, long ground_truth = -1,
                            NonTargetedForm form = NonTargetedForm::kProbPlusLogit);

struct LossTerms {
  ad::Var total;
  ad::Var logits;  // classifier output on z, for the success check
};

LossTerms total_loss_terms(const Classifier& classifier, const ad::Var& z, const ad::Var& x, const Objective& obj,
                           const LossWeights& w);

ad::Var adversarial_loss(const Classifier& classifier, const ad::Var& z, const Objective& obj, double r);
ad::Var total_loss(const Classifier& classifier, const ad::Var& z, const ad::Var& x, const Objective& obj,
                   const LossWeights& w);

}  // namespace mnd
