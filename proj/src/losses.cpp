#include "mnd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mnd/errors.hpp"

namespace mnd {

using ad::Var;

void LossWeights::validate() const {
  const std::pair<const char*, double> betas[] = {{"beta1", beta1}, {"beta2", beta2}, {"beta3", beta3}};
  for (const auto& [name, v] : betas) {
    if (!(v >= 0.0)) throw ConfigError(std::string(name) + " must be non-negative");
  }
  if (!(r > 0.0)) throw ConfigError("power r must be positive");
}

std::string_view preset_name(AblationPreset p) {
  switch (p) {
    case AblationPreset::kNoNorm: return "No norm";
    case AblationPreset::kL1: return "l1";
    case AblationPreset::kL2: return "l2";
    case AblationPreset::kSsim: return "SSIM";
    case AblationPreset::kL1Ssim: return "l1+SSIM";
    case AblationPreset::kL2Ssim: return "l2+SSIM";
    case AblationPreset::kMnd: return "MND";
  }
  return "?";
}

std::string_view preset_key(AblationPreset p) {
  switch (p) {
    case AblationPreset::kNoNorm: return "nonorm";
    case AblationPreset::kL1: return "l1";
    case AblationPreset::kL2: return "l2";
    case AblationPreset::kSsim: return "ssim";
    case AblationPreset::kL1Ssim: return "l1ssim";
    case AblationPreset::kL2Ssim: return "l2ssim";
    case AblationPreset::kMnd: return "mnd";
  }
  return "?";
}

LossWeights preset_weights(AblationPreset p, const LossWeights& full) {
  LossWeights w;
  w.r = full.r;
  w.dev_norm = Norm::kNone;
  w.grad_norm = Norm::kNone;
  w.use_ssim = false;
  const bool l1 = p == AblationPreset::kL1 || p == AblationPreset::kL1Ssim;
  const bool l2 = p == AblationPreset::kL2 || p == AblationPreset::kL2Ssim;
  const bool with_ssim =
      p == AblationPreset::kSsim || p == AblationPreset::kL1Ssim || p == AblationPreset::kL2Ssim;
  if (l1 || l2) {
    w.dev_norm = l1 ? Norm::kL1 : Norm::kL2;
    w.beta1 = full.beta1;
  }
  if (with_ssim) {
    w.use_ssim = true;
    w.beta2 = full.beta2;
  }
  if (p == AblationPreset::kMnd) {
    w = full;
  }
  return w;
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_image(const Var& a, const char* what) {
  if (a.shape().size() != 3) throw ShapeError(std::string(what) + ": expected a [C,H,W] image");
}

// <y, transform(v)> restricted to the support of y, so a transform with an
// unbounded derivative at 0 (pow with r < 1) never meets a zero weight.
template <class Transform>
Var weighted_pick(const Var& y, const Var& v, Transform transform) {
  const Tensor& yv = y.value();
  if (yv.shape() != v.shape() || yv.shape().size() != 1) {
    throw ShapeError("label vector length does not match the prediction");
  }
  std::vector<std::ptrdiff_t> index;
  std::vector<double> weight;
  for (std::size_t i = 0; i < yv.size(); ++i) {
    if (yv[i] != 0.0) {
      index.push_back(static_cast<std::ptrdiff_t>(i));
      weight.push_back(yv[i]);
    }
  }
  ad::Tape& tape = *v.tape();
  if (index.empty()) return tape.constant(Tensor::scalar(0.0));
  const std::size_t m = index.size();
  Var picked = ad::gather(v, std::move(index), Shape{m});
  return ad::sum(ad::mul(transform(picked), tape.constant(Tensor(Shape{m}, std::move(weight)))));
}

struct ChannelSsim {
  Var mu_z, mu_x, var_z, var_x, cov, value;
};

std::vector<ChannelSsim> ssim_channels(const Var& z, const Var& x) {
  require_same_shape(z, x, "ssim");
  require_image(z, "ssim");
  const std::size_t channels = z.shape()[0];
  const std::size_t n = z.shape()[1] * z.shape()[2];
  if (n < 2) throw ShapeError("ssim: a channel needs at least 2 pixels");
  const double inv = 1.0 / static_cast<double>(n - 1);
  std::vector<ChannelSsim> out;
  for (std::size_t c = 0; c < channels; ++c) {
    ChannelSsim s;
    Var zc = ad::slice(z, c, c + 1);
    Var xc = ad::slice(x, c, c + 1);
    s.mu_z = ad::mean(zc);
    s.mu_x = ad::mean(xc);
    Var dz = ad::sub(zc, s.mu_z);
    Var dx = ad::sub(xc, s.mu_x);
    s.var_z = ad::scale(ad::sum(ad::mul(dz, dz)), inv);
    s.var_x = ad::scale(ad::sum(ad::mul(dx, dx)), inv);
    s.cov = ad::scale(ad::sum(ad::mul(dz, dx)), inv);
    // Written so that z == x makes numerator and denominator bitwise equal.
    Var num = ad::mul(ad::add_scalar(ad::scale(ad::mul(s.mu_z, s.mu_x), 2.0), kSsimC1),
                      ad::add_scalar(ad::scale(s.cov, 2.0), kSsimC2));
    Var den = ad::mul(ad::add_scalar(ad::add(ad::mul(s.mu_z, s.mu_z), ad::mul(s.mu_x, s.mu_x)), kSsimC1),
                      ad::add_scalar(ad::add(s.var_z, s.var_x), kSsimC2));
    s.value = ad::div(num, den);
    out.push_back(s);
  }
  return out;
}

// Image shifted by (dy, dx) with replicate padding: out[y][x] = image[y+dy][x+dx].
Var shifted(const Var& image, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  const Shape s = image.shape();
  const auto h = static_cast<std::ptrdiff_t>(s[1]), w = static_cast<std::ptrdiff_t>(s[2]);
  std::vector<std::ptrdiff_t> index;
  index.reserve(image.size());
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(s[0]); ++c) {
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        index.push_back((c * h + std::clamp<std::ptrdiff_t>(y + dy, 0, h - 1)) * w +
                        std::clamp<std::ptrdiff_t>(x + dx, 0, w - 1));
      }
    }
  }
  return ad::gather(image, std::move(index), s);
}

}  // namespace

Var adv_nontargeted(const Var& y_gt, const Var& y_hat, const Var& u_hat) {
  if (y_hat.shape() != u_hat.shape()) throw ShapeError("adv_nontargeted: probabilities and logits differ in length");
  return weighted_pick(y_gt, ad::add(y_hat, u_hat), [](const Var& v) { return v; });
}

Var adv_nontargeted_power(const Var& y_gt, const Var& y_hat, double r) {
  if (!(r > 0.0)) throw ConfigError("power r must be positive");
  return weighted_pick(y_gt, y_hat, [r](const Var& v) { return ad::pow(v, r); });
}

Var adv_targeted(const Var& y_t, const Var& y_hat, double r) {
  if (!(r > 0.0)) throw ConfigError("power r must be positive");
  return ad::negate(weighted_pick(y_t, y_hat, [r](const Var& v) { return ad::pow(v, r); }));
}

Tensor select_target(const Tensor& y) {
  if (y.empty()) throw ShapeError("select_target: empty vector");
  return one_hot(argmin(y.values()), y.size());
}

Var deviation(const Var& z, const Var& x, Norm norm) {
  require_same_shape(z, x, "deviation");
  switch (norm) {
    case Norm::kL1: return ad::sum(ad::abs(ad::sub(z, x)));
    case Norm::kL2: return ad::l2_norm(ad::sub(z, x));
    case Norm::kNone: break;
  }
  throw ConfigError("deviation needs an l1 or l2 norm");
}

Var ssim(const Var& z, const Var& x) {
  auto channels = ssim_channels(z, x);
  Var total = channels[0].value;
  for (std::size_t c = 1; c < channels.size(); ++c) total = ad::add(total, channels[c].value);
  return ad::scale(total, 1.0 / static_cast<double>(channels.size()));
}

std::vector<SsimStats> ssim_stats(const Tensor& z, const Tensor& x) {
  ad::Tape tape;
  auto channels = ssim_channels(tape.constant_ref(z), tape.constant_ref(x));
  std::vector<SsimStats> out;
  for (const ChannelSsim& c : channels) {
    SsimStats s;
    s.mu_z = c.mu_z.item();
    s.mu_x = c.mu_x.item();
    s.sigma_z = std::sqrt(c.var_z.item());
    s.sigma_x = std::sqrt(c.var_x.item());
    s.sigma_zx = c.cov.item();
    s.c1 = kSsimC1;
    s.c2 = kSsimC2;
    s.value = c.value.item();
    out.push_back(s);
  }
  return out;
}

Var sobel(const Var& image) {
  require_image(image, "sobel");
  const Shape s = image.shape();
  if (s[1] < 3 || s[2] < 3) throw ShapeError("sobel: image smaller than 3x3");
  // Pairwise differences first, so flat regions give exactly 0.
  auto p = [&](std::ptrdiff_t dy, std::ptrdiff_t dx) { return shifted(image, dy, dx); };
  Var gx = ad::add(ad::add(ad::sub(p(-1, -1), p(-1, 1)), ad::scale(ad::sub(p(0, -1), p(0, 1)), 2.0)),
                   ad::sub(p(1, -1), p(1, 1)));
  Var gy = ad::add(ad::add(ad::sub(p(-1, -1), p(1, -1)), ad::scale(ad::sub(p(-1, 0), p(1, 0)), 2.0)),
                   ad::sub(p(-1, 1), p(1, 1)));
  return ad::hypot(gx, gy);
}

Var grad_similarity(const Var& z, const Var& x, Norm norm) {
  require_same_shape(z, x, "grad_similarity");
  return deviation(sobel(z), sobel(x), norm);
}

Var pqp_loss(const Var& z, const Var& x, const LossWeights& w) {
  w.validate();
  require_same_shape(z, x, "pqp_loss");
  ad::Tape& tape = *z.tape();
  Var total = tape.constant(Tensor::scalar(0.0));
  if (w.beta1 > 0.0 && w.dev_norm != Norm::kNone) {
    total = ad::add(total, ad::scale(deviation(z, x, w.dev_norm), w.beta1));
  }
  if (w.beta2 > 0.0 && w.use_ssim) {
    total = ad::sub(total, ad::scale(ssim(z, x), w.beta2));
  }
  if (w.beta3 > 0.0 && w.grad_norm != Norm::kNone) {
    total = ad::add(total, ad::scale(grad_similarity(z, x, w.grad_norm), w.beta3));
  }
  return total;
}

Objective resolve_objective(const Classifier& classifier, const Tensor& x, AttackMode mode, LabelSource source,
                            long ground_truth, NonTargetedForm form) {
  const Prediction clean = predict(classifier, x);
  Objective obj;
  obj.mode = mode;
  obj.form = form;
  obj.clean_class = clean.label;
  if (mode == AttackMode::kTargeted) {
    obj.label = argmin(clean.probabilities.values());
  } else if (source == LabelSource::kGroundTruth && ground_truth >= 0) {
    if (static_cast<std::size_t>(ground_truth) >= classifier.num_classes()) {
      throw UsageError("ground-truth label out of range");
    }
    obj.label = static_cast<std::size_t>(ground_truth);
  } else {
    obj.label = clean.label;
  }
  return obj;
}

namespace {

Var adversarial_from_logits(const Classifier& classifier, const Var& logits, const Objective& obj, double r) {
  ad::Tape& tape = *logits.tape();
  Var y_hat = ad::softmax(logits);
  Var label = tape.constant(one_hot(obj.label, classifier.num_classes()));
  if (obj.mode == AttackMode::kTargeted) return adv_targeted(label, y_hat, r);
  if (obj.form == NonTargetedForm::kProbPower) return adv_nontargeted_power(label, y_hat, r);
  return adv_nontargeted(label, y_hat, logits);
}

}  // namespace

Var adversarial_loss(const Classifier& classifier, const Var& z, const Objective& obj, double r) {
  return adversarial_from_logits(classifier, classifier.forward(*z.tape(), z).logits, obj, r);
}

LossTerms total_loss_terms(const Classifier& classifier, const Var& z, const Var& x, const Objective& obj,
                           const LossWeights& w) {
  w.validate();
  Var logits = classifier.forward(*z.tape(), z).logits;
  return {ad::add(adversarial_from_logits(classifier, logits, obj, w.r), pqp_loss(z, x, w)), logits};
}

Var total_loss(const Classifier& classifier, const Var& z, const Var& x, const Objective& obj,
               const LossWeights& w) {
  return total_loss_terms(classifier, z, x, obj, w).total;
}

}  // namespace mnd
