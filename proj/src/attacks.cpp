#include "mnd/attacks.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

#include "mnd/errors.hpp"

namespace mnd {

void AttackConfig::validate() const {
  weights.validate();
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("attack step size alpha must be finite and >= 0");
  if (max_iters == 0) throw ConfigError("attack max_iters must be at least 1");
  if (!(convergence_tol >= 0.0)) throw ConfigError("attack convergence_tol must be >= 0");
  if (patience == 0) throw ConfigError("attack patience must be at least 1");
}

void BaselineConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("baseline epsilon must be positive");
  if (!(step > 0.0) || step > epsilon) throw ConfigError("baseline step must lie in (0, epsilon]");
  if (steps == 0) throw ConfigError("baseline steps must be at least 1");
  if (!(decay >= 0.0)) throw ConfigError("baseline decay must be >= 0");
  if (!(transform_prob >= 0.0 && transform_prob <= 1.0)) throw ConfigError("transform_prob must lie in [0,1]");
  if (!(resize_min > 0.0 && resize_min <= resize_max && resize_max <= 1.0)) {
    throw ConfigError("resize range must satisfy 0 < min <= max <= 1");
  }
}

Tensor project_to_grid(const Tensor& image) {
  Tensor out = image;
  for (double& v : out.values()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

bool on_grid(const Tensor& image) {
  for (double v : image.values()) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
    if (std::round(v * 255.0) / 255.0 != v) return false;
  }
  return true;
}

namespace {

bool reached(const Objective& obj, std::size_t cls) {
  return obj.mode == AttackMode::kTargeted ? cls == obj.label : cls != obj.clean_class;
}

void fill_outcome(AttackResult& res, const Classifier& classifier, const Objective& obj) {
  res.adversarial_class = predict(classifier, res.adversarial).label;
  res.clean_class = obj.clean_class;
  if (obj.mode == AttackMode::kTargeted) res.target_class = obj.label;
  res.success = reached(obj, res.adversarial_class);
}

}  // namespace

AttackResult mnd_attack(const Tensor& x, const Classifier& classifier, const AttackConfig& config,
                        long ground_truth) {
  config.validate();
  if (x.shape() != classifier.input_shape()) {
    throw ShapeError("mnd_attack: image " + shape_string(x.shape()) + " does not match classifier input " +
                     shape_string(classifier.input_shape()));
  }
  const Objective obj =
      resolve_objective(classifier, x, config.mode, config.label_source, ground_truth, config.form);

  Tensor z = x;
  z.set_requires_grad(true);
  double previous = 0.0;
  std::size_t streak = 0;
  std::size_t t = 0;
  for (; t < config.max_iters; ++t) {
    ad::Tape tape;
    ad::Var zv = tape.leaf(z);
    ad::Var xv = tape.constant_ref(x);
    LossTerms terms = total_loss_terms(classifier, zv, xv, obj, config.weights);
    const double loss = terms.total.item();
    if (!std::isfinite(loss)) {
      throw DivergenceError("loss became non-finite at iteration " + std::to_string(t), static_cast<int>(t));
    }
    if (t > 0 && reached(obj, argmax(terms.logits.value().values()))) {
      const double change = std::fabs(loss - previous) / std::max(std::fabs(previous), 1e-12);
      if (change < config.convergence_tol &&
          reached(obj, predict(classifier, project_to_grid(z)).label)) {
        ++streak;
      } else {
        streak = 0;
      }
    } else {
      streak = 0;
    }
    if (streak >= config.patience) break;
    previous = loss;

    z.zero_grad();
    tape.backward(terms.total);
    auto g = z.grad();
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw DivergenceError("gradient became non-finite at iteration " + std::to_string(t), static_cast<int>(t));
      }
      z[i] -= config.alpha * g[i];
      if (config.clamp_each_step) z[i] = std::clamp(z[i], 0.0, 1.0);
    }
  }

  AttackResult res;
  res.iterations_used = t;
  z.clear_grad();
  z.set_requires_grad(false);
  res.adversarial = project_to_grid(z);
  fill_outcome(res, classifier, obj);
  ad::Tape tape;
  res.final_loss = total_loss(classifier, tape.constant_ref(res.adversarial), tape.constant_ref(x), obj,
                              config.weights)
                       .item();
  return res;
}

std::string_view baseline_name(Baseline b) {
  switch (b) {
    case Baseline::kBim: return "BIM";
    case Baseline::kPgd: return "PGD";
    case Baseline::kMifgsm: return "MIFGSM";
    case Baseline::kDi2fgsm: return "DI2FGSM";
  }
  return "?";
}

namespace {

// Nearest-neighbour resize to a random size inside the configured range,
// zero-padded back to full size at a random offset, as one gather index.
std::vector<std::ptrdiff_t> diversity_index(const Shape& shape, const BaselineConfig& cfg, std::mt19937_64& rng) {
  const std::size_t c = shape[0], h = shape[1], w = shape[2];
  const auto lo_h = static_cast<std::size_t>(std::ceil(cfg.resize_min * static_cast<double>(h)));
  const auto hi_h = static_cast<std::size_t>(std::floor(cfg.resize_max * static_cast<double>(h)));
  std::uniform_int_distribution<std::size_t> pick_size(std::max<std::size_t>(1, lo_h), std::max(lo_h, hi_h));
  const std::size_t nh = pick_size(rng);
  const std::size_t nw = std::max<std::size_t>(1, nh * w / h);
  std::uniform_int_distribution<std::size_t> off_y(0, h - nh);
  std::uniform_int_distribution<std::size_t> off_x(0, w - nw);
  const std::size_t oy = off_y(rng), ox = off_x(rng);
  std::vector<std::ptrdiff_t> index(c * h * w, -1);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < nh; ++y) {
      const std::size_t sy = y * h / nh;
      for (std::size_t x = 0; x < nw; ++x) {
        const std::size_t sx = x * w / nw;
        index[(ch * h + y + oy) * w + x + ox] = static_cast<std::ptrdiff_t>((ch * h + sy) * w + sx);
      }
    }
  }
  return index;
}

enum class Variant { kBim, kPgd, kMomentum, kDiversity };

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

AttackResult fgsm_family(Variant variant, const Tensor& x, const Classifier& classifier, std::size_t y_gt,
                         const BaselineConfig& cfg) {
  cfg.validate();
  if (x.shape() != classifier.input_shape()) {
    throw ShapeError("baseline attack: image " + shape_string(x.shape()) + " does not match classifier input " +
                     shape_string(classifier.input_shape()));
  }
  if (y_gt >= classifier.num_classes()) throw UsageError("baseline attack: label out of range");
  const Objective obj = resolve_objective(classifier, x, AttackMode::kNonTargeted);
  std::mt19937_64 rng(cfg.seed);
  const Tensor target = one_hot(y_gt, classifier.num_classes());

  auto clip = [&](Tensor& z) {
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = std::clamp(std::clamp(z[i], x[i] - cfg.epsilon, x[i] + cfg.epsilon), 0.0, 1.0);
    }
  };

  Tensor z = x;
  if (variant == Variant::kPgd) {
    std::uniform_real_distribution<double> start(-cfg.epsilon, cfg.epsilon);
    for (double& v : z.values()) v += start(rng);
    clip(z);
  }
  std::vector<double> momentum(z.size(), 0.0);
  std::bernoulli_distribution transform(cfg.transform_prob);

  for (std::size_t t = 0; t < cfg.steps; ++t) {
    z.set_requires_grad(true);
    z.zero_grad();
    ad::Tape tape;
    ad::Var input = tape.leaf(z);
    if (variant == Variant::kDiversity && transform(rng)) {
      input = ad::gather(input, diversity_index(z.shape(), cfg, rng), z.shape());
    }
    ad::Var probs = ad::softmax(classifier.forward(tape, input).logits);
    ad::Var loss = cross_entropy(tape.constant(target), probs);
    if (!std::isfinite(loss.item())) {
      throw DivergenceError("loss became non-finite at step " + std::to_string(t), static_cast<int>(t));
    }
    tape.backward(loss);
    std::vector<double> g(z.grad().begin(), z.grad().end());
    z.clear_grad();
    z.set_requires_grad(false);

    if (variant == Variant::kMomentum) {
      double l1 = 0.0;
      for (double v : g) l1 += std::fabs(v);
      for (std::size_t i = 0; i < g.size(); ++i) {
        momentum[i] = cfg.decay * momentum[i] + (l1 > 0.0 ? g[i] / l1 : 0.0);
        g[i] = momentum[i];
      }
    }
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += cfg.step * sign(g[i]);
    clip(z);
  }

  AttackResult res;
  res.iterations_used = cfg.steps;
  res.adversarial = project_to_grid(z);
  fill_outcome(res, classifier, obj);
  ad::Tape tape;
  res.final_loss = cross_entropy(tape.constant(target),
                                 ad::softmax(classifier.forward(tape, tape.constant_ref(res.adversarial)).logits))
                       .item();
  return res;
}

}  // namespace

AttackResult bim_attack(const Tensor& x, const Classifier& classifier, std::size_t y_gt, const BaselineConfig& config) {
  return fgsm_family(Variant::kBim, x, classifier, y_gt, config);
}

AttackResult pgd_attack(const Tensor& x, const Classifier& classifier, std::size_t y_gt, const BaselineConfig& config) {
  return fgsm_family(Variant::kPgd, x, classifier, y_gt, config);
}

AttackResult mifgsm_attack(const Tensor& x, const Classifier& classifier, std::size_t y_gt,
                           const BaselineConfig& config) {
  return fgsm_family(Variant::kMomentum, x, classifier, y_gt, config);
}

AttackResult di2fgsm_attack(const Tensor& x, const Classifier& classifier, std::size_t y_gt,
                            const BaselineConfig& config) {
  return fgsm_family(Variant::kDiversity, x, classifier, y_gt, config);
}

AttackResult run_baseline(Baseline b, const Tensor& x, const Classifier& classifier, std::size_t y_gt,
                          const BaselineConfig& config) {
  switch (b) {
    case Baseline::kBim: return bim_attack(x, classifier, y_gt, config);
    case Baseline::kPgd: return pgd_attack(x, classifier, y_gt, config);
    case Baseline::kMifgsm: return mifgsm_attack(x, classifier, y_gt, config);
    case Baseline::kDi2fgsm: return di2fgsm_attack(x, classifier, y_gt, config);
  }
  throw UsageError("unknown baseline");
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      while (!failed.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<AblationRow> run_ablation(std::span<const Tensor> images, std::span<const long> labels,
                                      const Classifier& classifier, const AttackConfig& base, std::size_t threads) {
  if (labels.size() != images.size()) throw UsageError("run_ablation: one label per image required");
  std::vector<AblationRow> rows;
  for (AblationPreset preset : kAllPresets) {
    AttackConfig cfg = base;
    cfg.weights = preset_weights(preset, base.weights);
    AblationRow row{preset, std::vector<AttackResult>(images.size()), 0.0, {}, {}};
    parallel_for(images.size(), threads, [&](std::size_t i) {
      row.results[i] = mnd_attack(images[i], classifier, cfg, labels[i]);
    });
    std::vector<double> p, q;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const AttackResult& r = row.results[i];
      if (!r.success) continue;
      ++ok;
      const double v = psnr(r.adversarial, images[i]);
      if (std::isfinite(v)) p.push_back(v);
      q.push_back(ssim_eval(r.adversarial, images[i]));
    }
    row.success_rate = images.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(images.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.psnr = p.size() >= 2 ? mean_std(p) : MeanStd{nan, nan};
    row.ssim = q.size() >= 2 ? mean_std(q) : MeanStd{nan, nan};
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace mnd
