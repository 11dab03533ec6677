#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <random>
#include <vector>

#include "mnd/autodiff.hpp"
#include "mnd/classifier.hpp"
#include "mnd/dataset.hpp"
#include "mnd/losses.hpp"
#include "mnd/tensor.hpp"

namespace mnd::testing {

inline Tensor uniform(std::mt19937_64& rng, const Shape& shape, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (double& v : t.values()) v = d(rng);
  return t;
}

/// x plus a perturbation whose magnitude lies in [lo, hi] with random sign,
/// so no coordinate sits near the kink of |z - x|.
inline Tensor away_from(std::mt19937_64& rng, const Tensor& x, double lo, double hi) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  Tensor z = x;
  for (double& v : z.values()) v += sign(rng) ? mag(rng) : -mag(rng);
  return z;
}

/// Resamples pixels of z in [lo, hi] until it is clear of every non-smooth
/// set the losses have: |z - x| >= 1e-3, Sobel magnitude of z >= sobel_margin
/// and |sobel(z) - sobel(x)| >= 1e-3. The magnitude is singular at 0 and a
/// central difference at distance m from it carries curvature error near
/// (2 eps / m)^2, which neighbouring terms can amplify when they cancel.
inline Tensor clear_of_kinks(std::mt19937_64& rng, Tensor z, const Tensor& x, double lo = 0.05,
                             double hi = 0.95, double sobel_margin = 0.2) {
  std::uniform_real_distribution<double> d(lo, hi);
  const std::size_t h = z.dim(1), w = z.dim(2);
  ad::Tape tape;
  const Tensor sx = sobel(tape.constant(x)).value();
  for (int round = 0; round < 1000; ++round) {
    const Tensor sz = sobel(tape.constant(z)).value();
    std::vector<std::size_t> redraw;
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (std::fabs(z[i] - x[i]) < 1e-3) redraw.push_back(i);
      if (sz[i] >= sobel_margin && std::fabs(sz[i] - sx[i]) >= 1e-3) continue;
      const std::size_t ch = i / (h * w), y = i / w % h, xx = i % w;
      for (std::size_t yy = y > 0 ? y - 1 : 0; yy <= std::min(h - 1, y + 1); ++yy) {
        for (std::size_t xj = xx > 0 ? xx - 1 : 0; xj <= std::min(w - 1, xx + 1); ++xj) {
          redraw.push_back((ch * h + yy) * w + xj);
        }
      }
    }
    if (redraw.empty()) return z;
    for (std::size_t i : redraw) z[i] = d(rng);
  }
  throw std::runtime_error("clear_of_kinks: no clean point found");
}

inline Tensor quantize(const Tensor& t) {
  Tensor q = t;
  for (double& v : q.values()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return q;
}

using LossFn = std::function<ad::Var(ad::Tape&, const ad::Var&)>;

struct FdReport {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// Central differences against the tape gradient. A coordinate whose probes
/// change the tape's branch signature straddles a kink and is skipped. The
/// relative error denominator is floored at floor_ratio times the gradient
/// scale so entries that are numerically zero do not dominate.
inline FdReport fd_check(const LossFn& f, const Tensor& at, double eps = 1e-4, double floor_ratio = 1e-3) {
  Tensor x = at;
  x.set_requires_grad(true);
  std::uint64_t base = 0;
  {
    ad::Tape tape;
    tape.track_regions(true);
    ad::Var y = f(tape, tape.leaf(x));
    tape.backward(y);
    base = tape.region_signature();
  }
  std::vector<double> g(x.size(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), g.begin());

  auto eval = [&](Tensor& p, std::uint64_t& sig) {
    ad::Tape tape;
    tape.track_regions(true);
    const double v = f(tape, tape.leaf(p)).item();
    sig = tape.region_signature();
    return v;
  };
  FdReport r;
  std::vector<double> n(x.size(), 0.0);
  std::vector<char> ok(x.size(), 1);
  Tensor p = at;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    std::uint64_t s1 = 0, s2 = 0;
    p[i] = orig + eps;
    const double fp = eval(p, s1);
    p[i] = orig - eps;
    const double fm = eval(p, s2);
    p[i] = orig;
    if (s1 != base || s2 != base) {
      ok[i] = 0;
      ++r.skipped;
      continue;
    }
    n[i] = (fp - fm) / (2.0 * eps);
  }
  double scale = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (ok[i]) scale = std::max({scale, std::fabs(g[i]), std::fabs(n[i])});
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!ok[i]) continue;
    ++r.checked;
    const double denom = std::max({std::fabs(g[i]), std::fabs(n[i]), floor_ratio * scale});
    if (denom > 0.0) r.max_rel = std::max(r.max_rel, std::fabs(g[i] - n[i]) / denom);
  }
  return r;
}

/// Small deterministic dataset and a briefly trained CNN for attack tests.
struct TinyWorld {
  Dataset train_set;
  Dataset test_set;
  Classifier clf;
};

inline const TinyWorld& tiny_world() {
  static const TinyWorld w = [] {
    Dataset tr = make_synthetic({10, 40, 16, 16, 11});
    Dataset te = make_synthetic({10, 4, 16, 16, 12});
    Classifier c = build_small_cnn({3, 16, 16}, 10, 13);
    train(c, tr, {8, 0.1, 16, 14});
    return TinyWorld{std::move(tr), std::move(te), std::move(c)};
  }();
  return w;
}

}  // namespace mnd::testing
