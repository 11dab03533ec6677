#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "mnd/tensor.hpp"

namespace mnd::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool needs_grad() const;

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradient rule of a recorded op. `in_grads[i]` is empty when input i does
/// not need a gradient; otherwise the rule adds its contribution into it.
using BackwardFn =
    std::function<void(std::span<const double> out_grad, std::span<const std::span<double>> in_grads)>;

/// Dynamic reverse-mode tape. Nodes are appended in creation order, so the
/// record is topologically sorted by construction and `backward` is a single
/// reverse sweep. Rebuild the tape for every forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Owned constant, never differentiated.
  Var constant(Tensor value);
  /// Read-only binding of an external tensor; no copy and no gradient.
  /// The tensor must outlive the tape.
  Var constant_ref(const Tensor& value);
  /// Mutable binding of an external tensor. If `tensor.requires_grad()`,
  /// `backward` accumulates into `tensor.mutable_grad()`.
  Var leaf(Tensor& tensor);

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
  /// Leaf gradients accumulate across calls; callers zero them.
  void backward(const Var& loss);

  /// Adjoint of any node from the most recent `backward`; empty if the node
  /// was not on a gradient path.
  std::span<const double> grad_of(const Var& v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

  /// When enabled, piecewise ops (relu, abs, maxpool, clamp) fold their
  /// branch decisions into a hash. Two evaluations with equal signatures lie
  /// in the same smooth region of the recorded function.
  void track_regions(bool on) noexcept { tracking_ = on; }
  bool tracking_regions() const noexcept { return tracking_; }
  void mix_region(std::uint64_t bits) noexcept;
  std::uint64_t region_signature() const noexcept { return signature_; }

  const Tensor& value_of(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor* grad_sink = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;
  };

  Var push(Node node);
  void check_owner(const Var& v) const;

  std::deque<Node> nodes_;
  std::vector<std::vector<double>> adjoints_;
  bool tracking_ = false;
  std::uint64_t signature_ = 0xcbf29ce484222325ULL;
};

// Elementwise. Binary ops take identical shapes or a single-element operand,
// which broadcasts.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var negate(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var abs(const Var& a);
/// x^k. Non-integer k needs x >= 0, negative k needs x != 0.
Var pow(const Var& a, double k);
Var square(const Var& a);
Var sqrt(const Var& a);
Var log(const Var& a);
Var clamp_min(const Var& a, double lo);
/// sqrt(a^2 + b^2) elementwise; the subgradient at the origin is 0.
Var hypot(const Var& a, const Var& b);

// Reductions to a one-element tensor.
Var sum(const Var& a);
Var mean(const Var& a);
/// Euclidean norm; the subgradient at the zero vector is 0.
Var l2_norm(const Var& a);

// Structure.
Var reshape(const Var& a, Shape shape);
/// Rows [begin, end) of the leading axis.
Var slice(const Var& a, std::size_t begin, std::size_t end);
/// out[i] = a[index[i]], or 0 where index[i] < 0.
Var gather(const Var& a, std::vector<std::ptrdiff_t> index, Shape out_shape);

// Network layers.
enum class Padding { kValid, kZero, kReplicate };

struct Conv2dOptions {
  std::size_t stride = 1;
  Padding padding = Padding::kReplicate;
};

/// Cross-correlation of x [N,C,H,W] with w [O,C,K,K] plus optional bias [O].
/// Same-size padding (K/2 each side) unless `kValid`.
Var conv2d(const Var& x, const Var& w, const Var* bias, Conv2dOptions opts = {});
Var conv2d(const Var& x, const Var& w, const Var& bias, Conv2dOptions opts = {});
/// 2x2 window, stride 2, over [N,C,H,W]. Ties resolve to the first maximum.
Var maxpool2d(const Var& x);
/// x [N,F] (higher ranks flattened after axis 0) times w [O,F]^T plus b [O].
Var linear(const Var& x, const Var& w, const Var& b);
Var relu(const Var& x);
/// Row-wise softmax over the last axis of [C] or [N,C].
Var softmax(const Var& x);

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  /// Coordinates skipped because the +-eps probes crossed a kink.
  std::size_t skipped = 0;
  bool passed = false;
};

using ScalarFn = std::function<Var(Tape&, const Var&)>;

/// Compares tape gradients against central differences.
///
/// The relative error of coordinate i is |g_i - n_i| / max(|g_i|, |n_i|, f),
/// with floor f = floor_ratio * max_j max(|g_j|, |n_j|), so components that
/// are negligible next to the gradient's scale do not dominate the report.
/// Coordinates whose probes change the tape's region signature are
/// non-differentiable test points and are excluded (and counted).
GradCheckReport grad_check(const ScalarFn& f, const Tensor& input, double eps = 1e-4,
                           double tol = 1e-4, double floor_ratio = 1e-3);

}  // namespace mnd::ad
