#include "mnd/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "mnd/errors.hpp"

namespace mnd::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Eigen picks kernels by pointer alignment, so operands go through owned
// (aligned) storage to keep results bitwise reproducible across allocations.
RowMat owned(const double* p, std::size_t r, std::size_t c) {
  return ConstMatMap(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

void add_into(double* dst, const RowMat& m) {
  const double* src = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) dst[i] += src[i];
}

double row_sum(const double* p, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += p[i];
  return s;
}

constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw UsageError("operation on an unbound Var");
  return *a.tape();
}

Tape& common_tape(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw UsageError("operands live on different tapes");
  return t;
}

bool is_integer(double k) { return std::floor(k) == k; }

// Resolves the broadcast of a binary elementwise op.
Shape binary_shape(const Var& a, const Var& b, const char* op) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() == bv.shape()) return av.shape();
  if (bv.size() == 1) return av.shape();
  if (av.size() == 1) return bv.shape();
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(av.shape()) + " vs " +
                   shape_string(bv.shape()));
}

// Shared machinery for elementwise binary ops: `fwd(x, y)` computes the value
// and `dx(x, y)`, `dy(x, y)` the partials.
template <class Fwd, class Dx, class Dy>
Var binary(const Var& a, const Var& b, const char* name, Fwd fwd, Dx dx, Dy dy) {
  Tape& tape = common_tape(a, b);
  Shape shape = binary_shape(a, b, name);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool sa = av.size() == 1;
  const bool sb = bv.size() == 1;
  Tensor out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = fwd(av[sa ? 0 : i], bv[sb ? 0 : i]);
  }
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  Tape* tp = &tape;
  Var inputs[] = {a, b};
  return tape.record(std::move(out), inputs,
                     [tp, ia, ib, sa, sb, dx, dy](std::span<const double> g,
                                                  std::span<const std::span<double>> in) {
                       const Tensor& x = tp->value_of(ia);
                       const Tensor& y = tp->value_of(ib);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double xi = x[sa ? 0 : i];
                         const double yi = y[sb ? 0 : i];
                         if (!in[0].empty()) in[0][sa ? 0 : i] += g[i] * dx(xi, yi);
                         if (!in[1].empty()) in[1][sb ? 0 : i] += g[i] * dy(xi, yi);
                       }
                     });
}

// `deriv(x)` is the derivative at input x.
template <class Fwd, class Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  const std::size_t ia = a.id();
  Tape* tp = &tape;
  Var inputs[] = {a};
  return tape.record(std::move(out), inputs,
                     [tp, ia, deriv](std::span<const double> g, std::span<const std::span<double>> in) {
                       const Tensor& x = tp->value_of(ia);
                       for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * deriv(x[i]);
                     });
}

// Folds a per-element branch decision into the tape's region signature.
template <class Pred>
void mix_branches(Tape& tape, std::size_t n, Pred pred) {
  if (!tape.tracking_regions()) return;
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < n; ++i) {
    word = (word << 1) | static_cast<std::uint64_t>(pred(i));
    if ((i & 63) == 63) {
      tape.mix_region(word);
      word = 0;
    }
  }
  tape.mix_region(word ^ n);
}

}  // namespace

// ---------------------------------------------------------------- Var / Tape

const Tensor& Var::value() const {
  if (!tape_) throw UsageError("value() on an unbound Var");
  return tape_->value_of(id_);
}

bool Var::needs_grad() const { return tape_ && tape_->needs_grad(id_); }

const Tensor& Tape::value_of(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.ref ? *n.ref : n.owned;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owner(const Var& v) const {
  if (v.tape() != this) throw UsageError("Var belongs to a different tape");
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.owned.set_requires_grad(false);
  n.owned.clear_grad();
  return push(std::move(n));
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.ref = &value;
  return push(std::move(n));
}

Var Tape::leaf(Tensor& tensor) {
  Node n;
  n.ref = &tensor;
  if (tensor.requires_grad()) {
    n.grad_sink = &tensor;
    n.needs_grad = true;
  }
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    check_owner(v);
    n.inputs.push_back(v.id());
    n.needs_grad = n.needs_grad || nodes_[v.id()].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::mix_region(std::uint64_t bits) noexcept { signature_ = (signature_ ^ bits) * kFnvPrime; }

void Tape::backward(const Var& loss) {
  check_owner(loss);
  if (loss.size() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  adjoints_.assign(nodes_.size(), {});
  if (!nodes_[loss.id()].needs_grad) return;
  adjoints_[loss.id()].assign(1, 1.0);

  std::vector<std::span<double>> in_grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    std::vector<double>& adj = adjoints_[id];
    if (!node.needs_grad || adj.empty()) continue;
    if (node.grad_sink) {
      auto dst = node.grad_sink->mutable_grad();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += adj[i];
      continue;
    }
    if (!node.backward) continue;
    in_grads.clear();
    for (std::size_t in : node.inputs) {
      if (!nodes_[in].needs_grad) {
        in_grads.emplace_back();
        continue;
      }
      std::vector<double>& in_adj = adjoints_[in];
      if (in_adj.empty()) in_adj.assign(value_of(in).size(), 0.0);
      in_grads.emplace_back(in_adj);
    }
    node.backward(adj, in_grads);
  }
}

std::span<const double> Tape::grad_of(const Var& v) const {
  check_owner(v);
  if (v.id() >= adjoints_.size()) return {};
  return adjoints_[v.id()];
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  for (double v : b.value().values()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var negate(const Var& a) {
  return unary(a, [](double x) { return -x; }, [](double) { return -1.0; });
}

Var scale(const Var& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Var add_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Var abs(const Var& a) {
  const Tensor& v = a.value();
  mix_branches(tape_of(a), v.size(), [&](std::size_t i) { return v[i] > 0.0 ? 1 : 0; });
  mix_branches(tape_of(a), v.size(), [&](std::size_t i) { return v[i] < 0.0 ? 1 : 0; });
  // Subgradient 0 at exactly 0.
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var pow(const Var& a, double k) {
  for (double x : a.value().values()) {
    if (x < 0.0 && !is_integer(k)) throw DomainError("pow: negative base with non-integer exponent");
    if (x == 0.0 && k < 0.0) throw DomainError("pow: zero base with negative exponent");
  }
  if (k == 1.0) {
    return unary(a, [](double x) { return x; }, [](double) { return 1.0; });
  }
  return unary(
      a, [k](double x) { return std::pow(x, k); }, [k](double x) { return k * std::pow(x, k - 1.0); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  for (double x : a.value().values()) {
    if (x < 0.0) throw DomainError("sqrt of a negative value");
  }
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double x) { return 0.5 / std::sqrt(x); });
}

Var log(const Var& a) {
  for (double x : a.value().values()) {
    if (x <= 0.0) throw DomainError("log of a non-positive value");
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var clamp_min(const Var& a, double lo) {
  const Tensor& v = a.value();
  mix_branches(tape_of(a), v.size(), [&](std::size_t i) { return v[i] >= lo ? 1 : 0; });
  return unary(
      a, [lo](double x) { return x < lo ? lo : x; }, [lo](double x) { return x >= lo ? 1.0 : 0.0; });
}

Var hypot(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ShapeError("hypot: shape mismatch");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  mix_branches(common_tape(a, b), x.size(), [&](std::size_t i) { return x[i] != 0.0 || y[i] != 0.0 ? 1 : 0; });
  return binary(
      a, b, "hypot", [](double x, double y) { return std::sqrt(x * x + y * y); },
      [](double x, double y) {
        const double h = std::sqrt(x * x + y * y);
        return h > 0.0 ? x / h : 0.0;
      },
      [](double x, double y) {
        const double h = std::sqrt(x * x + y * y);
        return h > 0.0 ? y / h : 0.0;
      });
}

// ---------------------------------------------------------------- reductions

Var sum(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& v = a.value();
  if (v.empty()) throw DomainError("sum of an empty tensor");
  double total = 0.0;
  for (double x : v.values()) total += x;
  Var inputs[] = {a};
  return tape.record(Tensor::scalar(total), inputs,
                     [](std::span<const double> g, std::span<const std::span<double>> in) {
                       for (double& d : in[0]) d += g[0];
                     });
}

Var mean(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& v = a.value();
  if (v.empty()) throw DomainError("mean of an empty tensor");
  double total = 0.0;
  for (double x : v.values()) total += x;
  const double n = static_cast<double>(v.size());
  Var inputs[] = {a};
  return tape.record(Tensor::scalar(total / n), inputs,
                     [n](std::span<const double> g, std::span<const std::span<double>> in) {
                       for (double& d : in[0]) d += g[0] / n;
                     });
}

Var l2_norm(const Var& a) {
  Tape& tape = tape_of(a);
  const Tensor& v = a.value();
  if (v.empty()) throw DomainError("norm of an empty tensor");
  double ss = 0.0;
  for (double x : v.values()) ss += x * x;
  const double norm = std::sqrt(ss);
  tape.mix_region(norm > 0.0 ? 1 : 0);
  Tape* tp = &tape;
  const std::size_t ia = a.id();
  Var inputs[] = {a};
  return tape.record(Tensor::scalar(norm), inputs,
                     [tp, ia, norm](std::span<const double> g, std::span<const std::span<double>> in) {
                       if (norm == 0.0) return;
                       const Tensor& x = tp->value_of(ia);
                       for (std::size_t i = 0; i < x.size(); ++i) in[0][i] += g[0] * x[i] / norm;
                     });
}

// ---------------------------------------------------------------- structure

Var reshape(const Var& a, Shape shape) {
  Tape& tape = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  Var inputs[] = {a};
  return tape.record(std::move(out), inputs,
                     [](std::span<const double> g, std::span<const std::span<double>> in) {
                       for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                     });
}

Var slice(const Var& a, std::size_t begin, std::size_t end) {
  Tape& tape = tape_of(a);
  const Tensor& v = a.value();
  if (v.rank() == 0 || begin >= end || end > v.dim(0)) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     shape_string(v.shape()));
  }
  const std::size_t row = v.size() / v.dim(0);
  Shape shape = v.shape();
  shape[0] = end - begin;
  Tensor out(shape);
  std::copy_n(v.data() + begin * row, out.size(), out.data());
  const std::size_t offset = begin * row;
  Var inputs[] = {a};
  return tape.record(std::move(out), inputs,
                     [offset](std::span<const double> g, std::span<const std::span<double>> in) {
                       for (std::size_t i = 0; i < g.size(); ++i) in[0][offset + i] += g[i];
                     });
}

Var gather(const Var& a, std::vector<std::ptrdiff_t> index, Shape out_shape) {
  Tape& tape = tape_of(a);
  const Tensor& v = a.value();
  if (shape_size(out_shape) != index.size()) {
    throw ShapeError("gather: index count does not match " + shape_string(out_shape));
  }
  Tensor out(std::move(out_shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::ptrdiff_t j = index[i];
    if (j >= static_cast<std::ptrdiff_t>(v.size())) throw ShapeError("gather: index out of range");
    out[i] = j < 0 ? 0.0 : v[static_cast<std::size_t>(j)];
  }
  Var inputs[] = {a};
  return tape.record(std::move(out), inputs,
                     [index = std::move(index)](std::span<const double> g,
                                                std::span<const std::span<double>> in) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (index[i] >= 0) in[0][static_cast<std::size_t>(index[i])] += g[i];
                       }
                     });
}

// ---------------------------------------------------------------- layers

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, stride, pad, oh, ow;
  // For each (ki, kj, output pixel): offset into an input plane, or -1 for zero padding.
  std::vector<std::ptrdiff_t> taps;
};

ConvGeometry conv_geometry(const Shape& xs, const Shape& ws, Conv2dOptions opts) {
  if (xs.size() != 4 || ws.size() != 4) {
    throw ShapeError("conv2d expects x [N,C,H,W] and w [O,C,K,K], got " + shape_string(xs) + " and " +
                     shape_string(ws));
  }
  if (ws[1] != xs[1]) {
    throw ShapeError("conv2d: kernel channels " + std::to_string(ws[1]) + " != input channels " +
                     std::to_string(xs[1]));
  }
  if (ws[2] != ws[3]) throw ShapeError("conv2d: kernel must be square");
  if (opts.stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], opts.stride, 0, 0, 0, {}};
  g.pad = opts.padding == Padding::kValid ? 0 : g.k / 2;
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) throw ShapeError("conv2d: input smaller than kernel");
  g.oh = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  const std::size_t cols = g.oh * g.ow;
  g.taps.resize(g.k * g.k * cols);
  for (std::size_t ki = 0; ki < g.k; ++ki) {
    for (std::size_t kj = 0; kj < g.k; ++kj) {
      std::ptrdiff_t* row = g.taps.data() + (ki * g.k + kj) * cols;
      for (std::size_t oy = 0; oy < g.oh; ++oy) {
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
          auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
          const auto h = static_cast<std::ptrdiff_t>(g.h);
          const auto w = static_cast<std::ptrdiff_t>(g.w);
          std::ptrdiff_t tap;
          if (opts.padding == Padding::kReplicate) {
            iy = std::clamp<std::ptrdiff_t>(iy, 0, h - 1);
            ix = std::clamp<std::ptrdiff_t>(ix, 0, w - 1);
            tap = iy * w + ix;
          } else {
            tap = (iy < 0 || iy >= h || ix < 0 || ix >= w) ? -1 : iy * w + ix;
          }
          row[oy * g.ow + ox] = tap;
        }
      }
    }
  }
  return g;
}

// Unfolds one sample [C,H,W] into a (C*K*K) x (OH*OW) matrix.
void im2col(const ConvGeometry& g, const double* x, double* col) {
  const std::size_t cols = g.oh * g.ow;
  const std::size_t kk = g.k * g.k;
  for (std::size_t c = 0; c < g.c; ++c) {
    const double* plane = x + c * g.h * g.w;
    for (std::size_t t = 0; t < kk; ++t) {
      const std::ptrdiff_t* taps = g.taps.data() + t * cols;
      double* dst = col + (c * kk + t) * cols;
      for (std::size_t j = 0; j < cols; ++j) dst[j] = taps[j] < 0 ? 0.0 : plane[taps[j]];
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, double* dx) {
  const std::size_t cols = g.oh * g.ow;
  const std::size_t kk = g.k * g.k;
  for (std::size_t c = 0; c < g.c; ++c) {
    double* plane = dx + c * g.h * g.w;
    for (std::size_t t = 0; t < kk; ++t) {
      const std::ptrdiff_t* taps = g.taps.data() + t * cols;
      const double* src = col + (c * kk + t) * cols;
      for (std::size_t j = 0; j < cols; ++j) {
        if (taps[j] >= 0) plane[taps[j]] += src[j];
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var* bias, Conv2dOptions opts) {
  Tape& tape = common_tape(x, w);
  if (bias) common_tape(x, *bias);
  auto geo = std::make_shared<ConvGeometry>(conv_geometry(x.shape(), w.shape(), opts));
  const ConvGeometry& g = *geo;
  if (bias && bias->size() != g.o) throw ShapeError("conv2d: bias length must equal output channels");

  const std::size_t rows = g.c * g.k * g.k;
  const std::size_t cols = g.oh * g.ow;
  Tensor out(Shape{g.n, g.o, g.oh, g.ow});
  RowMat col(rows, cols);
  const RowMat wm = owned(w.value().data(), g.o, rows);
  RowMat prod(g.o, cols);
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(g, x.value().data() + n * g.c * g.h * g.w, col.data());
    prod.noalias() = wm * col;
    double* dst = out.data() + n * g.o * cols;
    std::copy(prod.data(), prod.data() + prod.size(), dst);
    if (bias) {
      const Tensor& b = bias->value();
      for (std::size_t o = 0; o < g.o; ++o) {
        for (std::size_t j = 0; j < cols; ++j) dst[o * cols + j] += b[o];
      }
    }
  }

  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  Tape* tp = &tape;
  const std::size_t ix = x.id();
  const std::size_t iw = w.id();
  return tape.record(
      std::move(out), inputs,
      [tp, ix, iw, geo, rows, cols](std::span<const double> grad, std::span<const std::span<double>> in) {
        const ConvGeometry& g = *geo;
        const Tensor& xv = tp->value_of(ix);
        const Tensor& wv = tp->value_of(iw);
        const RowMat wm = owned(wv.data(), g.o, rows);
        RowMat col(rows, cols);
        RowMat dcol(rows, cols);
        RowMat dw(g.o, rows);
        for (std::size_t n = 0; n < g.n; ++n) {
          const double* gp = grad.data() + n * g.o * cols;
          const RowMat gm = owned(gp, g.o, cols);
          if (!in[0].empty()) {
            dcol.noalias() = wm.transpose() * gm;
            col2im(g, dcol.data(), in[0].data() + n * g.c * g.h * g.w);
          }
          if (!in[1].empty()) {
            im2col(g, xv.data() + n * g.c * g.h * g.w, col.data());
            dw.noalias() = gm * col.transpose();
            add_into(in[1].data(), dw);
          }
          if (in.size() > 2 && !in[2].empty()) {
            for (std::size_t o = 0; o < g.o; ++o) in[2][o] += row_sum(gp + o * cols, cols);
          }
        }
      });
}

Var conv2d(const Var& x, const Var& w, const Var& bias, Conv2dOptions opts) {
  return conv2d(x, w, &bias, opts);
}

Var maxpool2d(const Var& x) {
  Tape& tape = tape_of(x);
  const Tensor& v = x.value();
  if (v.rank() != 4) throw ShapeError("maxpool2d expects [N,C,H,W], got " + shape_string(v.shape()));
  const std::size_t n = v.dim(0), c = v.dim(1), h = v.dim(2), w = v.dim(3);
  if (h < 2 || w < 2) throw ShapeError("maxpool2d: spatial size below 2");
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out(Shape{n, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
        const std::size_t cands[4] = {base + (2 * y) * w + 2 * xx, base + (2 * y) * w + 2 * xx + 1,
                                      base + (2 * y + 1) * w + 2 * xx, base + (2 * y + 1) * w + 2 * xx + 1};
        std::size_t best = cands[0];
        for (std::size_t q = 1; q < 4; ++q) {
          if (v[cands[q]] > v[best]) best = cands[q];
        }
        argmax[o] = best;
        out[o] = v[best];
      }
    }
  }
  if (tape.tracking_regions()) {
    for (std::size_t i = 0; i < argmax.size(); i += 1) tape.mix_region(argmax[i]);
  }
  Var inputs[] = {x};
  return tape.record(std::move(out), inputs,
                     [argmax = std::move(argmax)](std::span<const double> g,
                                                  std::span<const std::span<double>> in) {
                       for (std::size_t i = 0; i < g.size(); ++i) in[0][argmax[i]] += g[i];
                     });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Tape& tape = common_tape(x, w);
  common_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 2) throw ShapeError("linear: weight must be [O,F]");
  const std::size_t o = wv.dim(0), f = wv.dim(1);
  const bool vector_in = xv.rank() == 1;
  const std::size_t n = vector_in ? 1 : xv.dim(0);
  if (xv.size() != n * f) {
    throw ShapeError("linear: input " + shape_string(xv.shape()) + " does not flatten to " +
                     std::to_string(f) + " features");
  }
  if (b.size() != o) throw ShapeError("linear: bias length must equal output features");
  Tensor out(vector_in ? Shape{o} : Shape{n, o});
  const auto ni = static_cast<Eigen::Index>(n), oi = static_cast<Eigen::Index>(o),
             fi = static_cast<Eigen::Index>(f);
  const RowMat prod = owned(xv.data(), n, f) * owned(wv.data(), o, f).transpose();
  std::copy(prod.data(), prod.data() + prod.size(), out.data());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < o; ++k) out[r * o + k] += b.value()[k];
  }
  Tape* tp = &tape;
  const std::size_t ix = x.id(), iw = w.id();
  Var inputs[] = {x, w, b};
  return tape.record(std::move(out), inputs,
                     [tp, ix, iw, ni, oi, fi](std::span<const double> g, std::span<const std::span<double>> in) {
                       const auto n = static_cast<std::size_t>(ni), o = static_cast<std::size_t>(oi),
                                  f = static_cast<std::size_t>(fi);
                       const RowMat gm = owned(g.data(), n, o);
                       if (!in[0].empty()) {
                         const RowMat dx = gm * owned(tp->value_of(iw).data(), o, f);
                         add_into(in[0].data(), dx);
                       }
                       if (!in[1].empty()) {
                         const RowMat dw = gm.transpose() * owned(tp->value_of(ix).data(), n, f);
                         add_into(in[1].data(), dw);
                       }
                       if (!in[2].empty()) {
                         for (std::size_t k = 0; k < o; ++k) {
                           double s = 0.0;
                           for (std::size_t r = 0; r < n; ++r) s += g[r * o + k];
                           in[2][k] += s;
                         }
                       }
                     });
}

Var relu(const Var& x) {
  const Tensor& v = x.value();
  mix_branches(tape_of(x), v.size(), [&](std::size_t i) { return v[i] > 0.0 ? 1 : 0; });
  return unary(
      x, [](double t) { return t > 0.0 ? t : 0.0; }, [](double t) { return t > 0.0 ? 1.0 : 0.0; });
}

Var softmax(const Var& x) {
  Tape& tape = tape_of(x);
  const Tensor& v = x.value();
  if (v.rank() != 1 && v.rank() != 2) throw ShapeError("softmax expects [C] or [N,C]");
  const std::size_t c = v.shape().back();
  if (c < 2) throw ShapeError("softmax needs at least 2 classes");
  const std::size_t rows = v.size() / c;
  Tensor out(v.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * c;
    double* dst = out.data() + r * c;
    const double peak = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      dst[i] = std::exp(in[i] - peak);
      z += dst[i];
    }
    for (std::size_t i = 0; i < c; ++i) dst[i] /= z;
  }
  std::vector<double> y(out.values().begin(), out.values().end());
  Var inputs[] = {x};
  return tape.record(std::move(out), inputs,
                     [y = std::move(y), c, rows](std::span<const double> g,
                                                 std::span<const std::span<double>> in) {
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* yr = y.data() + r * c;
                         const double* gr = g.data() + r * c;
                         double dot = 0.0;
                         for (std::size_t i = 0; i < c; ++i) dot += gr[i] * yr[i];
                         for (std::size_t i = 0; i < c; ++i) in[0][r * c + i] += yr[i] * (gr[i] - dot);
                       }
                     });
}

// ---------------------------------------------------------------- grad check

GradCheckReport grad_check(const ScalarFn& f, const Tensor& input, double eps, double tol,
                           double floor_ratio) {
  Tensor x(input.shape(), std::vector<double>(input.values().begin(), input.values().end()));
  x.set_requires_grad(true);
  std::uint64_t base_signature = 0;
  {
    Tape tape;
    tape.track_regions(true);
    Var xv = tape.leaf(x);
    Var y = f(tape, xv);
    if (y.size() != 1) throw UsageError("grad_check: function must return a scalar");
    if (!std::isfinite(y.item())) throw EvaluationError("grad_check: non-finite function value");
    tape.backward(y);
    base_signature = tape.region_signature();
  }
  std::vector<double> analytic(x.size(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  auto evaluate = [&](const Tensor& probe, std::uint64_t& signature) {
    Tape tape;
    tape.track_regions(true);
    Var y = f(tape, tape.constant_ref(probe));
    signature = tape.region_signature();
    const double v = y.item();
    if (!std::isfinite(v)) throw EvaluationError("grad_check: non-finite probe value");
    return v;
  };

  std::vector<double> numeric(x.size(), 0.0);
  std::vector<bool> usable(x.size(), true);
  Tensor probe(input.shape(), std::vector<double>(input.values().begin(), input.values().end()));
  GradCheckReport report;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    std::uint64_t sp = 0, sm = 0;
    probe[i] = orig + eps;
    const double fp = evaluate(probe, sp);
    probe[i] = orig - eps;
    const double fm = evaluate(probe, sm);
    probe[i] = orig;
    if (sp != base_signature || sm != base_signature) {
      usable[i] = false;
      ++report.skipped;
      continue;
    }
    numeric[i] = (fp - fm) / (2.0 * eps);
  }

  double scale = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (usable[i]) scale = std::max({scale, std::fabs(analytic[i]), std::fabs(numeric[i])});
  }
  const double floor = floor_ratio * scale;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!usable[i]) continue;
    ++report.checked;
    const double diff = std::fabs(analytic[i] - numeric[i]);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), floor});
    const double rel = denom > 0.0 ? diff / denom : 0.0;
    report.max_abs_error = std::max(report.max_abs_error, diff);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  report.passed = report.checked > 0 && report.max_rel_error <= tol;
  return report;
}

}  // namespace mnd::ad
