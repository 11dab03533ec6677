#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mnd/autodiff.hpp"
#include "mnd/dataset.hpp"
#include "mnd/tensor.hpp"

namespace mnd {

enum class LayerKind : std::uint32_t { kConv = 1, kRelu = 2, kMaxPool = 3, kFlatten = 4, kLinear = 5 };

/// Layer descriptor. `in`/`out` are channels (conv) or features (linear);
/// `kernel` is the square conv kernel size. Parameter-free layers leave them 0.
struct LayerSpec {
  LayerKind kind;
  std::uint32_t in = 0;
  std::uint32_t out = 0;
  std::uint32_t kernel = 0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ForwardPass {
  ad::Var logits;    // f1 output u: [C] for a single image, [N,C] for a batch
  ad::Var features;  // activation of the last conv layer (after ReLU)
};

/// The frozen network f = softmax(f1(.; theta)) that attacks target.
class Classifier {
 public:
  Classifier(Shape input_shape, std::size_t num_classes, std::vector<LayerSpec> layers,
             std::vector<Tensor> parameters);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::span<const Tensor> parameters() const noexcept { return params_; }
  std::span<Tensor> parameters() noexcept { return params_; }

  bool trainable() const noexcept { return trainable_; }
  /// Toggles requires_grad on every parameter and drops stale gradients.
  void set_trainable(bool on);

  /// Records f1 with parameters bound read-only. Safe to call concurrently
  /// on distinct tapes. Input is [n,h,w] or [N,n,h,w].
  ForwardPass forward(ad::Tape& tape, const ad::Var& input) const;
  /// Records f1 with parameters bound as differentiable leaves.
  ForwardPass forward_trainable(ad::Tape& tape, const ad::Var& input);

  /// FNV-1a over the parameter bytes.
  std::uint64_t parameter_checksum() const;

 private:
  ForwardPass run(ad::Tape& tape, const ad::Var& input, std::span<const ad::Var> params) const;

  Shape input_shape_;
  std::size_t num_classes_;
  std::vector<LayerSpec> layers_;
  std::vector<Tensor> params_;
  bool trainable_ = false;
};

/// conv(3->16,3x3)+relu+maxpool, conv(16->32,3x3)+relu+maxpool, flatten,
/// linear(->128)+relu, linear(->C). Weights and biases are drawn from
/// uniform(+-1/sqrt(fan_in)) with a seeded generator.
Classifier build_small_cnn(const Shape& input_shape, std::size_t num_classes, std::uint64_t seed);

/// -sum_i y_gt[i] * log(max(y_hat[i], 1e-12)).
double cross_entropy(std::span<const double> y_gt, std::span<const double> y_hat);
/// Batch form on the tape: mean over rows of the per-row cross-entropy.
ad::Var cross_entropy(const ad::Var& y_gt, const ad::Var& y_hat);

/// First index of the maximum.
std::size_t argmax(std::span<const double> v);
/// First index of the minimum.
std::size_t argmin(std::span<const double> v);
Tensor one_hot(std::size_t index, std::size_t length);

struct Prediction {
  std::size_t label = 0;
  Tensor probabilities;  // y
  Tensor logits;         // u
};

Prediction predict(const Classifier& classifier, const Tensor& image);

struct TrainOptions {
  std::size_t epochs = 20;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;      // mean cross-entropy over the epoch's batches
  double accuracy = 0.0;  // running training accuracy over the epoch
};

struct TrainingReport {
  std::vector<EpochStats> epochs;
};

/// Mini-batch gradient descent on the cross-entropy. Deterministic given
/// `options.seed`. Leaves the classifier frozen.
TrainingReport train(Classifier& classifier, const Dataset& data, const TrainOptions& options);

/// Fraction of records whose predicted label matches.
double accuracy(const Classifier& classifier, const Dataset& data);

/// Checkpoint layout, little-endian: "MNDCKPT1", u32 C, u32 rank, u32 dims...,
/// u32 layer count, per layer u32 {kind, in, out, kernel}, u64 value count,
/// f64 payload in layer order, u64 FNV-1a checksum of the payload bytes.
void save_checkpoint(const Classifier& classifier, const std::filesystem::path& path);
Classifier load_checkpoint(const std::filesystem::path& path);

}  // namespace mnd
