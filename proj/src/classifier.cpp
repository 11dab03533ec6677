#include "mnd/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "binary_io.hpp"
#include "mnd/errors.hpp"

namespace mnd {
namespace {

std::vector<Shape> parameter_shapes(const Shape& input_shape, std::size_t num_classes,
                                    const std::vector<LayerSpec>& layers) {
  if (input_shape.size() != 3) throw ShapeError("classifier input must be [C,H,W]");
  std::size_t channels = input_shape[0], h = input_shape[1], w = input_shape[2];
  std::size_t features = 0;
  bool flat = false;
  std::vector<Shape> shapes;
  for (const LayerSpec& l : layers) {
    switch (l.kind) {
      case LayerKind::kConv:
        if (flat) throw ConfigError("conv layer after flatten");
        if (l.in != channels || l.kernel == 0 || l.out == 0) {
          throw ConfigError("conv layer expects " + std::to_string(l.in) + " input channels, got " +
                            std::to_string(channels));
        }
        shapes.push_back(Shape{l.out, l.in, l.kernel, l.kernel});
        shapes.push_back(Shape{l.out});
        channels = l.out;
        break;
      case LayerKind::kRelu:
        break;
      case LayerKind::kMaxPool:
        if (flat || h < 2 || w < 2) throw ConfigError("input too small for max pooling");
        h /= 2;
        w /= 2;
        break;
      case LayerKind::kFlatten:
        features = channels * h * w;
        flat = true;
        break;
      case LayerKind::kLinear:
        if (!flat || l.in != features || l.out == 0) {
          throw ConfigError("linear layer expects " + std::to_string(l.in) + " features, got " +
                            std::to_string(features));
        }
        shapes.push_back(Shape{l.out, l.in});
        shapes.push_back(Shape{l.out});
        features = l.out;
        break;
      default:
        throw ConfigError("unknown layer kind");
    }
  }
  if (!flat || features != num_classes) throw ConfigError("network output does not match class count");
  return shapes;
}

}  // namespace

Classifier::Classifier(Shape input_shape, std::size_t num_classes, std::vector<LayerSpec> layers,
                       std::vector<Tensor> parameters)
    : input_shape_(std::move(input_shape)),
      num_classes_(num_classes),
      layers_(std::move(layers)),
      params_(std::move(parameters)) {
  if (num_classes_ < 2) throw ConfigError("classifier needs at least 2 classes");
  const auto shapes = parameter_shapes(input_shape_, num_classes_, layers_);
  if (shapes.size() != params_.size()) throw ConfigError("parameter count does not match layers");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (params_[i].shape() != shapes[i]) {
      throw ShapeError("parameter " + std::to_string(i) + " has shape " + shape_string(params_[i].shape()) +
                       ", expected " + shape_string(shapes[i]));
    }
  }
  set_trainable(false);
}

void Classifier::set_trainable(bool on) {
  trainable_ = on;
  for (Tensor& p : params_) {
    p.set_requires_grad(on);
    p.clear_grad();
  }
}

ForwardPass Classifier::forward(ad::Tape& tape, const ad::Var& input) const {
  std::vector<ad::Var> bound;
  bound.reserve(params_.size());
  for (const Tensor& p : params_) bound.push_back(tape.constant_ref(p));
  return run(tape, input, bound);
}

ForwardPass Classifier::forward_trainable(ad::Tape& tape, const ad::Var& input) {
  std::vector<ad::Var> bound;
  bound.reserve(params_.size());
  for (Tensor& p : params_) bound.push_back(tape.leaf(p));
  return run(tape, input, bound);
}

ForwardPass Classifier::run(ad::Tape& /*tape*/, const ad::Var& input, std::span<const ad::Var> params) const {
  const Shape& s = input.shape();
  const bool single = s.size() == 3;
  const bool matches = single ? s == input_shape_
                              : (s.size() == 4 && std::equal(s.begin() + 1, s.end(), input_shape_.begin()));
  if (!matches) {
    throw ShapeError("classifier expects " + shape_string(input_shape_) + " images, got " + shape_string(s));
  }
  ad::Var x = input;
  if (single) x = ad::reshape(x, Shape{1, s[0], s[1], s[2]});

  ForwardPass pass;
  std::size_t p = 0;
  bool after_conv = false;
  for (const LayerSpec& l : layers_) {
    switch (l.kind) {
      case LayerKind::kConv:
        x = ad::conv2d(x, params[p], params[p + 1], {1, ad::Padding::kReplicate});
        p += 2;
        after_conv = true;
        break;
      case LayerKind::kRelu:
        x = ad::relu(x);
        if (after_conv) pass.features = x;
        after_conv = false;
        break;
      case LayerKind::kMaxPool:
        x = ad::maxpool2d(x);
        after_conv = false;
        break;
      case LayerKind::kFlatten: {
        const std::size_t n = x.shape()[0];
        x = ad::reshape(x, Shape{n, x.size() / n});
        break;
      }
      case LayerKind::kLinear:
        x = ad::linear(x, params[p], params[p + 1]);
        p += 2;
        after_conv = false;
        break;
    }
  }
  pass.logits = single ? ad::reshape(x, Shape{num_classes_}) : x;
  return pass;
}

std::uint64_t Classifier::parameter_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& p : params_) {
    auto bytes = std::as_bytes(p.values());
    h = detail::fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()), h);
  }
  return h;
}

Classifier build_small_cnn(const Shape& input_shape, std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  if (input_shape.size() != 3) throw ConfigError("input shape must be [C,H,W]");
  const std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
  if (h < 16 || w < 16) throw ConfigError("input " + shape_string(input_shape) + " too small for two 2x poolings");
  const auto u32 = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
  const std::size_t flat = 32 * (h / 4) * (w / 4);
  std::vector<LayerSpec> layers{
      {LayerKind::kConv, u32(c), 16, 3},   {LayerKind::kRelu},      {LayerKind::kMaxPool},
      {LayerKind::kConv, 16, 32, 3},       {LayerKind::kRelu},      {LayerKind::kMaxPool},
      {LayerKind::kFlatten},               {LayerKind::kLinear, u32(flat), 128},
      {LayerKind::kRelu},                  {LayerKind::kLinear, 128, u32(num_classes)},
  };
  std::mt19937_64 rng(seed);
  std::vector<Tensor> params;
  for (const LayerSpec& l : layers) {
    if (l.kind != LayerKind::kConv && l.kind != LayerKind::kLinear) continue;
    const std::size_t fan_in = l.kind == LayerKind::kConv ? std::size_t{l.in} * l.kernel * l.kernel : l.in;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Shape ws = l.kind == LayerKind::kConv ? Shape{l.out, l.in, l.kernel, l.kernel} : Shape{l.out, l.in};
    Tensor weight(ws);
    for (double& v : weight.values()) v = dist(rng);
    Tensor bias(Shape{l.out});
    for (double& v : bias.values()) v = dist(rng);
    params.push_back(std::move(weight));
    params.push_back(std::move(bias));
  }
  return Classifier(input_shape, num_classes, std::move(layers), std::move(params));
}

double cross_entropy(std::span<const double> y_gt, std::span<const double> y_hat) {
  if (y_gt.size() != y_hat.size()) throw ShapeError("cross_entropy: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < y_gt.size(); ++i) {
    if (y_gt[i] != 0.0) total -= y_gt[i] * std::log(std::max(y_hat[i], 1e-12));
  }
  return total;
}

ad::Var cross_entropy(const ad::Var& y_gt, const ad::Var& y_hat) {
  if (y_gt.shape() != y_hat.shape()) throw ShapeError("cross_entropy: shape mismatch");
  const std::size_t rows = y_hat.shape().size() == 2 ? y_hat.shape()[0] : 1;
  ad::Var logs = ad::log(ad::clamp_min(y_hat, 1e-12));
  return ad::scale(ad::sum(ad::mul(y_gt, logs)), -1.0 / static_cast<double>(rows));
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw UsageError("argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t argmin(std::span<const double> v) {
  if (v.empty()) throw UsageError("argmin of an empty vector");
  return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

Tensor one_hot(std::size_t index, std::size_t length) {
  if (index >= length) throw UsageError("one_hot index out of range");
  Tensor t(Shape{length});
  t[index] = 1.0;
  return t;
}

Prediction predict(const Classifier& classifier, const Tensor& image) {
  if (image.shape() != classifier.input_shape()) {
    throw ShapeError("predict: image " + shape_string(image.shape()) + " does not match classifier input " +
                     shape_string(classifier.input_shape()));
  }
  ad::Tape tape;
  ForwardPass pass = classifier.forward(tape, tape.constant_ref(image));
  ad::Var probs = ad::softmax(pass.logits);
  Prediction out;
  out.logits = pass.logits.value();
  out.probabilities = probs.value();
  out.label = argmax(out.logits.values());
  return out;
}

TrainingReport train(Classifier& classifier, const Dataset& data, const TrainOptions& options) {
  if (data.empty()) throw UsageError("train: empty dataset");
  if (options.batch_size == 0 || options.epochs == 0) throw ConfigError("train: epochs and batch size must be positive");
  if (!(options.learning_rate >= 0.0)) throw ConfigError("train: learning rate must be non-negative");
  if (data.image_shape() != classifier.input_shape()) throw ShapeError("train: dataset image shape mismatch");
  for (std::uint32_t label : data.labels()) {
    if (label >= classifier.num_classes()) throw UsageError("train: label out of range");
  }

  classifier.set_trainable(true);
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t classes = classifier.num_classes();

  TrainingReport report;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0, correct = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Tensor targets(Shape{idx.size(), classes});
      for (std::size_t b = 0; b < idx.size(); ++b) targets[b * classes + data.label(idx[b])] = 1.0;

      ad::Tape tape;
      ad::Var x = tape.constant(data.batch(idx));
      ForwardPass pass = classifier.forward_trainable(tape, x);
      ad::Var probs = ad::softmax(pass.logits);
      ad::Var loss = cross_entropy(tape.constant(std::move(targets)), probs);
      tape.backward(loss);

      const Tensor& logits = pass.logits.value();
      for (std::size_t b = 0; b < idx.size(); ++b) {
        std::span<const double> row(logits.data() + b * classes, classes);
        if (argmax(row) == data.label(idx[b])) ++correct;
      }
      loss_sum += loss.item();
      ++batches;

      for (Tensor& p : classifier.parameters()) {
        auto g = p.grad();
        auto v = p.values();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= options.learning_rate * g[i];
        p.zero_grad();
      }
    }
    report.epochs.push_back({epoch + 1, loss_sum / static_cast<double>(batches),
                             static_cast<double>(correct) / static_cast<double>(data.size())});
  }
  classifier.set_trainable(false);
  return report;
}

double accuracy(const Classifier& classifier, const Dataset& data) {
  if (data.empty()) throw UsageError("accuracy: empty dataset");
  const std::size_t classes = classifier.num_classes();
  constexpr std::size_t kChunk = 64;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + kChunk); ++i) idx.push_back(i);
    ad::Tape tape;
    ForwardPass pass = classifier.forward(tape, tape.constant(data.batch(idx)));
    const Tensor& logits = pass.logits.value();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::span<const double> row(logits.data() + b * classes, classes);
      if (argmax(row) == data.label(idx[b])) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {
constexpr std::string_view kCheckpointMagic{"MNDCKPT1"};
}

void save_checkpoint(const Classifier& classifier, const std::filesystem::path& path) {
  detail::ByteWriter out;
  out.text(kCheckpointMagic);
  out.u32(static_cast<std::uint32_t>(classifier.num_classes()));
  out.u32(static_cast<std::uint32_t>(classifier.input_shape().size()));
  for (std::size_t d : classifier.input_shape()) out.u32(static_cast<std::uint32_t>(d));
  out.u32(static_cast<std::uint32_t>(classifier.layers().size()));
  for (const LayerSpec& l : classifier.layers()) {
    out.u32(static_cast<std::uint32_t>(l.kind));
    out.u32(l.in);
    out.u32(l.out);
    out.u32(l.kernel);
  }
  std::uint64_t count = 0;
  for (const Tensor& p : classifier.parameters()) count += p.size();
  out.u64(count);
  const std::size_t payload_start = out.size();
  for (const Tensor& p : classifier.parameters()) {
    for (double v : p.values()) out.f64(v);
  }
  const auto& buf = out.buffer();
  const std::uint64_t checksum =
      detail::fnv1a(std::span(buf.data() + payload_start, buf.size() - payload_start));
  out.u64(checksum);
  detail::write_file(path.string(), out.buffer());
}

Classifier load_checkpoint(const std::filesystem::path& path) {
  const std::string where = "checkpoint " + path.string();
  const auto bytes = detail::read_file(path.string());
  detail::ByteReader in(bytes, where);
  auto magic = in.bytes(kCheckpointMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic.begin())) {
    throw CorruptFileError(where + ": bad magic");
  }
  const std::uint32_t classes = in.u32();
  const std::uint32_t rank = in.u32();
  if (rank != 3) throw CorruptFileError(where + ": unsupported input rank");
  Shape input_shape;
  for (std::uint32_t i = 0; i < rank; ++i) input_shape.push_back(in.u32());
  const std::uint32_t layer_count = in.u32();
  if (layer_count > 1024) throw CorruptFileError(where + ": implausible layer count");
  std::vector<LayerSpec> layers;
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    LayerSpec l{static_cast<LayerKind>(in.u32())};
    l.in = in.u32();
    l.out = in.u32();
    l.kernel = in.u32();
    layers.push_back(l);
  }
  std::vector<Shape> shapes;
  try {
    shapes = parameter_shapes(input_shape, classes, layers);
  } catch (const Error& e) {
    throw CorruptFileError(where + ": " + e.what());
  }
  const std::uint64_t count = in.u64();
  std::uint64_t expected = 0;
  for (const Shape& s : shapes) expected += shape_size(s);
  if (count != expected) throw CorruptFileError(where + ": payload size does not match layers");
  if (in.remaining() != count * 8 + 8) throw CorruptFileError(where + ": truncated or oversized payload");
  const std::size_t payload_start = in.position();
  std::vector<Tensor> params;
  for (const Shape& s : shapes) {
    Tensor t(s);
    for (double& v : t.values()) v = in.f64();
    params.push_back(std::move(t));
  }
  const std::uint64_t stored = in.u64();
  const std::uint64_t actual = detail::fnv1a(std::span(bytes.data() + payload_start, count * 8));
  if (stored != actual) throw CorruptFileError(where + ": checksum mismatch");
  return Classifier(std::move(input_shape), classes, std::move(layers), std::move(params));
}

}  // namespace mnd
