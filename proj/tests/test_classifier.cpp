#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "mnd/classifier.hpp"
#include "mnd/dataset.hpp"
#include "mnd/errors.hpp"
#include "support.hpp"

namespace mnd {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mnd_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TEST(CrossEntropy, AnalyticValues) {
  std::vector<double> gt{0, 1, 0};
  std::vector<double> sure{0, 1, 0};
  EXPECT_EQ(cross_entropy(gt, sure), 0.0);
  std::vector<double> g10(10, 0.0), u10(10, 0.1);
  g10[3] = 1.0;
  EXPECT_NEAR(cross_entropy(g10, u10), 2.302585, 1e-6);
  std::vector<double> g2{1, 0}, p2{0.25, 0.75};
  EXPECT_NEAR(cross_entropy(g2, p2), 1.386294, 1e-6);
  std::vector<double> zero{0, 1};
  EXPECT_NEAR(cross_entropy(g2, zero), -std::log(1e-12), 1e-9);
}

TEST(CrossEntropy, TapeVersionMatches) {
  ad::Tape t;
  ad::Var y = cross_entropy(t.constant(Tensor::from({1, 0})), t.constant(Tensor::from({0.25, 0.75})));
  EXPECT_NEAR(y.item(), 1.386294, 1e-6);
}

TEST(Predict, ArgmaxTiesAndTarget) {
  std::vector<double> l{5, 1, 1};
  EXPECT_EQ(argmax(l), 0u);
  std::vector<double> same(4, 2.0);
  EXPECT_EQ(argmax(same), 0u);
  EXPECT_EQ(argmin(same), 0u);
  EXPECT_EQ(one_hot(2, 4), Tensor::from({0, 0, 1, 0}));
  EXPECT_THROW(one_hot(4, 4), UsageError);
}

TEST(Classifier, BuildIsDeterministic) {
  const Classifier a = build_small_cnn({3, 16, 16}, 10, 5);
  const Classifier b = build_small_cnn({3, 16, 16}, 10, 5);
  const Classifier c = build_small_cnn({3, 16, 16}, 10, 6);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) EXPECT_EQ(a.parameters()[i], b.parameters()[i]);
  EXPECT_EQ(a.parameter_checksum(), b.parameter_checksum());
  EXPECT_NE(a.parameter_checksum(), c.parameter_checksum());
  EXPECT_FALSE(a.trainable());
}

TEST(Classifier, ArchitectureAndInit) {
  const Classifier c = build_small_cnn({3, 32, 32}, 10, 1);
  const auto& L = c.layers();
  ASSERT_EQ(L.size(), 10u);
  EXPECT_EQ(L[0].kind, LayerKind::kConv);
  EXPECT_EQ(L[0].in, 3u);
  EXPECT_EQ(L[0].out, 16u);
  EXPECT_EQ(L[3].out, 32u);
  EXPECT_EQ(L[7].out, 128u);
  EXPECT_EQ(L[9].out, 10u);
  const Tensor& w0 = c.parameters()[0];
  const double bound = 1.0 / std::sqrt(27.0);
  for (double v : w0.values()) EXPECT_LE(std::fabs(v), bound);
}

TEST(Classifier, TooSmallInput) {
  EXPECT_THROW(build_small_cnn({3, 8, 8}, 10, 1), ConfigError);
  EXPECT_THROW(build_small_cnn({3, 16, 16}, 1, 1), ConfigError);
}

TEST(Classifier, ForwardShapesAndProbabilities) {
  std::mt19937_64 rng(1);
  const Classifier c = build_small_cnn({3, 16, 16}, 7, 2);
  const Tensor x = testing::uniform(rng, {3, 16, 16});
  const Prediction p = predict(c, x);
  EXPECT_EQ(p.logits.size(), 7u);
  double s = 0;
  for (double v : p.probabilities.values()) {
    EXPECT_GE(v, 0.0);
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_THROW(predict(c, testing::uniform(rng, {3, 16, 17})), ShapeError);
}

TEST(Classifier, BatchForwardMatchesSingle) {
  std::mt19937_64 rng(3);
  const Classifier c = build_small_cnn({3, 16, 16}, 10, 2);
  const Tensor b = testing::uniform(rng, {2, 3, 16, 16});
  ad::Tape t;
  const Tensor out = c.forward(t, t.constant(b)).logits.value();
  for (std::size_t n = 0; n < 2; ++n) {
    Tensor one(Shape{3, 16, 16}, std::vector<double>(b.values().begin() + n * 768, b.values().begin() + (n + 1) * 768));
    const Prediction p = predict(c, one);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(out[n * 10 + k], p.logits[k], 1e-12);
  }
}

TEST(Classifier, UntrainedAccuracyNearChance) {
  const Dataset d = make_synthetic({10, 100, 16, 16, 21});
  const Classifier c = build_small_cnn({3, 16, 16}, 10, 22);
  EXPECT_NEAR(accuracy(c, d), 0.1, 0.05);
}

TEST(Train, ZeroLearningRateIsNoop) {
  const Dataset d = make_synthetic({10, 4, 16, 16, 1});
  Classifier c = build_small_cnn({3, 16, 16}, 10, 2);
  const auto before = c.parameter_checksum();
  train(c, d, {1, 0.0, 8, 3});
  EXPECT_EQ(c.parameter_checksum(), before);
  EXPECT_FALSE(c.trainable());
}

TEST(Train, DeterministicAndLearning) {
  const Dataset d = make_synthetic({10, 20, 16, 16, 1});
  Classifier a = build_small_cnn({3, 16, 16}, 10, 2);
  Classifier b = build_small_cnn({3, 16, 16}, 10, 2);
  const TrainingReport ra = train(a, d, {4, 0.1, 16, 3});
  const TrainingReport rb = train(b, d, {4, 0.1, 16, 3});
  EXPECT_EQ(a.parameter_checksum(), b.parameter_checksum());
  ASSERT_EQ(ra.epochs.size(), 4u);
  for (std::size_t e = 0; e < 4; ++e) EXPECT_EQ(ra.epochs[e].loss, rb.epochs[e].loss);
  EXPECT_LT(ra.epochs.back().loss, ra.epochs.front().loss);
}

TEST(Train, Errors) {
  Classifier c = build_small_cnn({3, 16, 16}, 10, 2);
  EXPECT_THROW(train(c, Dataset({3, 16, 16}, 10, 0), {}), UsageError);
  const Dataset wrong = make_synthetic({10, 1, 20, 20, 1});
  EXPECT_THROW(train(c, wrong, {}), ShapeError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(4);
  const Classifier c = build_small_cnn({3, 16, 16}, 10, 9);
  const fs::path p = temp_path("rt.ckpt");
  save_checkpoint(c, p);
  const Classifier d = load_checkpoint(p);
  EXPECT_EQ(c.layers(), d.layers());
  EXPECT_EQ(c.input_shape(), d.input_shape());
  for (std::size_t i = 0; i < c.parameters().size(); ++i) EXPECT_EQ(c.parameters()[i], d.parameters()[i]);
  for (int k = 0; k < 10; ++k) {
    const Tensor x = testing::uniform(rng, {3, 16, 16});
    EXPECT_EQ(predict(c, x).logits, predict(d, x).logits);
  }
  const fs::path q = temp_path("rt2.ckpt");
  save_checkpoint(d, q);
  EXPECT_EQ(slurp(p), slurp(q));
  EXPECT_EQ(std::string(slurp(p).data(), 8), "MNDCKPT1");
}

TEST(Checkpoint, CorruptionsDetected) {
  const Classifier c = build_small_cnn({3, 16, 16}, 10, 9);
  const fs::path p = temp_path("bad.ckpt");
  save_checkpoint(c, p);
  const auto good = slurp(p);

  auto truncated = good;
  truncated.resize(good.size() - 100);
  spit(p, truncated);
  EXPECT_THROW(load_checkpoint(p), CorruptFileError);

  auto flipped = good;
  flipped[good.size() / 2] ^= 0x01;
  spit(p, flipped);
  try {
    load_checkpoint(p);
    FAIL() << "flipped payload byte accepted";
  } catch (const CorruptFileError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }

  auto magic = good;
  magic[0] = 'X';
  spit(p, magic);
  EXPECT_THROW(load_checkpoint(p), CorruptFileError);

  spit(p, {});
  EXPECT_THROW(load_checkpoint(p), CorruptFileError);
  EXPECT_THROW(load_checkpoint(temp_path("missing.ckpt")), Error);
}

TEST(Dataset, DeterministicBytes) {
  const fs::path a = temp_path("a.bin"), b = temp_path("b.bin");
  save_dataset(make_synthetic({10, 5, 16, 16, 3}), a);
  save_dataset(make_synthetic({10, 5, 16, 16, 3}), b);
  EXPECT_EQ(slurp(a), slurp(b));
  save_dataset(make_synthetic({10, 5, 16, 16, 4}), b);
  EXPECT_NE(slurp(a), slurp(b));
  EXPECT_EQ(std::string(slurp(a).data(), 7), "MNDDAT1");
}

TEST(Dataset, RoundTripAndCounts) {
  const Dataset d = make_synthetic({10, 50, 16, 16, 3});
  EXPECT_EQ(d.size(), 500u);
  std::vector<std::size_t> per(10, 0);
  for (auto l : d.labels()) ++per[l];
  for (auto n : per) EXPECT_EQ(n, 50u);
  const fs::path p = temp_path("rt.bin");
  save_dataset(d, p);
  EXPECT_EQ(load_dataset(p), d);
  const Tensor img = d.image(0);
  EXPECT_EQ(img.shape(), (Shape{3, 16, 16}));
  for (double v : img.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_DOUBLE_EQ(std::round(v * 255.0), v * 255.0);
  }
}

TEST(Dataset, ClassesAreSeparated) {
  const Dataset d = make_synthetic({10, 30, 16, 16, 5});
  std::vector<std::vector<double>> mean(10, std::vector<double>(d.pixels_per_image(), 0.0));
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto px = d.pixels(i);
    for (std::size_t j = 0; j < px.size(); ++j) mean[d.label(i)][j] += px[j] / 30.0;
  }
  for (std::size_t a = 0; a < 10; ++a) {
    for (std::size_t b = a + 1; b < 10; ++b) {
      double l1 = 0;
      for (std::size_t j = 0; j < mean[a].size(); ++j) l1 += std::fabs(mean[a][j] - mean[b][j]);
      EXPECT_GT(l1, 0.0);
    }
  }
}

TEST(Dataset, CorruptionsDetected) {
  const fs::path p = temp_path("bad.bin");
  save_dataset(make_synthetic({10, 2, 16, 16, 3}), p);
  auto bytes = slurp(p);
  bytes.pop_back();
  spit(p, bytes);
  EXPECT_THROW(load_dataset(p), CorruptFileError);
  bytes[0] = 'Q';
  spit(p, bytes);
  EXPECT_THROW(load_dataset(p), CorruptFileError);
}

TEST(Dataset, Errors) {
  EXPECT_THROW(make_synthetic({1, 5, 16, 16, 1}), ConfigError);
  EXPECT_THROW(make_synthetic({10, 5, 8, 8, 1}), ConfigError);
  Dataset d({3, 16, 16}, 10, 0);
  std::vector<std::uint8_t> px(768, 0);
  EXPECT_THROW(d.add(px, 10), UsageError);
  EXPECT_THROW(d.add(std::span<const std::uint8_t>(px.data(), 5), 1), ShapeError);
}

}  // namespace
}  // namespace mnd
