#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "mnd/attacks.hpp"
#include "mnd/errors.hpp"
#include "mnd/experiment.hpp"
#include "mnd/image_io.hpp"
#include "mnd/metrics.hpp"
#include "support.hpp"

namespace mnd {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "mnd_cli_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_all(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

ExperimentConfig small_config(const fs::path& out) {
  ExperimentConfig c;
  c.out = out.string();
  c.dataset.samples_per_class = 30;
  c.dataset.test_per_class = 3;
  c.dataset.height = 16;
  c.dataset.width = 16;
  c.classifier.epochs = 6;
  c.attack.num_images = 6;
  c.attack.methods = {"bim", "pgd", "nonorm", "mnd"};
  c.attack.non_targeted.max_iters = 80;
  c.attack.targeted.max_iters = 80;
  c.attack.threads = 2;
  return c;
}

TEST(Config, DefaultsValidateAndRoundTrip) {
  const ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  const std::string text = config_to_json(c);
  EXPECT_EQ(config_to_json(parse_config(text)), text);
  EXPECT_EQ(c.attack.methods.size(), 11u);
  EXPECT_EQ(c.attack.non_targeted.r, 0.0625);
}

TEST(Config, OverridesApply) {
  const ExperimentConfig c = parse_config(R"({"seed": 5, "attack": {"num_images": 7,
      "non_targeted": {"dev_norm": "l2", "form": "prob_power"}, "baseline": {"epsilon": 0.05}}})");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.attack.num_images, 7u);
  EXPECT_EQ(c.attack.non_targeted.dev_norm, Norm::kL2);
  EXPECT_EQ(c.attack.non_targeted.form, NonTargetedForm::kProbPower);
  EXPECT_EQ(c.attack.baseline.epsilon, 0.05);
  EXPECT_EQ(c.dataset.num_classes, 10u);
}

void expect_config_error(const std::string& text, const std::string& key) {
  try {
    parse_config(text);
    FAIL() << "accepted: " << text;
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
  }
}

TEST(Config, RejectsUnknownAndOutOfRange) {
  expect_config_error(R"({"bogus": 1})", "bogus");
  expect_config_error(R"({"attack": {"non_targeted": {"betaa": 1}}})", "attack.non_targeted.betaa");
  expect_config_error(R"({"attack": {"non_targeted": {"beta1": -1}}})", "beta");
  expect_config_error(R"({"attack": {"targeted": {"r": 0}}})", "r");
  expect_config_error(R"({"attack": {"methods": ["fgsm"]}})", "fgsm");
  expect_config_error(R"({"attack": {"targeted_methods": ["bim"]}})", "bim");
  expect_config_error(R"({"attack": {"baseline": {"step": 1.0}}})", "baseline");
  expect_config_error(R"({"classifier": {"epochs": "ten"}})", "classifier.epochs");
  expect_config_error(R"({"dataset": {"height": 8}})", "dataset");
  expect_config_error(R"({"attack": {"non_targeted": {"dev_norm": "l3"}}})", "dev_norm");
  EXPECT_THROW(parse_config("{not json"), ConfigError);
}

TEST(ImageIo, RoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  const fs::path dir = scratch("io");
  const Tensor img = testing::quantize(testing::uniform(rng, {3, 9, 7}));
  write_pnm(img, dir / "a.ppm");
  EXPECT_EQ(read_pnm(dir / "a.ppm"), img);
  const Tensor gray = testing::quantize(testing::uniform(rng, {1, 5, 4}));
  write_pnm(gray, dir / "g.pgm");
  EXPECT_EQ(read_pnm(dir / "g.pgm"), gray);
  EXPECT_EQ(read_all(dir / "a.ppm").substr(0, 11), "P6\n7 9\n255\n");
}

TEST(ImageIo, HeaderCommentsAndErrors) {
  const fs::path dir = scratch("io2");
  {
    std::ofstream out(dir / "c.ppm", std::ios::binary);
    out << "P6\n# made by hand\n2 1\n255\n";
    out.write("\x00\x80\xff\x01\x02\x03", 6);
  }
  const Tensor t = read_pnm(dir / "c.ppm");
  EXPECT_EQ(t.shape(), (Shape{3, 1, 2}));
  EXPECT_EQ(t[0], 0.0);
  EXPECT_EQ(t[2], 128.0 / 255.0);
  {
    std::ofstream out(dir / "short.ppm", std::ios::binary);
    out << "P6\n4 4\n255\n" << "abc";
  }
  EXPECT_THROW(read_pnm(dir / "short.ppm"), CorruptFileError);
  {
    std::ofstream out(dir / "ascii.ppm", std::ios::binary);
    out << "P3\n1 1\n255\n0 0 0\n";
  }
  EXPECT_THROW(read_pnm(dir / "ascii.ppm"), CorruptFileError);
}

TEST(ImageIo, FolderLoaderResizes) {
  const fs::path dir = scratch("folder");
  write_pnm(Tensor(Shape{3, 8, 8}, 0.2), dir / "b.ppm");
  write_pnm(Tensor(Shape{3, 20, 20}, 0.6), dir / "a.ppm");
  std::ofstream(dir / "notes.txt") << "ignored";
  const auto imgs = load_image_folder(dir, 16, 16);
  ASSERT_EQ(imgs.size(), 2u);
  EXPECT_EQ(imgs[0].shape(), (Shape{3, 16, 16}));
  EXPECT_NEAR(imgs[0][0], 0.6, 1.0 / 255);
  EXPECT_NEAR(imgs[1][0], 0.2, 1.0 / 255);
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch("pipeline"));
    config_ = new ExperimentConfig(small_config(*root_));
    cmd_gen_data(*config_);
    cmd_train(*config_);
    cmd_attack(*config_);
    cmd_evaluate(*config_);
  }
  static void TearDownTestSuite() {
    delete config_;
    delete root_;
  }
  static fs::path* root_;
  static ExperimentConfig* config_;
};
fs::path* Pipeline::root_ = nullptr;
ExperimentConfig* Pipeline::config_ = nullptr;

TEST_F(Pipeline, DatasetFilesAndManifest) {
  const json m = json::parse(read_all(*root_ / "data" / "manifest.json"));
  EXPECT_EQ(m["files"][0]["count"], 300);
  EXPECT_EQ(m["files"][1]["count"], 30);
  const fs::path again = scratch("pipeline_again");
  ExperimentConfig c = *config_;
  c.out = again.string();
  cmd_gen_data(c);
  EXPECT_EQ(read_all(again / "data" / "train.bin"), read_all(*root_ / "data" / "train.bin"));
  EXPECT_EQ(read_all(again / "data" / "manifest.json"), read_all(*root_ / "data" / "manifest.json"));
}

TEST_F(Pipeline, TrainingReport) {
  const auto rows = read_csv(*root_ / "model" / "training.csv");
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"epoch", "loss", "accuracy"}));
  EXPECT_TRUE(fs::exists(*root_ / "model" / "classifier.ckpt"));
}

TEST_F(Pipeline, SkipLogListsExactlyTheMisclassified) {
  const Classifier clf = load_checkpoint(*root_ / "model" / "classifier.ckpt");
  const Dataset test = load_dataset(*root_ / "data" / "test.bin");
  const json index = json::parse(read_all(*root_ / "attacks" / "index.json"));
  const auto ids = index["images"].get<std::vector<std::size_t>>();
  ASSERT_EQ(ids.size(), 6u);
  std::vector<std::size_t> expected_skips;
  for (std::size_t i = 0; i <= ids.back(); ++i) {
    if (predict(clf, test.image(i)).label != test.label(i)) expected_skips.push_back(i);
  }
  const auto rows = read_csv(*root_ / "attacks" / "skipped.csv");
  ASSERT_EQ(rows.size(), expected_skips.size() + 1);
  for (std::size_t k = 0; k < expected_skips.size(); ++k) EXPECT_EQ(std::stoul(rows[k + 1][0]), expected_skips[k]);
}

TEST_F(Pipeline, StoredImagesReverify) {
  const Classifier clf = load_checkpoint(*root_ / "model" / "classifier.ckpt");
  std::size_t records = 0;
  for (const auto& entry : fs::recursive_directory_iterator(*root_ / "attacks")) {
    if (entry.path().extension() != ".json" || entry.path().filename() == "index.json") continue;
    const json rec = json::parse(read_all(entry.path()));
    fs::path img = entry.path();
    img.replace_extension(".ppm");
    const Tensor z = read_pnm(img);
    EXPECT_TRUE(on_grid(z));
    EXPECT_EQ(predict(clf, z).label, rec["adversarial_class"].get<std::size_t>());
    ++records;
  }
  EXPECT_EQ(records, 6u * 5u);  // 4 non-targeted methods + targeted mnd
}

TEST_F(Pipeline, AggregateRecomputesFromPerImage) {
  const auto per = read_csv(*root_ / "reports" / "per_image.csv");
  const auto agg = read_csv(*root_ / "reports" / "aggregate.csv");
  ASSERT_EQ(agg.size(), 1u + 5u);
  std::map<std::string, std::vector<ImageRecord>> by_mode;
  for (std::size_t i = 1; i < per.size(); ++i) {
    const auto& r = per[i];
    by_mode[r[0]].push_back({r[1], std::stoul(r[2]), parse_double(r[3]), parse_double(r[4]), r[5] == "1",
                             std::stoul(r[6]), parse_double(r[7])});
  }
  std::size_t row = 1;
  for (const char* mode : {"non-targeted", "targeted"}) {
    std::vector<std::string> methods;
    for (std::size_t i = row; i < agg.size() && agg[i][0] == mode; ++i) methods.push_back(agg[i][1]);
    const auto sums = aggregate(by_mode[mode], methods);
    for (const auto& s : sums) {
      const auto& a = agg[row++];
      EXPECT_EQ(a[1], s.method);
      EXPECT_EQ(a[6], format_double(s.psnr_mean));
      EXPECT_EQ(a[7], format_double(s.psnr_std));
      EXPECT_EQ(a[8], format_double(s.ssim_mean));
      EXPECT_EQ(a[9], format_double(s.ssim_std));
    }
  }
  // report order: baselines first
  EXPECT_EQ(agg[1][1], "pgd");
  EXPECT_EQ(agg[2][1], "bim");
  EXPECT_EQ(agg[4][1], "mnd");
}

TEST_F(Pipeline, TamperedImageIsCaught) {
  const fs::path copy = scratch("tampered");
  fs::copy(*root_, copy, fs::copy_options::recursive);
  ExperimentConfig c = *config_;
  c.out = copy.string();
  const json index = json::parse(read_all(copy / "attacks" / "index.json"));
  const fs::path dir = copy / "attacks" / "non-targeted" / "bim";
  for (std::size_t id : index["images"].get<std::vector<std::size_t>>()) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu", id);
    const json rec = json::parse(read_all(dir / (std::string(name) + ".json")));
    if (!rec["success"].get<bool>()) continue;
    // a successful record whose image is replaced by the clean one
    fs::copy_file(copy / "attacks" / "clean" / (std::string(name) + ".ppm"), dir / (std::string(name) + ".ppm"),
                  fs::copy_options::overwrite_existing);
    EXPECT_THROW(cmd_evaluate(c), EvaluationError);
    return;
  }
  GTEST_SKIP() << "no successful bim record to tamper with";
}

TEST_F(Pipeline, AttackIsDeterministic) {
  const fs::path other = scratch("pipeline_repeat");
  fs::copy(*root_ / "data", other / "data", fs::copy_options::recursive);
  fs::copy(*root_ / "model", other / "model", fs::copy_options::recursive);
  ExperimentConfig c = *config_;
  c.out = other.string();
  cmd_attack(c);
  cmd_evaluate(c);
  EXPECT_EQ(read_all(other / "reports" / "per_image.csv"), read_all(*root_ / "reports" / "per_image.csv"));
  EXPECT_EQ(read_all(other / "reports" / "aggregate.csv"), read_all(*root_ / "reports" / "aggregate.csv"));
}

TEST(Commands, MissingInputsAreUsageErrors) {
  ExperimentConfig c = small_config(scratch("empty"));
  EXPECT_THROW(cmd_train(c), UsageError);
  EXPECT_THROW(cmd_attack(c), UsageError);
  EXPECT_THROW(cmd_evaluate(c), UsageError);
}

TEST(Commands, ReproduceTagsTheFailingStage) {
  ExperimentConfig c = small_config(scratch("stage"));
  c.attack.non_targeted.alpha = 1e300;
  try {
    cmd_reproduce(c);
    FAIL() << "divergent attack not reported";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "attack");
    EXPECT_EQ(std::string(e.what()).rfind("[attack]", 0), 0u);
  }
}

int run(const std::string& args) {
  const std::string cmd = std::string(MND_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli");
  {
    std::ofstream cfg(dir / "cfg.json");
    cfg << config_to_json(small_config(dir / "out"));
  }
  {
    std::ofstream bad(dir / "bad.json");
    bad << R"({"nope": true})";
  }
  EXPECT_NE(run(""), 0);
  EXPECT_EQ(run("gen-data --config " + (dir / "cfg.json").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "data" / "train.bin"));
  EXPECT_EQ(run("attack --config " + (dir / "cfg.json").string()), 2);
  EXPECT_EQ(run("train --config " + (dir / "bad.json").string()), 2);
  EXPECT_NE(run("attack --mode sideways --config " + (dir / "cfg.json").string()), 0);
  EXPECT_EQ(run("gen-data --config " + (dir / "cfg.json").string() + " --out " + (dir / "moved").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "moved" / "data" / "manifest.json"));
}

TEST(Cli, ModeAndMethodSelection) {
  const fs::path dir = scratch("cli_sel");
  {
    std::ofstream cfg(dir / "cfg.json");
    cfg << config_to_json(small_config(dir / "out"));
  }
  const std::string cfg = " --config " + (dir / "cfg.json").string();
  ASSERT_EQ(run("gen-data" + cfg), 0);
  ASSERT_EQ(run("train" + cfg), 0);
  ASSERT_EQ(run("attack --mode non-targeted --methods bim,mnd" + cfg), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "attacks" / "non-targeted" / "mnd"));
  EXPECT_FALSE(fs::exists(dir / "out" / "attacks" / "targeted"));
  EXPECT_FALSE(fs::exists(dir / "out" / "attacks" / "non-targeted" / "pgd"));
  ASSERT_EQ(run("attack --mode targeted" + cfg), 0);
  EXPECT_EQ(run("attack --mode targeted --methods bim" + cfg), 2);
  ASSERT_EQ(run("evaluate" + cfg), 0);
  const auto idx = json::parse(read_all(dir / "out" / "attacks" / "index.json"));
  EXPECT_EQ(idx["modes"]["non-targeted"].size(), 2u);
  EXPECT_EQ(idx["modes"]["targeted"].size(), 1u);
}

}  // namespace
}  // namespace mnd
