#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mnd/attacks.hpp"
#include "mnd/losses.hpp"

namespace mnd {

struct DatasetSection {
  std::string source = "synthetic";  // or "folder"
  std::string folder;                // .ppm images when source == "folder"
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 500;
  std::size_t test_per_class = 100;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t train_seed = 1;
  std::uint64_t test_seed = 2;
};

struct ClassifierSection {
  std::size_t epochs = 20;
  double learning_rate = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t init_seed = 7;
  std::uint64_t shuffle_seed = 3;
};

/// Optimizer settings of one attack mode.
struct ModeSection {
  double alpha = 0.0;
  std::size_t max_iters = 0;
  double convergence_tol = 1e-6;
  std::size_t patience = 10;
  double beta1 = 0.0, beta2 = 0.0, beta3 = 0.0;
  double r = 0.0625;
  Norm dev_norm = Norm::kL1;
  Norm grad_norm = Norm::kL1;
  bool use_ssim = true;
  NonTargetedForm form = NonTargetedForm::kProbPlusLogit;
  LabelSource label_source = LabelSource::kGroundTruth;
  bool clamp_each_step = false;

  AttackConfig to_attack_config(AttackMode mode, std::uint64_t seed) const;
};

struct AttackSection {
  std::size_t num_images = 100;
  std::vector<std::string> methods{"bim", "pgd", "mifgsm", "di2fgsm", "nonorm", "l2", "l1",
                                   "ssim", "l2ssim", "l1ssim", "mnd"};
  std::vector<std::string> targeted_methods{"mnd"};
  ModeSection non_targeted;
  ModeSection targeted;
  BaselineConfig baseline;
  std::size_t threads = 0;  // 0: one per hardware thread
};

struct EvaluationSection {
  bool diff_maps = false;
  bool heatmaps = false;
  std::size_t artifact_images = 10;  // first N images get artifacts
};

struct ExperimentConfig {
  std::uint64_t seed = 0;  // added to every component seed
  std::string out = "mnd_out";
  DatasetSection dataset;
  ClassifierSection classifier;
  AttackSection attack;
  EvaluationSection evaluation;

  ExperimentConfig();
  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Parses a JSON document over the defaults. Unknown keys are rejected.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config);

/// Methods in report order: baselines, then the ablation rows.
std::vector<std::string> table_order();
bool is_baseline(const std::string& method);
std::string method_label(const std::string& method);
std::string mode_name(AttackMode mode);

struct Layout {
  std::filesystem::path root;
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path model() const { return root / "model"; }
  std::filesystem::path attacks() const { return root / "attacks"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path checkpoint() const { return model() / "classifier.ckpt"; }
};

struct AttackSelection {
  std::optional<AttackMode> mode;        // both modes when empty
  std::vector<std::string> methods;      // config methods when empty
};

void cmd_gen_data(const ExperimentConfig& config);
void cmd_train(const ExperimentConfig& config);
void cmd_attack(const ExperimentConfig& config, const AttackSelection& selection = {});
void cmd_evaluate(const ExperimentConfig& config);
void cmd_reproduce(const ExperimentConfig& config);

/// Wraps an error with the stage that raised it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace mnd
