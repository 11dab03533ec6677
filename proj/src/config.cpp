#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "mnd/errors.hpp"
#include "mnd/experiment.hpp"

namespace mnd {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were consumed so that
// anything left over can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + " must be an object");
  }

  template <class T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("expected true or false");
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!it->is_number_unsigned()) throw ConfigError("expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError("expected a string");
      }
      field = it->get<T>();
    } catch (const ConfigError& e) {
      throw ConfigError(where(key) + ": " + e.what());
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": wrong type");
    }
  }

  void get_list(const char* key, std::vector<std::string>& field) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_array()) throw ConfigError(where(key) + ": expected a list of strings");
    field.clear();
    for (const json& v : *it) {
      if (!v.is_string()) throw ConfigError(where(key) + ": expected a list of strings");
      field.push_back(v.get<std::string>());
    }
  }

  template <class E>
  void get_enum(const char* key, E& field, std::initializer_list<std::pair<const char*, E>> names) {
    std::string text;
    get(key, text);
    if (text.empty()) return;
    for (const auto& [name, value] : names) {
      if (text == name) {
        field = value;
        return;
      }
    }
    std::string allowed;
    for (const auto& [name, value] : names) allowed += std::string(allowed.empty() ? "" : ", ") + name;
    throw ConfigError(where(key) + ": '" + text + "' is not one of " + allowed);
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return Section(*it, where(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + where(it.key()) + "'");
    }
  }

 private:
  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

constexpr std::initializer_list<std::pair<const char*, Norm>> kNorms{
    {"l1", Norm::kL1}, {"l2", Norm::kL2}, {"none", Norm::kNone}};

std::string norm_name(Norm n) {
  switch (n) {
    case Norm::kL1: return "l1";
    case Norm::kL2: return "l2";
    case Norm::kNone: return "none";
  }
  return "none";
}

void read_mode(Section s, ModeSection& m) {
  s.get("alpha", m.alpha);
  s.get("max_iters", m.max_iters);
  s.get("convergence_tol", m.convergence_tol);
  s.get("patience", m.patience);
  s.get("beta1", m.beta1);
  s.get("beta2", m.beta2);
  s.get("beta3", m.beta3);
  s.get("r", m.r);
  s.get_enum("dev_norm", m.dev_norm, kNorms);
  s.get_enum("grad_norm", m.grad_norm, kNorms);
  s.get("use_ssim", m.use_ssim);
  s.get_enum("form", m.form,
             {{"prob_plus_logit", NonTargetedForm::kProbPlusLogit}, {"prob_power", NonTargetedForm::kProbPower}});
  s.get_enum("label_source", m.label_source,
             {{"ground_truth", LabelSource::kGroundTruth}, {"clean_prediction", LabelSource::kCleanPrediction}});
  s.get("clamp_each_step", m.clamp_each_step);
  s.finish();
}

json write_mode(const ModeSection& m) {
  return json{{"alpha", m.alpha},
              {"max_iters", m.max_iters},
              {"convergence_tol", m.convergence_tol},
              {"patience", m.patience},
              {"beta1", m.beta1},
              {"beta2", m.beta2},
              {"beta3", m.beta3},
              {"r", m.r},
              {"dev_norm", norm_name(m.dev_norm)},
              {"grad_norm", norm_name(m.grad_norm)},
              {"use_ssim", m.use_ssim},
              {"form", m.form == NonTargetedForm::kProbPlusLogit ? "prob_plus_logit" : "prob_power"},
              {"label_source", m.label_source == LabelSource::kGroundTruth ? "ground_truth" : "clean_prediction"},
              {"clamp_each_step", m.clamp_each_step}};
}

}  // namespace

AttackConfig ModeSection::to_attack_config(AttackMode mode, std::uint64_t seed) const {
  AttackConfig c;
  c.mode = mode;
  c.weights = LossWeights{beta1, beta2, beta3, r, dev_norm, grad_norm, use_ssim};
  c.form = form;
  c.label_source = label_source;
  c.alpha = alpha;
  c.max_iters = max_iters;
  c.convergence_tol = convergence_tol;
  c.patience = patience;
  c.clamp_each_step = clamp_each_step;
  c.seed = seed;
  return c;
}

ExperimentConfig::ExperimentConfig() {
  // Desk-scale calibration; see the README for how these were chosen.
  ModeSection& nt = attack.non_targeted;
  nt.alpha = 2e-3;
  nt.max_iters = 500;
  nt.beta1 = 0.05;
  nt.beta2 = 450.0;
  nt.beta3 = 0.01;
  ModeSection& t = attack.targeted;
  t.alpha = 0.1;
  t.max_iters = 1000;
  t.beta1 = 0.0005;
  t.beta2 = 0.45;
  t.beta3 = 0.0001;
}

std::vector<std::string> table_order() {
  return {"pgd", "mifgsm", "bim", "di2fgsm", "nonorm", "l2", "l1", "ssim", "l2ssim", "l1ssim", "mnd"};
}

bool is_baseline(const std::string& m) { return m == "bim" || m == "pgd" || m == "mifgsm" || m == "di2fgsm"; }

std::string method_label(const std::string& m) {
  for (Baseline b : kAllBaselines) {
    std::string key(baseline_name(b));
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    if (key == m) return std::string(baseline_name(b));
  }
  for (AblationPreset p : kAllPresets) {
    if (preset_key(p) == m) return std::string(preset_name(p));
  }
  throw ConfigError("unknown method '" + m + "'");
}

std::string mode_name(AttackMode mode) { return mode == AttackMode::kTargeted ? "targeted" : "non-targeted"; }

void ExperimentConfig::validate() const {
  if (out.empty()) throw ConfigError("out must not be empty");
  if (dataset.source != "synthetic" && dataset.source != "folder") {
    throw ConfigError("dataset.source must be 'synthetic' or 'folder'");
  }
  if (dataset.source == "folder" && dataset.folder.empty()) {
    throw ConfigError("dataset.folder is required when dataset.source is 'folder'");
  }
  if (dataset.num_classes < 2) throw ConfigError("dataset.num_classes must be at least 2");
  if (dataset.samples_per_class == 0) throw ConfigError("dataset.samples_per_class must be positive");
  if (dataset.test_per_class == 0) throw ConfigError("dataset.test_per_class must be positive");
  if (dataset.height < 16 || dataset.width < 16) throw ConfigError("dataset.height and dataset.width must be >= 16");
  if (classifier.epochs == 0) throw ConfigError("classifier.epochs must be positive");
  if (classifier.batch_size == 0) throw ConfigError("classifier.batch_size must be positive");
  if (!(classifier.learning_rate >= 0.0)) throw ConfigError("classifier.learning_rate must be >= 0");
  if (attack.num_images < 2) throw ConfigError("attack.num_images must be at least 2");
  for (const auto& m : attack.methods) {
    try {
      method_label(m);
    } catch (const ConfigError&) {
      throw ConfigError("attack.methods: unknown method '" + m + "'");
    }
  }
  for (const auto& m : attack.targeted_methods) {
    if (is_baseline(m)) throw ConfigError("attack.targeted_methods: baselines run non-targeted only ('" + m + "')");
    try {
      method_label(m);
    } catch (const ConfigError&) {
      throw ConfigError("attack.targeted_methods: unknown method '" + m + "'");
    }
  }
  auto check_mode = [](const ModeSection& s, AttackMode mode, const std::string& key) {
    try {
      s.to_attack_config(mode, 0).validate();
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  };
  check_mode(attack.non_targeted, AttackMode::kNonTargeted, "attack.non_targeted");
  check_mode(attack.targeted, AttackMode::kTargeted, "attack.targeted");
  try {
    attack.baseline.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("attack.baseline: ") + e.what());
  }
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("out", c.out);
  if (auto s = root.child("dataset")) {
    s->get("source", c.dataset.source);
    s->get("folder", c.dataset.folder);
    s->get("num_classes", c.dataset.num_classes);
    s->get("samples_per_class", c.dataset.samples_per_class);
    s->get("test_per_class", c.dataset.test_per_class);
    s->get("height", c.dataset.height);
    s->get("width", c.dataset.width);
    s->get("train_seed", c.dataset.train_seed);
    s->get("test_seed", c.dataset.test_seed);
    s->finish();
  }
  if (auto s = root.child("classifier")) {
    s->get("epochs", c.classifier.epochs);
    s->get("learning_rate", c.classifier.learning_rate);
    s->get("batch_size", c.classifier.batch_size);
    s->get("init_seed", c.classifier.init_seed);
    s->get("shuffle_seed", c.classifier.shuffle_seed);
    s->finish();
  }
  if (auto s = root.child("attack")) {
    s->get("num_images", c.attack.num_images);
    s->get_list("methods", c.attack.methods);
    s->get_list("targeted_methods", c.attack.targeted_methods);
    s->get("threads", c.attack.threads);
    if (auto m = s->child("non_targeted")) read_mode(*m, c.attack.non_targeted);
    if (auto m = s->child("targeted")) read_mode(*m, c.attack.targeted);
    if (auto b = s->child("baseline")) {
      BaselineConfig& bc = c.attack.baseline;
      b->get("epsilon", bc.epsilon);
      b->get("step", bc.step);
      b->get("steps", bc.steps);
      b->get("decay", bc.decay);
      b->get("transform_prob", bc.transform_prob);
      b->get("resize_min", bc.resize_min);
      b->get("resize_max", bc.resize_max);
      b->get("seed", bc.seed);
      b->finish();
    }
    s->finish();
  }
  if (auto s = root.child("evaluation")) {
    s->get("diff_maps", c.evaluation.diff_maps);
    s->get("heatmaps", c.evaluation.heatmaps);
    s->get("artifact_images", c.evaluation.artifact_images);
    s->finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  const BaselineConfig& b = c.attack.baseline;
  json j{{"seed", c.seed},
         {"out", c.out},
         {"dataset",
          {{"source", c.dataset.source},
           {"folder", c.dataset.folder},
           {"num_classes", c.dataset.num_classes},
           {"samples_per_class", c.dataset.samples_per_class},
           {"test_per_class", c.dataset.test_per_class},
           {"height", c.dataset.height},
           {"width", c.dataset.width},
           {"train_seed", c.dataset.train_seed},
           {"test_seed", c.dataset.test_seed}}},
         {"classifier",
          {{"epochs", c.classifier.epochs},
           {"learning_rate", c.classifier.learning_rate},
           {"batch_size", c.classifier.batch_size},
           {"init_seed", c.classifier.init_seed},
           {"shuffle_seed", c.classifier.shuffle_seed}}},
         {"attack",
          {{"num_images", c.attack.num_images},
           {"methods", c.attack.methods},
           {"targeted_methods", c.attack.targeted_methods},
           {"threads", c.attack.threads},
           {"non_targeted", write_mode(c.attack.non_targeted)},
           {"targeted", write_mode(c.attack.targeted)},
           {"baseline",
            {{"epsilon", b.epsilon},
             {"step", b.step},
             {"steps", b.steps},
             {"decay", b.decay},
             {"transform_prob", b.transform_prob},
             {"resize_min", b.resize_min},
             {"resize_max", b.resize_max},
             {"seed", b.seed}}}}},
         {"evaluation",
          {{"diff_maps", c.evaluation.diff_maps},
           {"heatmaps", c.evaluation.heatmaps},
           {"artifact_images", c.evaluation.artifact_images}}}};
  return j.dump(2) + "\n";
}

}  // namespace mnd
