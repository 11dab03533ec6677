#include "mnd/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "binary_io.hpp"
#include "mnd/classifier.hpp"
#include "mnd/dataset.hpp"
#include "mnd/errors.hpp"
#include "mnd/image_io.hpp"
#include "mnd/metrics.hpp"

namespace mnd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw CorruptFileError(path.string() + ": " + e.what());
  }
}

std::string image_name(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", id);
  return buf;
}

std::size_t worker_count(const ExperimentConfig& c) {
  if (c.attack.threads > 0) return c.attack.threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

void log(const std::string& line) { std::cerr << line << std::endl; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Classifier require_checkpoint(const Layout& layout) {
  if (!fs::exists(layout.checkpoint())) {
    throw UsageError("no checkpoint at " + layout.checkpoint().string() + "; run train first");
  }
  return load_checkpoint(layout.checkpoint());
}

AblationPreset preset_of(const std::string& method) {
  for (AblationPreset p : kAllPresets) {
    if (preset_key(p) == method) return p;
  }
  throw ConfigError("unknown method '" + method + "'");
}

Baseline baseline_of(const std::string& method) {
  if (method == "bim") return Baseline::kBim;
  if (method == "pgd") return Baseline::kPgd;
  if (method == "mifgsm") return Baseline::kMifgsm;
  if (method == "di2fgsm") return Baseline::kDi2fgsm;
  throw ConfigError("unknown baseline '" + method + "'");
}

// Methods sorted into report order; unknown extras keep their relative order at the end.
std::vector<std::string> in_table_order(const std::vector<std::string>& methods) {
  std::vector<std::string> out;
  for (const std::string& m : table_order()) {
    if (std::find(methods.begin(), methods.end(), m) != methods.end()) out.push_back(m);
  }
  return out;
}

struct Candidate {
  std::size_t id;
  Tensor image;
  long label;  // -1 when unknown
};

}  // namespace

void cmd_gen_data(const ExperimentConfig& config) {
  config.validate();
  const Layout layout{config.out};
  fs::create_directories(layout.data());
  const DatasetSection& d = config.dataset;
  json files = json::array();
  auto emit = [&](const std::string& name, std::size_t per_class, std::uint64_t seed) {
    const Dataset data = make_synthetic({d.num_classes, per_class, d.height, d.width, config.seed + seed});
    const fs::path path = layout.data() / name;
    save_dataset(data, path);
    const auto bytes = detail::read_file(path.string());
    files.push_back({{"name", name},
                     {"count", data.size()},
                     {"shape", data.image_shape()},
                     {"seed", data.seed()},
                     {"num_classes", data.num_classes()},
                     {"per_class", per_class},
                     {"fnv1a", hex64(detail::fnv1a(bytes))}});
    log("gen-data: " + std::to_string(data.size()) + " records -> " + path.string());
  };
  emit("train.bin", d.samples_per_class, d.train_seed);
  emit("test.bin", d.test_per_class, d.test_seed);
  write_text(layout.data() / "manifest.json", json{{"files", files}}.dump(2) + "\n");
}

void cmd_train(const ExperimentConfig& config) {
  config.validate();
  const Layout layout{config.out};
  const fs::path train_path = layout.data() / "train.bin";
  if (!fs::exists(train_path)) throw UsageError("no dataset at " + train_path.string() + "; run gen-data first");
  const Dataset train_set = load_dataset(train_path);
  const Dataset test_set = load_dataset(layout.data() / "test.bin");
  Classifier clf =
      build_small_cnn(train_set.image_shape(), train_set.num_classes(), config.seed + config.classifier.init_seed);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainingReport report =
      train(clf, train_set,
            {config.classifier.epochs, config.classifier.learning_rate, config.classifier.batch_size,
             config.seed + config.classifier.shuffle_seed});
  fs::create_directories(layout.model());
  save_checkpoint(clf, layout.checkpoint());

  std::string csv = "epoch,loss,accuracy\n";
  for (const EpochStats& e : report.epochs) {
    csv += std::to_string(e.epoch) + "," + format_double(e.loss) + "," + format_double(e.accuracy) + "\n";
  }
  write_text(layout.model() / "training.csv", csv);
  const double train_acc = accuracy(clf, train_set);
  const double test_acc = accuracy(clf, test_set);
  write_text(layout.model() / "summary.json", json{{"train_accuracy", train_acc},
                                                    {"test_accuracy", test_acc},
                                                    {"epochs", config.classifier.epochs},
                                                    {"parameter_checksum", hex64(clf.parameter_checksum())}}
                                                  .dump(2) +
                                                  "\n");
  char line[160];
  std::snprintf(line, sizeof line, "train: %zu epochs in %.1fs, train accuracy %.4f, held-out accuracy %.4f",
                config.classifier.epochs, seconds_since(t0), train_acc, test_acc);
  log(line);
}

void cmd_attack(const ExperimentConfig& config, const AttackSelection& selection) {
  config.validate();
  const Layout layout{config.out};
  const Classifier clf = require_checkpoint(layout);
  const std::uint64_t checksum = clf.parameter_checksum();

  // Choose the images.
  std::vector<Candidate> chosen;
  std::string skipped = "image_id,label,predicted\n";
  if (config.dataset.source == "folder") {
    auto images = load_image_folder(config.dataset.folder, clf.input_shape()[1], clf.input_shape()[2]);
    for (std::size_t i = 0; i < images.size() && chosen.size() < config.attack.num_images; ++i) {
      chosen.push_back({i, project_to_grid(images[i]), -1});
    }
  } else {
    const fs::path test_path = layout.data() / "test.bin";
    if (!fs::exists(test_path)) throw UsageError("no dataset at " + test_path.string() + "; run gen-data first");
    const Dataset test_set = load_dataset(test_path);
    for (std::size_t i = 0; i < test_set.size() && chosen.size() < config.attack.num_images; ++i) {
      Tensor x = test_set.image(i);
      const std::size_t predicted = predict(clf, x).label;
      if (predicted != test_set.label(i)) {
        skipped += std::to_string(i) + "," + std::to_string(test_set.label(i)) + "," + std::to_string(predicted) + "\n";
        continue;
      }
      chosen.push_back({i, std::move(x), static_cast<long>(test_set.label(i))});
    }
  }
  if (chosen.size() < 2) throw UsageError("fewer than 2 usable images to attack");
  fs::create_directories(layout.attacks() / "clean");
  write_text(layout.attacks() / "skipped.csv", skipped);
  for (const Candidate& c : chosen) write_pnm(c.image, layout.attacks() / "clean" / (image_name(c.id) + ".ppm"));

  // Modes and methods.
  std::vector<std::pair<AttackMode, std::vector<std::string>>> plan;
  auto wanted = [&](AttackMode mode) { return !selection.mode || *selection.mode == mode; };
  if (wanted(AttackMode::kNonTargeted)) {
    plan.emplace_back(AttackMode::kNonTargeted,
                      selection.methods.empty() ? config.attack.methods : selection.methods);
  }
  if (wanted(AttackMode::kTargeted)) {
    std::vector<std::string> methods = selection.methods.empty() ? config.attack.targeted_methods : selection.methods;
    if (selection.methods.empty() || selection.mode) {
      for (const auto& m : methods) {
        if (is_baseline(m)) throw UsageError("baseline '" + m + "' has no targeted variant");
      }
    } else {
      std::erase_if(methods, [](const std::string& m) { return is_baseline(m); });
    }
    plan.emplace_back(AttackMode::kTargeted, methods);
  }
  for (auto& [mode, methods] : plan) {
    for (const auto& m : methods) method_label(m);
  }

  const std::size_t threads = worker_count(config);
  for (const auto& [mode, methods] : plan) {
    const ModeSection& section =
        mode == AttackMode::kTargeted ? config.attack.targeted : config.attack.non_targeted;
    for (const std::string& method : methods) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<AttackResult> results(chosen.size());
      parallel_for(chosen.size(), threads, [&](std::size_t i) {
        const Candidate& c = chosen[i];
        if (is_baseline(method)) {
          BaselineConfig bc = config.attack.baseline;
          bc.seed = config.seed + bc.seed + c.id;
          const std::size_t label = c.label >= 0 ? static_cast<std::size_t>(c.label) : predict(clf, c.image).label;
          results[i] = run_baseline(baseline_of(method), c.image, clf, label, bc);
        } else {
          AttackConfig ac = section.to_attack_config(mode, config.seed + c.id);
          ac.weights = preset_weights(preset_of(method), ac.weights);
          results[i] = mnd_attack(c.image, clf, ac, c.label);
        }
      });
      const fs::path dir = layout.attacks() / mode_name(mode) / method;
      fs::create_directories(dir);
      std::size_t ok = 0;
      for (std::size_t i = 0; i < chosen.size(); ++i) {
        const AttackResult& r = results[i];
        ok += r.success ? 1 : 0;
        write_pnm(r.adversarial, dir / (image_name(chosen[i].id) + ".ppm"));
        json rec{{"image_id", chosen[i].id},
                 {"method", method},
                 {"mode", mode_name(mode)},
                 {"ground_truth", chosen[i].label},
                 {"clean_class", r.clean_class},
                 {"adversarial_class", r.adversarial_class},
                 {"target_class", r.target_class ? json(*r.target_class) : json(nullptr)},
                 {"success", r.success},
                 {"iterations", r.iterations_used},
                 {"final_loss", std::isfinite(r.final_loss) ? json(r.final_loss) : json(nullptr)}};
        write_text(dir / (image_name(chosen[i].id) + ".json"), rec.dump(2) + "\n");
      }
      char line[200];
      std::snprintf(line, sizeof line, "attack %s %s: %zu/%zu succeeded in %.1fs", mode_name(mode).c_str(),
                    method.c_str(), ok, chosen.size(), seconds_since(t0));
      log(line);
    }
  }
  if (clf.parameter_checksum() != checksum) throw EvaluationError("classifier parameters changed during attacks");

  // Index of everything attacked so far on this image set.
  std::vector<std::size_t> ids;
  for (const Candidate& c : chosen) ids.push_back(c.id);
  json index{{"images", ids}, {"modes", json::object()}};
  const fs::path index_path = layout.attacks() / "index.json";
  if (fs::exists(index_path)) {
    json old = read_json(index_path);
    if (old.value("images", json::array()) == index["images"] && old.contains("modes")) index["modes"] = old["modes"];
  }
  for (const auto& [mode, methods] : plan) {
    std::vector<std::string> merged = index["modes"].value(mode_name(mode), std::vector<std::string>{});
    for (const auto& m : methods) {
      if (std::find(merged.begin(), merged.end(), m) == merged.end()) merged.push_back(m);
    }
    index["modes"][mode_name(mode)] = in_table_order(merged);
  }
  index["parameter_checksum"] = hex64(checksum);
  write_text(index_path, index.dump(2) + "\n");
}

namespace {

struct EvalRecord {
  std::string mode;
  ImageRecord rec;
};

std::vector<EvalRecord> evaluate_records(const ExperimentConfig& config, const Classifier& clf) {
  const Layout layout{config.out};
  const fs::path index_path = layout.attacks() / "index.json";
  if (!fs::exists(index_path)) throw UsageError("no attack outputs at " + layout.attacks().string() + "; run attack first");
  const json index = read_json(index_path);
  const auto ids = index.at("images").get<std::vector<std::size_t>>();

  std::map<std::size_t, Tensor> cleans;
  for (std::size_t id : ids) cleans.emplace(id, read_pnm(layout.attacks() / "clean" / (image_name(id) + ".ppm")));

  std::vector<EvalRecord> out;
  for (const char* mode : {"non-targeted", "targeted"}) {
    if (!index.at("modes").contains(mode)) continue;
    for (const std::string& method : index["modes"][mode].get<std::vector<std::string>>()) {
      const fs::path dir = layout.attacks() / mode / method;
      for (std::size_t id : ids) {
        const Tensor& x = cleans.at(id);
        const Tensor z = read_pnm(dir / (image_name(id) + ".ppm"));
        const json rec = read_json(dir / (image_name(id) + ".json"));
        const std::size_t predicted = predict(clf, z).label;
        const auto recorded = rec.at("adversarial_class").get<std::size_t>();
        if (predicted != recorded) {
          throw EvaluationError(dir.string() + "/" + image_name(id) + ".ppm reclassifies as " +
                                std::to_string(predicted) + ", record says " + std::to_string(recorded));
        }
        const bool success = rec.at("target_class").is_null()
                                 ? predicted != rec.at("clean_class").get<std::size_t>()
                                 : predicted == rec.at("target_class").get<std::size_t>();
        if (success != rec.at("success").get<bool>()) {
          throw EvaluationError(dir.string() + "/" + image_name(id) + ": recorded success does not re-verify");
        }
        ImageRecord r;
        r.method = method;
        r.image_id = id;
        r.psnr = psnr(z, x);
        r.ssim = ssim_eval(z, x);
        r.success = success;
        r.iterations = rec.at("iterations").get<std::size_t>();
        r.deviation_ratio = deviation_pixel_ratio(z, x);
        out.push_back({mode, r});
      }
    }
  }
  return out;
}

void write_artifacts(const ExperimentConfig& config, const Classifier& clf, const std::vector<EvalRecord>& records) {
  const Layout layout{config.out};
  std::set<std::size_t> ids;
  for (const auto& r : records) ids.insert(r.rec.image_id);
  std::set<std::size_t> picked;
  for (std::size_t id : ids) {
    if (picked.size() >= config.evaluation.artifact_images) break;
    picked.insert(id);
  }
  if (config.evaluation.heatmaps) fs::create_directories(layout.reports() / "heatmaps");
  if (config.evaluation.diff_maps) fs::create_directories(layout.reports() / "diff_maps");
  for (std::size_t id : picked) {
    const Tensor x = read_pnm(layout.attacks() / "clean" / (image_name(id) + ".ppm"));
    const std::size_t clean_class = predict(clf, x).label;
    if (config.evaluation.heatmaps) {
      write_pnm(grad_cam(clf, x, clean_class), layout.reports() / "heatmaps" / (image_name(id) + "_clean.pgm"));
    }
    for (const auto& r : records) {
      if (r.rec.image_id != id) continue;
      const Tensor z = read_pnm(layout.attacks() / r.mode / r.rec.method / (image_name(id) + ".ppm"));
      const std::string stem = r.mode + "_" + r.rec.method + "_" + image_name(id);
      if (config.evaluation.diff_maps) {
        const DiffMap map = abs_diff_map(z, x);
        write_pnm(map.values, map.channels, map.height, map.width, layout.reports() / "diff_maps" / (stem + ".ppm"));
      }
      if (config.evaluation.heatmaps) {
        write_pnm(grad_cam(clf, z, clean_class), layout.reports() / "heatmaps" / (stem + ".pgm"));
      }
    }
  }
}

std::vector<EvalRecord> evaluate(const ExperimentConfig& config) {
  const Layout layout{config.out};
  const Classifier clf = require_checkpoint(layout);
  std::vector<EvalRecord> records = evaluate_records(config, clf);

  std::string per_image = "mode,method,image_id,psnr,ssim,success,iterations,deviation_pixel_ratio\n";
  for (const auto& [mode, r] : records) {
    per_image += mode + "," + r.method + "," + std::to_string(r.image_id) + "," + format_double(r.psnr) + "," +
                 format_double(r.ssim) + "," + (r.success ? "1" : "0") + "," + std::to_string(r.iterations) + "," +
                 format_double(r.deviation_ratio) + "\n";
  }
  write_text(layout.reports() / "per_image.csv", per_image);

  std::string agg =
      "mode,method,label,attempted,succeeded,success_rate,psnr_mean,psnr_std,ssim_mean,ssim_std,iterations_mean,"
      "deviation_ratio_mean,inf_excluded\n";
  for (const char* mode : {"non-targeted", "targeted"}) {
    std::vector<ImageRecord> subset;
    std::vector<std::string> methods;
    for (const auto& r : records) {
      if (r.mode != mode) continue;
      subset.push_back(r.rec);
      if (std::find(methods.begin(), methods.end(), r.rec.method) == methods.end()) methods.push_back(r.rec.method);
    }
    if (subset.empty()) continue;
    for (const MethodSummary& s : aggregate(subset, in_table_order(methods))) {
      agg += std::string(mode) + "," + s.method + "," + method_label(s.method) + "," + std::to_string(s.attempted) +
             "," + std::to_string(s.succeeded) + "," + format_double(s.success_rate) + "," +
             format_double(s.psnr_mean) + "," + format_double(s.psnr_std) + "," + format_double(s.ssim_mean) + "," +
             format_double(s.ssim_std) + "," + format_double(s.iterations_mean) + "," + format_double(s.ratio_mean) +
             "," + std::to_string(s.inf_excluded) + "\n";
      char line[200];
      std::snprintf(line, sizeof line, "evaluate %-12s %-8s success %.2f  PSNR %.2f +- %.2f  SSIM %.4f +- %.4f", mode,
                    method_label(s.method).c_str(), s.success_rate, s.psnr_mean, s.psnr_std, s.ssim_mean, s.ssim_std);
      log(line);
    }
  }
  write_text(layout.reports() / "aggregate.csv", agg);
  if (config.evaluation.diff_maps || config.evaluation.heatmaps) write_artifacts(config, clf, records);
  return records;
}

// Verdicts for the orderings the method is expected to reproduce.
std::string summarize(const std::vector<EvalRecord>& records) {
  std::map<std::string, std::map<std::string, std::map<std::size_t, ImageRecord>>> by;  // mode -> method -> id
  for (const auto& r : records) by[r.mode][r.rec.method][r.rec.image_id] = r.rec;
  std::ostringstream out;
  char buf[320];
  auto verdict = [&](bool ok, const std::string& claim, const std::string& detail) {
    out << (ok ? "PASS " : "FAIL ") << claim << ": " << detail << "\n";
  };
  auto skip = [&](const std::string& claim) { out << "SKIP " << claim << ": methods not run\n"; };

  auto& nt = by["non-targeted"];
  auto mean_over = [](const std::map<std::size_t, ImageRecord>& recs, const std::vector<std::size_t>& ids,
                      double ImageRecord::*field) {
    double s = 0.0;
    for (std::size_t id : ids) s += recs.at(id).*field;
    return ids.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(ids.size());
  };
  auto successes = [](const std::map<std::size_t, ImageRecord>& recs) {
    std::vector<std::size_t> ids;
    for (const auto& [id, r] : recs) {
      if (r.success && std::isfinite(r.psnr)) ids.push_back(id);
    }
    return ids;
  };

  std::vector<std::string> baselines;
  for (const auto& m : table_order()) {
    if (is_baseline(m) && nt.count(m)) baselines.push_back(m);
  }
  const std::string quality = "MND PSNR and SSIM above every baseline on the common successful subset";
  const std::string ratio_claim = "MND deviation-pixel ratio below every baseline on the common successful subset";
  if (nt.count("mnd") && !baselines.empty()) {
    std::vector<std::size_t> common;
    for (const auto& [id, r] : nt["mnd"]) {
      bool all = r.success;
      for (const auto& b : baselines) all = all && nt[b].at(id).success;
      if (all) common.push_back(id);
    }
    bool ok = !common.empty();
    std::string detail = std::to_string(common.size()) + " images;";
    const double mp = mean_over(nt["mnd"], common, &ImageRecord::psnr);
    const double ms = mean_over(nt["mnd"], common, &ImageRecord::ssim);
    std::snprintf(buf, sizeof buf, " MND %.2f dB / %.4f;", mp, ms);
    detail += buf;
    for (const auto& b : baselines) {
      const double bp = mean_over(nt[b], common, &ImageRecord::psnr);
      const double bs = mean_over(nt[b], common, &ImageRecord::ssim);
      ok = ok && mp > bp && ms > bs;
      std::snprintf(buf, sizeof buf, " %s %.2f dB / %.4f;", method_label(b).c_str(), bp, bs);
      detail += buf;
    }
    verdict(ok, quality, detail);

    const double mr = mean_over(nt["mnd"], common, &ImageRecord::deviation_ratio);
    std::snprintf(buf, sizeof buf, "MND %.4f;", mr);
    detail = buf;
    ok = true;
    for (const auto& b : baselines) {
      const double br = mean_over(nt[b], common, &ImageRecord::deviation_ratio);
      ok = ok && mr < br;
      std::snprintf(buf, sizeof buf, " %s %.4f;", method_label(b).c_str(), br);
      detail += buf;
    }
    verdict(ok && !common.empty(), ratio_claim, detail);
  } else {
    skip(quality);
    skip(ratio_claim);
  }

  // Ablation chains over each row's successful attacks.
  const std::vector<std::vector<std::string>> chains{{"mnd", "l1ssim", "l1", "nonorm"}, {"mnd", "ssim", "nonorm"}};
  for (const auto& chain : chains) {
    std::string names;
    for (const auto& m : chain) names += (names.empty() ? "" : " >= ") + method_label(m);
    const bool present = std::all_of(chain.begin(), chain.end(), [&](const std::string& m) { return nt.count(m); });
    for (int metric = 0; metric < 2; ++metric) {
      const std::string claim = std::string(metric == 0 ? "PSNR" : "SSIM") + " ordering " + names;
      if (!present) {
        skip(claim);
        continue;
      }
      double ImageRecord::*field = metric == 0 ? &ImageRecord::psnr : &ImageRecord::ssim;
      const double tie = metric == 0 ? 0.05 : 0.0;  // ties are allowed in dB only
      std::vector<double> means;
      std::string detail;
      for (const auto& m : chain) {
        means.push_back(mean_over(nt[m], successes(nt[m]), field));
        std::snprintf(buf, sizeof buf, "%s%s %.4f", detail.empty() ? "" : "; ", method_label(m).c_str(),
                      means.back());
        detail += buf;
      }
      bool ok = true;
      for (std::size_t i = 0; i + 1 < means.size(); ++i) ok = ok && means[i] >= means[i + 1] - tie;
      for (std::size_t i = 1; i < means.size(); ++i) ok = ok && means[0] > means[i];
      verdict(ok, claim, detail);
    }
  }

  const std::string harder = "targeted MND needs at least as many iterations and keeps no higher PSNR";
  auto& tg = by["targeted"];
  if (nt.count("mnd") && tg.count("mnd")) {
    auto iters = [](const std::map<std::size_t, ImageRecord>& recs) {
      double s = 0.0;
      for (const auto& [id, r] : recs) s += static_cast<double>(r.iterations);
      return s / static_cast<double>(recs.size());
    };
    const double it_nt = iters(nt["mnd"]), it_t = iters(tg["mnd"]);
    const double p_nt = mean_over(nt["mnd"], successes(nt["mnd"]), &ImageRecord::psnr);
    const double p_t = mean_over(tg["mnd"], successes(tg["mnd"]), &ImageRecord::psnr);
    std::snprintf(buf, sizeof buf, "iterations %.1f vs %.1f; PSNR %.2f vs %.2f dB", it_t, it_nt, p_t, p_nt);
    verdict(it_t >= it_nt && p_t <= p_nt, harder, buf);
  } else {
    skip(harder);
  }
  return out.str();
}

template <class F>
void stage(const std::string& name, F&& f) {
  try {
    f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

void cmd_evaluate(const ExperimentConfig& config) {
  config.validate();
  evaluate(config);
}

void cmd_reproduce(const ExperimentConfig& config) {
  stage("config", [&] { config.validate(); });
  const Layout layout{config.out};
  stage("config", [&] { write_text(layout.root / "config.json", config_to_json(config)); });
  const auto t0 = std::chrono::steady_clock::now();
  stage("gen-data", [&] { cmd_gen_data(config); });
  stage("train", [&] { cmd_train(config); });
  stage("attack", [&] { cmd_attack(config); });
  std::vector<EvalRecord> records;
  stage("evaluate", [&] { records = evaluate(config); });
  stage("summary", [&] {
    const std::string text = summarize(records);
    write_text(layout.reports() / "summary.txt", text);
    std::cerr << text;
  });
  char line[80];
  std::snprintf(line, sizeof line, "reproduce: finished in %.1fs", seconds_since(t0));
  log(line);
}

}  // namespace mnd
