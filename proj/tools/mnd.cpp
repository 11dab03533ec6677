#include <CLI11.hpp>
#include <iostream>

#include "mnd/errors.hpp"
#include "mnd/experiment.hpp"

namespace {

int fail(const std::string& stage, const std::string& what, int code) {
  std::cerr << "mnd: [" << stage << "] " << what << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial image generation with minimum-noticeable-difference losses"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> methods;
  std::string mode;
  app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Added to every component seed");
  app.add_option("--out", out, "Output directory");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic train and held-out sets");
  auto* train = app.add_subcommand("train", "Train the classifier and write a checkpoint");
  auto* attack = app.add_subcommand("attack", "Attack the held-out images");
  attack->add_option("--methods", methods, "Methods to run (comma separated)")->delimiter(',');
  attack->add_option("--mode", mode, "Restrict to one mode")->check(CLI::IsMember({"targeted", "non-targeted"}));
  auto* evaluate = app.add_subcommand("evaluate", "Score stored adversarial images and write reports");
  auto* reproduce = app.add_subcommand("reproduce", "Run every stage and write reports/summary.txt");

  CLI11_PARSE(app, argc, argv);

  mnd::ExperimentConfig config;
  try {
    if (!config_path.empty()) config = mnd::load_config(config_path);
    if (seed) config.seed = *seed;
    if (out) config.out = *out;
    config.validate();
  } catch (const std::exception& e) {
    return fail("config", e.what(), 2);
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (gen->parsed()) {
      mnd::cmd_gen_data(config);
    } else if (train->parsed()) {
      mnd::cmd_train(config);
    } else if (attack->parsed()) {
      mnd::AttackSelection selection;
      if (mode == "targeted") selection.mode = mnd::AttackMode::kTargeted;
      if (mode == "non-targeted") selection.mode = mnd::AttackMode::kNonTargeted;
      selection.methods = methods;
      mnd::cmd_attack(config, selection);
    } else if (evaluate->parsed()) {
      mnd::cmd_evaluate(config);
    } else if (reproduce->parsed()) {
      mnd::cmd_reproduce(config);
    }
  } catch (const mnd::StageError& e) {
    std::cerr << "mnd: " << e.what() << std::endl;
    return 1;
  } catch (const mnd::UsageError& e) {
    return fail(stage, e.what(), 2);
  } catch (const mnd::ConfigError& e) {
    return fail(stage, e.what(), 2);
  } catch (const std::exception& e) {
    return fail(stage, e.what(), 1);
  }
  return 0;
}
