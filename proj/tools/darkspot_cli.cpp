// Command-line driver for the dark-spot segmentation pipeline.
//
//   darkspot <stage> --config run.cfg --run-dir runs/a [--seed N] [--workers N]
//   darkspot run ...       all stages in order
//   darkspot config        print the effective configuration

#include "darkspot/config.hpp"
#include "darkspot/pipeline.hpp"
#include "darkspot/raster.hpp"
#include "darkspot/util.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>

#include <iostream>
#include <optional>

namespace {

struct Options {
  std::string config_path;
  std::string run_dir = "run";
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

darkspot::RunOptions make_run_options(const Options& o) {
  darkspot::RunOptions run;
  run.run_dir = o.run_dir;
  if (!o.config_path.empty()) run.config = darkspot::load_config(o.config_path);
  if (o.seed) run.config.seed = *o.seed;
  if (o.workers) {
    darkspot::set_config_value(run.config, "workers", std::to_string(*o.workers));
  }
  darkspot::validate_config(run.config);
  run.log = &std::cerr;
  return run;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dark-spot segmentation of SAR-like intensity rasters with superpixel graphs and a deep GCN"};
  app.require_subcommand(1);
  Options opts;
  auto add_common = [&opts](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "Pipeline configuration file (key = value lines)");
    cmd->add_option("--run-dir", opts.run_dir, "Run directory")->capture_default_str();
    cmd->add_option("--seed", opts.seed, "Override the configured seed");
    cmd->add_option("--workers", opts.workers, "Worker threads for per-tile stages");
  };

  std::vector<std::pair<CLI::App*, darkspot::Stage>> stage_cmds;
  const std::pair<darkspot::Stage, const char*> descriptions[] = {
      {darkspot::Stage::kSynth, "Generate the synthetic dataset (or register an external one)"},
      {darkspot::Stage::kPreprocess, "Lee-filter and tile the scenes"},
      {darkspot::Stage::kSegment, "Superpixel segmentation and region graphs"},
      {darkspot::Stage::kFeatures, "Per-superpixel features and the training normalizer"},
      {darkspot::Stage::kSelect, "SVM-RFE ranking, F1 curve and feature subset"},
      {darkspot::Stage::kTrain, "Train the graph network"},
      {darkspot::Stage::kPredict, "Predict dark-spot masks for every tile"},
      {darkspot::Stage::kEval, "Evaluate the test split against truth and the Otsu baseline"},
  };
  for (const auto& [stage, text] : descriptions) {
    CLI::App* cmd = app.add_subcommand(std::string(darkspot::stage_name(stage)), text);
    add_common(cmd);
    stage_cmds.emplace_back(cmd, stage);
  }
  CLI::App* run_cmd = app.add_subcommand("run", "Run every stage in order, reusing cached outputs");
  add_common(run_cmd);
  CLI::App* config_cmd = app.add_subcommand("config", "Print the effective configuration");
  add_common(config_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const darkspot::RunOptions run = make_run_options(opts);
    if (config_cmd->parsed()) {
      std::cout << darkspot::config_text(run.config);
      return 0;
    }
    bool evaluated = false;
    if (run_cmd->parsed()) {
      darkspot::run_pipeline(run);
      evaluated = true;
    }
    for (const auto& [cmd, stage] : stage_cmds) {
      if (!cmd->parsed()) continue;
      darkspot::run_stage(stage, run);
      evaluated = stage == darkspot::Stage::kEval;
    }
    if (evaluated) std::cout << darkspot::read_text_file(run.run_dir / "eval" / "report.txt");
    return 0;
  } catch (const darkspot::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
