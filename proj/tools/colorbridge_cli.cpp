// colorbridge: experiment runner for the synthetic colorization-transfer benchmark.
#include <CLI11.hpp>

#include <iostream>

#include "colorbridge/experiment.hpp"

namespace ex = colorbridge::experiment;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string strategy, colorizer, fraction, seed, out;
  bool explain = false;
  std::string checkpoint, data_dir, dest;
  std::vector<std::string> runs;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "configuration file (section.key = value)");
  cmd->add_option("--strategy", o.strategy, "baseline | baseline-all | color-module | all | last-layer");
  cmd->add_option("--colorizer", o.colorizer, "deconv | pixelshuffle | coloru");
  cmd->add_option("--fraction", o.fraction, "training-set fraction(s), comma separated");
  cmd->add_option("--seed", o.seed, "run seed(s), comma separated");
  cmd->add_option("--out", o.out, "output root (experiment.out)");
  cmd->add_flag("--explain", o.explain, "print the resolved configuration and exit");
}

ex::ExperimentConfig load(const Options& o) {
  ex::Config cfg = o.config.empty() ? ex::Config() : ex::Config::load(o.config);
  if (!o.strategy.empty()) cfg.set("train.strategy", o.strategy);
  if (!o.colorizer.empty()) cfg.set("model.colorizer", o.colorizer);
  if (!o.fraction.empty()) cfg.set("grid.fractions", o.fraction);
  if (!o.seed.empty()) cfg.set("grid.seeds", o.seed);
  if (!o.out.empty()) cfg.set("experiment.out", o.out);
  if (o.explain) std::cout << cfg.explain();
  return ex::resolve(cfg);
}

fs::path require_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) throw ex::UsageError("--checkpoint", "a checkpoint path is required");
  return o.checkpoint;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"colorbridge: gray-to-RGB colorization front ends for transfer learning"};
  app.require_subcommand(1);
  Options o;
  auto* pretrain = app.add_subcommand("pretrain-source", "pretrain the encoder on the RGB source task");
  auto* train = app.add_subcommand("train", "run a strategy over the seed x fraction grid");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  auto* lr_find = app.add_subcommand("lr-find", "learning-rate range test");
  auto* export_cmd = app.add_subcommand("export-colorized", "write colorizer outputs as PNG");
  auto* report = app.add_subcommand("report", "aggregate runs, paired t-tests, BH correction");
  for (auto* cmd : {pretrain, train, eval, lr_find, export_cmd, report}) add_common(cmd, o);
  for (auto* cmd : {eval, export_cmd}) {
    cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file");
    cmd->add_option("--dest", o.dest, "directory for the outputs (default: next to the checkpoint)");
  }
  eval->add_option("--data", o.data_dir, "dataset directory (index.csv + images/) instead of the test split");
  lr_find->add_option("--dest", o.dest, "directory for the outputs");
  report->add_option("--runs", o.runs, "run trees to aggregate (default: the experiment root)");
  report->add_option("--dest", o.dest, "directory for report.csv / report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const ex::ExperimentConfig cfg = load(o);
    if (o.explain) return 0;
    if (pretrain->parsed()) {
      ex::cmd_pretrain_source(cfg, std::cout);
    } else if (train->parsed()) {
      ex::cmd_train(cfg, std::cout);
    } else if (eval->parsed()) {
      const fs::path ckpt = require_checkpoint(o);
      const fs::path dest = o.dest.empty() ? ckpt.parent_path() / "eval" : fs::path(o.dest);
      std::optional<fs::path> data;
      if (!o.data_dir.empty()) data = o.data_dir;
      ex::cmd_eval(cfg, ckpt, data, dest, std::cout);
    } else if (lr_find->parsed()) {
      const fs::path dest = o.dest.empty()
                                ? cfg.root() / std::string(colorbridge::train::to_string(cfg.strategy)) / "lr_find"
                                : fs::path(o.dest);
      ex::cmd_lr_find(cfg, dest, std::cout);
    } else if (export_cmd->parsed()) {
      const fs::path ckpt = require_checkpoint(o);
      const fs::path dest = o.dest.empty() ? ckpt.parent_path() / "colorized" : fs::path(o.dest);
      const auto files = ex::cmd_export_colorized(cfg, ckpt, dest);
      std::cout << "export-colorized: wrote " << files.size() << " files to " << dest.string() << "\n";
    } else if (report->parsed()) {
      std::vector<fs::path> roots(o.runs.begin(), o.runs.end());
      if (roots.empty()) roots.push_back(cfg.root());
      const fs::path dest = o.dest.empty() ? cfg.root() : fs::path(o.dest);
      const auto r = ex::cmd_report(roots, cfg.alpha, cfg.per_class_pairing, dest);
      for (const auto& c : r.conditions) {
        std::cout << c.strategy << " @ " << ex::fraction_label(c.fraction) << ": "
                  << colorbridge::stats::format_mean_std(c.aggregate) << "\n";
      }
      std::cout << "report: wrote " << (dest / "report.csv").string() << "\n";
    }
  } catch (const ex::UsageError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  } catch (const ex::DependencyError& e) {
    std::cerr << "error: dependency: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
