#pragma once

#include "colorbridge/abi.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "colorbridge/png.hpp"
#include "colorbridge/training.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI::experiment {

/// Invalid configuration or command line. field() names the offending key.
class UsageError : public Error {
 public:
  UsageError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// A prerequisite stage has not been run.
class DependencyError : public Error {
 public:
  using Error::Error;
};

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

/// Every accepted key with its default.
const std::vector<ConfigKey>& config_schema();

/// Line-oriented `section.key = value` settings. '#' starts a comment.
/// Keys outside the schema are rejected; unset keys take their defaults.
class Config {
 public:
  Config();
  static Config parse(const std::string& text, const std::string& origin = "<config>");
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  /// Fully resolved settings, one `key = value` per line in schema order.
  std::string explain() const;

 private:
  std::map<std::string, std::string> values_;
};

struct ExperimentConfig {
  std::string name;
  std::filesystem::path out;
  // data
  std::uint64_t data_seed = 0;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  data::Domain target = data::Domain::kTargetA;
  std::vector<data::UncertainPolicy> policy;
  // source pretraining
  train::TrainConfig source;
  // model and strategy
  ColorizerKind colorizer = ColorizerKind::kPixelShuffle;
  train::Strategy strategy = train::Strategy::kColorModule;
  // target training (seed is set per grid cell)
  train::TrainConfig train;
  std::vector<std::uint64_t> seeds;
  std::vector<double> fractions;
  // last-layer source
  std::string transfer_experiment;
  train::Strategy transfer_strategy = train::Strategy::kAll;
  // lr-find
  train::LrFindConfig sweep;
  // export / report
  std::size_t export_count = 0;
  double alpha = 0.05;
  bool per_class_pairing = false;

  std::filesystem::path root() const { return out / name; }
  std::filesystem::path source_dir() const { return root() / "source"; }
  std::filesystem::path cell_dir(train::Strategy s, double fraction, std::uint64_t seed) const;
  std::filesystem::path cell_dir(double fraction, std::uint64_t seed) const {
    return cell_dir(strategy, fraction, seed);
  }
};

/// Typed view of a Config; throws UsageError naming the first invalid key.
ExperimentConfig resolve(const Config& cfg);

/// "1", "0.25", "0.1": the fraction component of a run directory.
std::string fraction_label(double fraction);

/// Splits of the configured target task (or the source task).
data::Splits target_splits(const ExperimentConfig& cfg);
data::Splits source_splits(const ExperimentConfig& cfg);

/// Writes source/encoder.clrb, metrics and summary.json.
train::TrainRun cmd_pretrain_source(const ExperimentConfig& cfg, std::ostream& log);

/// Runs every (seed, fraction) cell of the configured strategy.
std::vector<train::TrainRun> cmd_train(const ExperimentConfig& cfg, std::ostream& log);

/// Writes predictions.csv and auc.json for `checkpoint` on the test split
/// (or an imported dataset directory) into out_dir.
stats::ObservationAucs cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                                const std::optional<std::filesystem::path>& dataset_dir,
                                const std::filesystem::path& out_dir, std::ostream& log);

/// Range test for the configured strategy at the first seed and fraction.
train::LrFindResult cmd_lr_find(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                std::ostream& log);

/// Colorizer outputs of the first export_count test samples as PNG.
std::vector<std::filesystem::path> cmd_export_colorized(const ExperimentConfig& cfg,
                                                        const std::filesystem::path& checkpoint,
                                                        const std::filesystem::path& out_dir);

/// Per-image min-max scaling of a [3,H,W] tensor to 8-bit RGB. A constant
/// image maps to 0 everywhere.
Image8 to_rgb8(const Tensor& chw);

struct ConditionSummary {
  std::string strategy;
  double fraction = 0.0;
  std::map<std::uint64_t, double> mean_auc;                    // by seed
  std::map<std::uint64_t, std::vector<double>> per_class_auc;  // by seed
  stats::RunAggregate aggregate;
};

struct Comparison {
  std::string a, b;  // strategy names
  double fraction = 0.0;
  stats::PairedTTestResult test;
  double adjusted_p = 1.0;
  bool significant = false;
};

struct Report {
  std::vector<ConditionSummary> conditions;
  std::vector<Comparison> comparisons;
  // fraction -> color-module minus baseline mean AUC
  std::map<double, double> gap;
};

/// Collects result.json files under the given roots (layout
/// <strategy>/<fraction>/<seed>/) and writes report.csv / report.json
/// into out_dir.
Report cmd_report(const std::vector<std::filesystem::path>& roots, double alpha,
                  bool per_class_pairing, const std::filesystem::path& out_dir);

}  // namespace colorbridge::experiment
