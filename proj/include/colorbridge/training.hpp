#pragma once

#include "colorbridge/abi.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "colorbridge/checkpoint.hpp"
#include "colorbridge/data.hpp"
#include "colorbridge/stats.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI::train {

/// Masked multi-label binary cross-entropy on logits [N,K].
Variable bce_multilabel_loss(const Variable& logits, const Tensor& targets, const Tensor& mask);

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
  void validate() const;
};

/// v <- mu v + g + lambda theta;  theta <- theta - lr v.
/// Only variables that are trainable at step time are touched.
class Sgd {
 public:
  Sgd(std::vector<Variable> params, SgdConfig cfg);
  /// Throws NumericError if any gradient is not finite; nothing is updated then.
  void step(double lr);
  void zero_grad();
  const std::vector<Tensor>& velocity() const { return velocity_; }

 private:
  std::vector<Variable> params_;
  std::vector<Tensor> velocity_;
  SgdConfig cfg_;
};

struct OneCycleConfig {
  double max_lr = 0.1;
  std::size_t total_steps = 1000;
  double pct_start = 0.3;
  double div = 25.0;
  double final_div = 1e4;
  void validate() const;
};

/// Linear warm-up from max_lr/div to max_lr over pct_start of the steps,
/// then cosine annealing to max_lr/final_div at total_steps.
double one_cycle_lr(const OneCycleConfig& cfg, std::size_t step);

struct LrFindConfig {
  double lr_min = 1e-4;
  double lr_max = 1.0;
  std::size_t n_steps = 60;
  double beta = 0.98;
  double divergence_factor = 4.0;
  void validate() const;
};

struct LrFindResult {
  std::vector<double> lrs;
  std::vector<double> losses;
  std::vector<double> smoothed;
  double best_lr = 0.0;  // lr at the minimum smoothed loss
  double max_lr = 0.0;   // best_lr / 10, clamped to [lr_min, lr_max]
};

/// Bias-corrected exponential moving average of a loss sequence:
/// a_t = beta a_{t-1} + (1 - beta) l_t,  s_t = a_t / (1 - beta^t).
std::vector<double> smooth_losses(const std::vector<double>& losses, double beta);

/// Sweeps lr geometrically from lr_min to lr_max; `step(lr)` performs one
/// optimization step at lr and returns its loss. Stops early once the
/// smoothed loss exceeds divergence_factor x the best seen.
LrFindResult lr_find(const std::function<double(double lr)>& step, const LrFindConfig& cfg);

struct AugmentConfig {
  double rotation_deg = 10.0;
  double zoom = 0.10;
  double apply_prob = 0.75;
  std::size_t out_height = 32;
  std::size_t out_width = 32;
  void validate() const;
};

/// Centered square crop rescaled to the target size, with random rotation
/// in [-rotation_deg, rotation_deg] and zoom-in in [0, zoom], each applied
/// with apply_prob. Bilinear sampling, zero outside the source. image is
/// [C,H,W].
Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937_64& rng);

enum class Strategy { kBaseline, kBaselineAll, kColorModule, kAll, kLastLayer };
std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

/// Pretrained parameters a strategy starts from.
struct StrategyInit {
  std::optional<Checkpoint> encoder;       // theta^I_E (source pretraining)
  std::optional<Checkpoint> color_module;  // theta^M_T (a Color Module run)
  std::optional<Checkpoint> transfer;      // {T, E} source for Last Layer
};

struct StrategyConfig {
  Strategy strategy = Strategy::kColorModule;
  ColorizerKind colorizer = ColorizerKind::kPixelShuffle;
  ColorizerConfig colorizer_cfg = ColorizerConfig::desk_scale();
  StrategyInit init;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t steps = 400;
  std::size_t batch_size = 32;
  std::size_t checkpoint_every = 200;
  SgdConfig sgd;
  OneCycleConfig schedule;  // total_steps is overwritten by `steps`
  bool augment = true;
  AugmentConfig augmentation;
  std::vector<data::UncertainPolicy> policy;  // empty: UOnes for every observation
  std::size_t eval_batch = 100;
  // When set, fit() runs the range test first and trains with its max_lr.
  std::optional<LrFindConfig> auto_lr;
  void validate() const;
};

struct MetricRow {
  std::size_t step;
  double lr;
  double loss;
  std::string split;  // "train" or "val"
};

struct CheckpointRecord {
  std::size_t step;
  double val_mean_auc;
};

struct TrainRun {
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::size_t checkpoint_every = 0;
  std::vector<CheckpointRecord> checkpoints;
  std::size_t selected = 0;  // index into checkpoints
  std::vector<MetricRow> metrics;
  double initial_loss = 0.0;         // first training loss
  double final_smoothed_loss = 0.0;  // bias-corrected EMA at the last step
  double max_lr = 0.0;               // peak learning rate actually used
  Checkpoint best;                   // all components at the selected step
  data::NormalizationStats norm;
};

struct Datasets {
  const data::Dataset* train = nullptr;
  const data::Dataset* val = nullptr;
};

/// Writes metrics.csv (step,lr,loss,split) and checkpoints.csv.
void write_metrics(const TrainRun& run, const std::filesystem::path& dir);

/// Builds the strategy's model: front end, initialization and trainable set.
/// Throws on illegal (strategy, init) combinations.
std::unique_ptr<ComposedModel> build_strategy_model(const StrategyConfig& cfg,
                                                    const ModelDescriptor& base, nn::Rng& rng);

/// Trains `model` (its trainable set is already configured) and selects the
/// checkpoint with the highest validation mean AUC. Checkpoints are written
/// under out_dir when given.
TrainRun fit(ComposedModel& model, const Datasets& data, const TrainConfig& cfg,
             const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Strategy model construction followed by fit().
TrainRun run_strategy(const StrategyConfig& strategy, const Datasets& data, const TrainConfig& cfg,
                      const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// theta^I_E: encoder and head trained from scratch on the RGB source task.
TrainRun pretrain_source(const Datasets& data, const EncoderConfig& encoder,
                         const TrainConfig& cfg,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Assembles a normalized [N,C,H,W] batch from the given sample indices.
Tensor make_batch(const data::Dataset& ds, const std::vector<std::size_t>& idx,
                  const data::NormalizationStats& norm);

struct Predictions {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> scores;  // sigmoid outputs [N][K]
  std::vector<std::vector<data::LabelState>> labels;
};

/// Evaluation-mode inference. The model's training flags are restored.
Predictions predict(ComposedModel& model, const data::Dataset& ds,
                    const data::NormalizationStats& norm, std::size_t batch = 100);

/// AUC per observation with Uncertain entries excluded.
stats::ObservationAucs evaluate(const Predictions& p);
/// Fraction of labeled (non-Uncertain) entries classified correctly at 0.5.
double accuracy(const Predictions& p);

/// lr_find on the model's trainable parameters with the run's data
/// pipeline. The model is restored to its initial state afterwards.
LrFindResult lr_find(ComposedModel& model, const Datasets& data, const TrainConfig& cfg,
                     const LrFindConfig& sweep);

}  // namespace colorbridge::train
