#pragma once

#include "colorbridge/abi.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "colorbridge/tensor.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI::data {

enum class LabelState : std::uint8_t { kNegative, kPositive, kUncertain };
enum class UncertainPolicy : std::uint8_t { kUOnes, kUZeros, kUIgnore };
enum class Domain : std::uint8_t { kSourceRGB, kTargetA, kTargetAPrime, kTargetB };

std::string_view to_string(Domain d);
Domain parse_domain(std::string_view name);
std::string_view to_string(UncertainPolicy p);
UncertainPolicy parse_policy(std::string_view name);
char label_char(LabelState s);  // '1', '0', 'U'
LabelState parse_label(std::string_view s);

enum class PatternFamily : std::uint8_t {
  // shared by the source task and the A / A' targets
  kHorizontalBand,
  kDisk,
  kGridTexture,
  kCornerGradient,
  // disjoint families of the B target
  kRing,
  kCross,
  kDiagonalStripes,
  kDotLattice,
};

struct SyntheticTaskSpec {
  Domain domain = Domain::kTargetA;
  std::size_t image_size = 32;
  std::size_t n_observations = 4;
  std::vector<PatternFamily> families;
  std::vector<double> positive_rate;   // P(Positive) per observation
  std::vector<double> uncertain_rate;  // P(Uncertain) per observation
  // Gray domains: intensity band of each observation's pattern.
  std::vector<double> intensity;
  // B-style domains draw each pattern's intensity from `intensity` at random
  // instead of tying it to the observation.
  bool random_intensity = false;
  // Probability that a negative observation still shows its shape, rendered
  // in another observation's intensity band (or hue, for the source task).
  double decoy_rate = 0.0;
  double background = 0.1;
  double noise = 0.05;
  double uncertain_contrast = 0.4;

  /// Reference benchmark: 32x32, four observations.
  static SyntheticTaskSpec reference(Domain domain);
  std::size_t channels() const { return domain == Domain::kSourceRGB ? 3 : 1; }
  void validate() const;
};

struct LabeledSample {
  std::string id;
  Domain domain = Domain::kTargetA;
  Tensor image;  // [C,H,W], values in [0,1]
  std::vector<LabelState> labels;
};

using Dataset = std::vector<LabeledSample>;

/// Deterministic in (spec, seed). Sample i uses its own sub-generator, so
/// any index can be produced independently.
Dataset generate_dataset(const SyntheticTaskSpec& spec, std::uint64_t seed, std::size_t n);
LabeledSample generate_sample(const SyntheticTaskSpec& spec, std::uint64_t seed, std::size_t index);
/// The label draws of generate_dataset without rendering.
std::vector<std::vector<LabelState>> generate_labels(const SyntheticTaskSpec& spec,
                                                     std::uint64_t seed, std::size_t n);

struct Splits {
  Dataset train, val, test;
};
/// Train/val/test drawn from independent streams of the same task.
Splits generate_splits(const SyntheticTaskSpec& spec, std::uint64_t seed, std::size_t n_train,
                       std::size_t n_val, std::size_t n_test);

struct PolicyTargets {
  std::vector<float> targets;
  std::vector<float> mask;
};

PolicyTargets apply_policy(const std::vector<LabelState>& labels,
                           const std::vector<UncertainPolicy>& policy);

/// Targets for evaluation: Uncertain entries are masked out.
PolicyTargets evaluation_targets(const std::vector<LabelState>& labels);

/// Stratified subset of round(fraction * N) indices (ascending) whose
/// per-observation counts of every label state stay within one of
/// fraction * (full count). fraction == 1 returns every index.
std::vector<std::size_t> subsample_indices(const std::vector<std::vector<LabelState>>& labels,
                                           double fraction, std::uint64_t seed);
Dataset subsample(const Dataset& dataset, double fraction, std::uint64_t seed);

struct NormalizationStats {
  double mean = 0.0;
  double std = 1.0;
};

NormalizationStats compute_norm_stats(const Dataset& split);
Tensor normalize(const Tensor& image, const NormalizationStats& stats);
Tensor denormalize(const Tensor& image, const NormalizationStats& stats);

/// index.csv (id, domain, one column per observation with 1/0/U) plus
/// images/<id>.png (8-bit grayscale, or RGB for 3-channel samples).
void export_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset import_dataset(const std::filesystem::path& dir);

}  // namespace colorbridge::data
