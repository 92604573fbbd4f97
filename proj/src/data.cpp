#include "colorbridge/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "colorbridge/png.hpp"
#include "colorbridge/rng.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI::data {

std::string_view to_string(Domain d) {
  switch (d) {
    case Domain::kSourceRGB: return "source-rgb";
    case Domain::kTargetA: return "target-a";
    case Domain::kTargetAPrime: return "target-a-prime";
    case Domain::kTargetB: return "target-b";
  }
  return "?";
}

Domain parse_domain(std::string_view name) {
  for (auto d : {Domain::kSourceRGB, Domain::kTargetA, Domain::kTargetAPrime, Domain::kTargetB}) {
    if (name == to_string(d)) return d;
  }
  throw Error("unknown domain '" + std::string(name) + "'");
}

std::string_view to_string(UncertainPolicy p) {
  switch (p) {
    case UncertainPolicy::kUOnes: return "uones";
    case UncertainPolicy::kUZeros: return "uzeros";
    case UncertainPolicy::kUIgnore: return "uignore";
  }
  return "?";
}

UncertainPolicy parse_policy(std::string_view name) {
  if (name == "uones" || name == "u-ones") return UncertainPolicy::kUOnes;
  if (name == "uzeros" || name == "u-zeros") return UncertainPolicy::kUZeros;
  if (name == "uignore" || name == "u-ignore") return UncertainPolicy::kUIgnore;
  throw Error("unknown uncertain-label policy '" + std::string(name) + "'");
}

char label_char(LabelState s) {
  switch (s) {
    case LabelState::kPositive: return '1';
    case LabelState::kNegative: return '0';
    case LabelState::kUncertain: return 'U';
  }
  return '?';
}

LabelState parse_label(std::string_view s) {
  if (s == "1") return LabelState::kPositive;
  if (s == "0") return LabelState::kNegative;
  if (s == "U" || s == "u") return LabelState::kUncertain;
  throw Error("invalid label '" + std::string(s) + "' (expected 1, 0 or U)");
}

SyntheticTaskSpec SyntheticTaskSpec::reference(Domain domain) {
  SyntheticTaskSpec s;
  s.domain = domain;
  s.image_size = 32;
  s.n_observations = 4;
  s.families = {PatternFamily::kHorizontalBand, PatternFamily::kDisk, PatternFamily::kGridTexture,
                PatternFamily::kCornerGradient};
  s.positive_rate = {0.35, 0.30, 0.40, 0.30};
  s.uncertain_rate = {0.10, 0.05, 0.10, 0.05};
  s.intensity = {0.35, 0.55, 0.75, 0.95};
  s.decoy_rate = 0.6;
  s.background = 0.10;
  s.noise = 0.05;
  switch (domain) {
    case Domain::kSourceRGB:
      s.uncertain_rate = {0.0, 0.0, 0.0, 0.0};
      break;
    case Domain::kTargetA:
      break;
    case Domain::kTargetAPrime:
      // Same anatomy, different acquisition: recalibrated bands, more noise.
      s.intensity = {0.38, 0.56, 0.74, 0.92};
      s.background = 0.12;
      s.noise = 0.07;
      break;
    case Domain::kTargetB:
      s.families = {PatternFamily::kRing, PatternFamily::kCross, PatternFamily::kDiagonalStripes,
                    PatternFamily::kDotLattice};
      s.random_intensity = true;
      s.decoy_rate = 0.0;
      s.background = 0.25;
      s.noise = 0.03;
      break;
  }
  return s;
}

void SyntheticTaskSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error("invalid task spec: " + m); };
  if (image_size < 16) fail("image_size must be at least 16");
  if (n_observations == 0) fail("n_observations must be positive");
  if (families.size() != n_observations || positive_rate.size() != n_observations ||
      uncertain_rate.size() != n_observations) {
    fail("per-observation vectors must have n_observations entries");
  }
  if (intensity.size() < n_observations) fail("intensity needs one band per observation");
  for (std::size_t k = 0; k < n_observations; ++k) {
    if (positive_rate[k] < 0 || uncertain_rate[k] < 0 || positive_rate[k] + uncertain_rate[k] > 1) {
      fail("label rates of observation " + std::to_string(k) + " are not a distribution");
    }
  }
  if (n_observations > 4 && domain == Domain::kSourceRGB) fail("source task supports 4 hues");
}

namespace {

using Rng = std::mt19937_64;

constexpr std::uint64_t kLabelStream = 0x4C;
constexpr double kHues[4][3] = {
    {0.95, 0.20, 0.15},  // red
    {0.20, 0.85, 0.25},  // green
    {0.20, 0.30, 0.95},  // blue
    {0.90, 0.80, 0.10},  // yellow
};

// Binary (or ramped) coverage mask of one pattern instance.
std::vector<double> draw_mask(PatternFamily family, std::size_t size, Rng& rng) {
  const long n = long(size);
  std::vector<double> m(size * size, 0.0);
  auto set = [&](long y, long x, double v) {
    if (y >= 0 && y < n && x >= 0 && x < n) m[std::size_t(y * n + x)] = v;
  };
  switch (family) {
    case PatternFamily::kHorizontalBand: {
      const long h = 4 + long(uniform_index(rng, 3));
      const long y0 = 2 + long(uniform_index(rng, std::size_t(n - h - 3)));
      const long len = n / 2 + long(uniform_index(rng, std::size_t(n / 2)));
      const long x0 = long(uniform_index(rng, std::size_t(n - len + 1)));
      for (long y = y0; y < y0 + h; ++y)
        for (long x = x0; x < x0 + len; ++x) set(y, x, 1.0);
      break;
    }
    case PatternFamily::kDisk: {
      const double r = uniform(rng, 4.0, 6.5);
      const double cy = uniform(rng, 7.0, double(n) - 7.0), cx = uniform(rng, 7.0, double(n) - 7.0);
      for (long y = 0; y < n; ++y)
        for (long x = 0; x < n; ++x)
          if (std::hypot(y + 0.5 - cy, x + 0.5 - cx) <= r) set(y, x, 1.0);
      break;
    }
    case PatternFamily::kGridTexture: {
      const long side = 12;
      const long y0 = long(uniform_index(rng, std::size_t(n - side + 1)));
      const long x0 = long(uniform_index(rng, std::size_t(n - side + 1)));
      for (long y = 0; y < side; ++y)
        for (long x = 0; x < side; ++x)
          if (y % 3 == 0 || x % 3 == 0) set(y0 + y, x0 + x, 1.0);
      break;
    }
    case PatternFamily::kCornerGradient: {
      const std::size_t corner = uniform_index(rng, 4);
      const long reach = 12 + long(uniform_index(rng, 4));
      for (long y = 0; y < n; ++y)
        for (long x = 0; x < n; ++x) {
          const long dy = (corner & 1) ? n - 1 - y : y;
          const long dx = (corner & 2) ? n - 1 - x : x;
          const long d = dy + dx;
          if (d < reach) set(y, x, 1.0 - 0.4 * double(d) / double(reach));
        }
      break;
    }
    case PatternFamily::kRing: {
      const double r = uniform(rng, 5.0, 7.0);
      const double cy = uniform(rng, 8.0, double(n) - 8.0), cx = uniform(rng, 8.0, double(n) - 8.0);
      for (long y = 0; y < n; ++y)
        for (long x = 0; x < n; ++x) {
          const double d = std::hypot(y + 0.5 - cy, x + 0.5 - cx);
          if (d <= r && d >= r - 2.0) set(y, x, 1.0);
        }
      break;
    }
    case PatternFamily::kCross: {
      const long arm = 5 + long(uniform_index(rng, 3));
      const long cy = arm + long(uniform_index(rng, std::size_t(n - 2 * arm - 1)));
      const long cx = arm + long(uniform_index(rng, std::size_t(n - 2 * arm - 1)));
      for (long t = -arm; t <= arm; ++t)
        for (long w = 0; w < 2; ++w) {
          set(cy + w, cx + t, 1.0);
          set(cy + t, cx + w, 1.0);
        }
      break;
    }
    case PatternFamily::kDiagonalStripes: {
      const long side = 12;
      const long y0 = long(uniform_index(rng, std::size_t(n - side + 1)));
      const long x0 = long(uniform_index(rng, std::size_t(n - side + 1)));
      for (long y = 0; y < side; ++y)
        for (long x = 0; x < side; ++x)
          if ((x + y) % 4 == 0) set(y0 + y, x0 + x, 1.0);
      break;
    }
    case PatternFamily::kDotLattice: {
      const long side = 14;
      const long y0 = long(uniform_index(rng, std::size_t(n - side + 1)));
      const long x0 = long(uniform_index(rng, std::size_t(n - side + 1)));
      for (long y = 0; y < side; y += 5)
        for (long x = 0; x < side; x += 5)
          for (long a = 0; a < 2; ++a)
            for (long b = 0; b < 2; ++b) set(y0 + y + a, x0 + x + b, 1.0);
      break;
    }
  }
  return m;
}

std::vector<LabelState> draw_labels(const SyntheticTaskSpec& spec, Rng& rng) {
  std::vector<LabelState> labels(spec.n_observations);
  for (std::size_t k = 0; k < spec.n_observations; ++k) {
    const double u = uniform01(rng);
    if (u < spec.positive_rate[k]) labels[k] = LabelState::kPositive;
    else if (u < spec.positive_rate[k] + spec.uncertain_rate[k]) labels[k] = LabelState::kUncertain;
    else labels[k] = LabelState::kNegative;
  }
  return labels;
}

Rng sample_rng(const SyntheticTaskSpec& spec, std::uint64_t seed, std::size_t index) {
  return Rng(derive_seed({seed, std::uint64_t(spec.domain), kLabelStream, index}));
}

void paint(Tensor& img, const std::vector<double>& mask, const double* color, std::size_t channels) {
  const std::size_t plane = img.dim(1) * img.dim(2);
  for (std::size_t i = 0; i < plane; ++i) {
    const double a = mask[i];
    if (a <= 0.0) continue;
    for (std::size_t c = 0; c < channels; ++c) {
      Scalar& p = img[c * plane + i];
      p = Scalar(a * color[c] + (1.0 - a) * double(p));
    }
  }
}

std::string sample_id(Domain d, std::size_t index) {
  static constexpr const char* kPrefix[] = {"src", "a", "ap", "b"};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%06zu", kPrefix[std::size_t(d)], index);
  return buf;
}

}  // namespace

LabeledSample generate_sample(const SyntheticTaskSpec& spec, std::uint64_t seed, std::size_t index) {
  Rng rng = sample_rng(spec, seed, index);
  LabeledSample s;
  s.id = sample_id(spec.domain, index);
  s.domain = spec.domain;
  s.labels = draw_labels(spec, rng);

  const std::size_t size = spec.image_size, channels = spec.channels();
  const std::size_t plane = size * size;
  s.image = Tensor({channels, size, size});
  for (std::size_t i = 0; i < plane; ++i) {
    const double v = spec.background + spec.noise * standard_normal(rng);
    for (std::size_t c = 0; c < channels; ++c) s.image[c * plane + i] = Scalar(v);
  }

  const bool rgb = channels == 3;
  const std::size_t k_count = spec.n_observations;
  for (std::size_t k = 0; k < k_count; ++k) {
    const LabelState state = s.labels[k];
    std::size_t appearance = k;  // band / hue index
    double contrast = 1.0;
    if (state == LabelState::kNegative) {
      if (uniform01(rng) >= spec.decoy_rate) continue;
      appearance = (k + 1 + uniform_index(rng, k_count - 1)) % k_count;
    } else if (state == LabelState::kUncertain) {
      contrast = spec.uncertain_contrast;
    }
    if (spec.random_intensity) appearance = uniform_index(rng, spec.intensity.size());
    const auto mask = draw_mask(spec.families[k], size, rng);
    double color[3];
    if (rgb) {
      const double brightness = uniform(rng, 0.7, 1.0);
      for (int c = 0; c < 3; ++c) {
        const double full = kHues[appearance % 4][c] * brightness;
        color[c] = spec.background + contrast * (full - spec.background);
      }
    } else {
      const double band = spec.intensity[appearance] + uniform(rng, -0.03, 0.03);
      color[0] = spec.background + contrast * (band - spec.background);
    }
    paint(s.image, mask, color, channels);
  }
  for (auto& v : s.image.data()) v = std::clamp(v, Scalar{0}, Scalar{1});
  return s;
}

Dataset generate_dataset(const SyntheticTaskSpec& spec, std::uint64_t seed, std::size_t n) {
  spec.validate();
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(spec, seed, i));
  return out;
}

std::vector<std::vector<LabelState>> generate_labels(const SyntheticTaskSpec& spec,
                                                     std::uint64_t seed, std::size_t n) {
  spec.validate();
  std::vector<std::vector<LabelState>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = sample_rng(spec, seed, i);
    out.push_back(draw_labels(spec, rng));
  }
  return out;
}

Splits generate_splits(const SyntheticTaskSpec& spec, std::uint64_t seed, std::size_t n_train,
                       std::size_t n_val, std::size_t n_test) {
  Splits s;
  s.train = generate_dataset(spec, derive_seed({seed, 1}), n_train);
  s.val = generate_dataset(spec, derive_seed({seed, 2}), n_val);
  s.test = generate_dataset(spec, derive_seed({seed, 3}), n_test);
  auto rename = [](Dataset& d, const char* split) {
    for (auto& x : d) x.id = std::string(split) + "-" + x.id;
  };
  rename(s.train, "train");
  rename(s.val, "val");
  rename(s.test, "test");
  return s;
}

PolicyTargets apply_policy(const std::vector<LabelState>& labels,
                           const std::vector<UncertainPolicy>& policy) {
  if (labels.size() != policy.size()) {
    throw Error("apply_policy: " + std::to_string(labels.size()) + " labels but " +
                std::to_string(policy.size()) + " policies");
  }
  PolicyTargets out{std::vector<float>(labels.size(), 0.f), std::vector<float>(labels.size(), 1.f)};
  for (std::size_t k = 0; k < labels.size(); ++k) {
    switch (labels[k]) {
      case LabelState::kPositive: out.targets[k] = 1.f; break;
      case LabelState::kNegative: out.targets[k] = 0.f; break;
      case LabelState::kUncertain:
        switch (policy[k]) {
          case UncertainPolicy::kUOnes: out.targets[k] = 1.f; break;
          case UncertainPolicy::kUZeros: out.targets[k] = 0.f; break;
          case UncertainPolicy::kUIgnore: out.mask[k] = 0.f; break;
        }
        break;
    }
  }
  return out;
}

PolicyTargets evaluation_targets(const std::vector<LabelState>& labels) {
  return apply_policy(labels, std::vector<UncertainPolicy>(labels.size(), UncertainPolicy::kUIgnore));
}

std::vector<std::size_t> subsample_indices(const std::vector<std::vector<LabelState>>& labels,
                                           double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error("subsample: fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  const std::size_t n = labels.size();
  const auto m = std::size_t(std::llround(fraction * double(n)));
  if (m == 0) {
    throw Error("subsample: fraction " + std::to_string(fraction) + " of " + std::to_string(n) +
                " samples yields an empty dataset");
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (m == n) return all;
  const std::size_t k_count = labels.front().size();

  // Strata are joint label vectors.
  std::map<std::vector<LabelState>, std::vector<std::size_t>> by_key;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i].size() != k_count) throw Error("subsample: ragged label vectors");
    by_key[labels[i]].push_back(i);
  }
  struct Stratum {
    std::vector<LabelState> key;
    std::vector<std::size_t> members;
    std::size_t quota = 0;
  };
  std::vector<Stratum> strata;
  for (auto& [key, members] : by_key) strata.push_back({key, std::move(members), 0});

  // Largest-remainder allocation of m across strata.
  std::size_t assigned = 0;
  std::vector<std::pair<double, std::size_t>> remainders;
  for (std::size_t j = 0; j < strata.size(); ++j) {
    const double exact = fraction * double(strata[j].members.size());
    strata[j].quota = std::size_t(std::floor(exact));
    assigned += strata[j].quota;
    remainders.push_back({exact - std::floor(exact), j});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < m && i < remainders.size(); ++i, ++assigned) {
    ++strata[remainders[i].second].quota;
  }

  // Marginal deviations dev[k][state] = selected - fraction * full.
  std::vector<std::array<double, 3>> dev(k_count, {0.0, 0.0, 0.0});
  for (const auto& s : strata) {
    for (std::size_t k = 0; k < k_count; ++k) {
      dev[k][std::size_t(s.key[k])] +=
          double(s.quota) - fraction * double(s.members.size());
    }
  }
  // Local search: move one unit of quota between strata while the sum of
  // squared marginal deviations decreases.
  for (std::size_t iter = 0; iter < 100000; ++iter) {
    double best_delta = -1e-12;
    std::size_t best_from = 0, best_to = 0;
    bool found = false;
    for (std::size_t a = 0; a < strata.size(); ++a) {
      if (strata[a].quota == 0) continue;
      for (std::size_t b = 0; b < strata.size(); ++b) {
        if (a == b || strata[b].quota >= strata[b].members.size()) continue;
        double delta = 0.0;
        for (std::size_t k = 0; k < k_count; ++k) {
          const auto sa = std::size_t(strata[a].key[k]), sb = std::size_t(strata[b].key[k]);
          if (sa == sb) continue;
          delta += 2.0 * (dev[k][sb] - dev[k][sa]) + 2.0;
        }
        if (delta < best_delta) {
          best_delta = delta;
          best_from = a;
          best_to = b;
          found = true;
        }
      }
    }
    if (!found) break;
    --strata[best_from].quota;
    ++strata[best_to].quota;
    for (std::size_t k = 0; k < k_count; ++k) {
      dev[k][std::size_t(strata[best_from].key[k])] -= 1.0;
      dev[k][std::size_t(strata[best_to].key[k])] += 1.0;
    }
  }

  Rng rng(derive_seed({seed, 0x5B}));
  std::vector<std::size_t> chosen;
  chosen.reserve(m);
  for (auto& s : strata) {
    shuffle(s.members.begin(), s.members.end(), rng);
    chosen.insert(chosen.end(), s.members.begin(), s.members.begin() + long(s.quota));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

Dataset subsample(const Dataset& dataset, double fraction, std::uint64_t seed) {
  std::vector<std::vector<LabelState>> labels;
  labels.reserve(dataset.size());
  for (const auto& s : dataset) labels.push_back(s.labels);
  if (labels.empty()) throw Error("subsample: empty dataset");
  Dataset out;
  for (auto i : subsample_indices(labels, fraction, seed)) out.push_back(dataset[i]);
  return out;
}

NormalizationStats compute_norm_stats(const Dataset& split) {
  if (split.empty()) throw Error("compute_norm_stats: empty split");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : split) {
    for (auto v : s.image.data()) sum += v;
    count += s.image.numel();
  }
  const double mean = sum / double(count);
  double ss = 0.0;
  for (const auto& s : split) {
    for (auto v : s.image.data()) ss += (v - mean) * (v - mean);
  }
  const double std = std::sqrt(ss / double(count));
  if (!(std > 0.0)) throw NumericError("compute_norm_stats: zero-variance split");
  return {mean, std};
}

Tensor normalize(const Tensor& image, const NormalizationStats& stats) {
  Tensor out(image.shape());
  for (std::size_t i = 0; i < image.numel(); ++i) {
    out[i] = Scalar((double(image[i]) - stats.mean) / stats.std);
  }
  return out;
}

Tensor denormalize(const Tensor& image, const NormalizationStats& stats) {
  Tensor out(image.shape());
  for (std::size_t i = 0; i < image.numel(); ++i) {
    out[i] = Scalar(double(image[i]) * stats.std + stats.mean);
  }
  return out;
}

void export_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream index(dir / "index.csv", std::ios::trunc);
  if (!index) throw Error("cannot write " + (dir / "index.csv").string());
  const std::size_t k_count = dataset.empty() ? 0 : dataset.front().labels.size();
  index << "id,domain";
  for (std::size_t k = 0; k < k_count; ++k) index << ",obs" << k;
  index << "\n";
  for (const auto& s : dataset) {
    index << s.id << "," << to_string(s.domain);
    for (auto l : s.labels) index << "," << label_char(l);
    index << "\n";
    const std::size_t c = s.image.dim(0), h = s.image.dim(1), w = s.image.dim(2);
    Image8 img{w, h, c, std::vector<std::uint8_t>(w * h * c)};
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double v = std::clamp(double(s.image[(ch * h + y) * w + x]), 0.0, 1.0);
          img.pixels[(y * w + x) * c + ch] = std::uint8_t(std::lround(v * 255.0));
        }
    write_png(dir / "images" / (s.id + ".png"), img);
  }
}

Dataset import_dataset(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.csv");
  if (!index) throw Error("cannot open " + (dir / "index.csv").string());
  std::string line;
  if (!std::getline(index, line)) throw Error("index.csv: missing header");
  std::size_t k_count = std::size_t(std::count(line.begin(), line.end(), ',')) - 1;
  if (line.rfind("id,domain", 0) != 0) throw Error("index.csv: header must start with id,domain");
  Dataset out;
  std::size_t row = 1;
  while (std::getline(index, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != k_count + 2) {
      throw Error("index.csv row " + std::to_string(row) + ": expected " +
                  std::to_string(k_count + 2) + " columns");
    }
    LabeledSample s;
    s.id = cells[0];
    s.domain = parse_domain(cells[1]);
    for (std::size_t k = 0; k < k_count; ++k) s.labels.push_back(parse_label(cells[k + 2]));
    const Image8 img = read_png(dir / "images" / (s.id + ".png"));
    s.image = Tensor({img.channels, img.height, img.width});
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        for (std::size_t ch = 0; ch < img.channels; ++ch) {
          s.image[(ch * img.height + y) * img.width + x] =
              Scalar(img.pixels[(y * img.width + x) * img.channels + ch]) / Scalar(255);
        }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace colorbridge::data
