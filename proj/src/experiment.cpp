#include "colorbridge/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "colorbridge/rng.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> kSchema = {
      {"experiment.name", "reference", "run-tree name under experiment.out"},
      {"experiment.out", "runs", "output root"},
      {"data.seed", "2024", "seed of the synthetic splits"},
      {"data.n_train", "2000", "training samples"},
      {"data.n_val", "500", "validation samples"},
      {"data.n_test", "500", "test samples"},
      {"data.target", "target-a", "target-a | target-a-prime | target-b"},
      {"data.policy", "uones", "uncertain-label policy, one value or one per observation"},
      {"source.seed", "0", "seed of the source pretraining run"},
      {"source.steps", "600", "source pretraining steps"},
      {"source.max_lr", "0.05", "peak learning rate of source pretraining"},
      {"model.colorizer", "pixelshuffle", "deconv | pixelshuffle | coloru"},
      {"train.strategy", "color-module", "baseline | baseline-all | color-module | all | last-layer"},
      {"train.steps", "400", "optimizer steps per run"},
      {"train.batch_size", "32", "samples per step"},
      {"train.checkpoint_every", "200", "steps between validation checkpoints"},
      {"train.max_lr", "0.05", "one-cycle peak learning rate, or 'auto' for the range test"},
      {"train.momentum", "0.9", "SGD momentum"},
      {"train.weight_decay", "1e-4", "SGD weight decay"},
      {"train.pct_start", "0.3", "fraction of steps spent warming up"},
      {"train.div", "25", "initial lr = max_lr / div"},
      {"train.final_div", "1e4", "final lr = max_lr / final_div"},
      {"train.augment", "true", "random rotation / zoom"},
      {"train.rotation", "10", "rotation range in degrees"},
      {"train.zoom", "0.1", "maximum zoom-in fraction"},
      {"train.apply_prob", "0.75", "probability of each augmentation"},
      {"grid.seeds", "0,1,2", "run seeds"},
      {"grid.fractions", "1.0", "training-set fractions"},
      {"transfer.experiment", "", "experiment providing {T,E} for last-layer (default: this one)"},
      {"transfer.strategy", "all", "strategy whose fraction-1 run provides {T,E}"},
      {"lr_find.lr_min", "1e-4", "range test start"},
      {"lr_find.lr_max", "1", "range test end"},
      {"lr_find.steps", "60", "range test length"},
      {"export.count", "8", "test samples exported by export-colorized"},
      {"report.alpha", "0.05", "significance level after Benjamini-Hochberg"},
      {"report.pairing", "mean", "paired t-test on per-seed 'mean' AUCs or 'per-class' AUCs"},
  };
  return kSchema;
}

namespace {

const ConfigKey* find_key(const std::string& key) {
  for (const auto& k : config_schema()) {
    if (key == k.name) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const Config& c, const std::string& key) {
  const std::string& v = c.get(key);
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw UsageError(key, "expected a number, got '" + v + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw UsageError(key, "expected a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw UsageError(key, "integer out of range: '" + v + "'");
  }
}

std::uint64_t to_uint(const Config& c, const std::string& key) { return to_uint(key, c.get(key)); }

bool to_bool(const Config& c, const std::string& key) {
  const std::string& v = c.get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError(key, "expected true or false, got '" + v + "'");
}

template <typename Fn>
auto with_field(const std::string& key, Fn fn) {
  try {
    return fn();
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(key, e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

data::NormalizationStats norm_of(const Checkpoint& ckpt) {
  const Tensor* n = ckpt.find("meta.norm");
  if (!n || n->numel() != 2) throw CheckpointError("meta.norm", "missing normalization statistics");
  return {double((*n)[0]), double((*n)[1])};
}

Checkpoint load_dependency(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) {
    throw DependencyError("missing " + what + " (" + path.string() + ")");
  }
  return load_checkpoint(path);
}

void write_predictions(const train::Predictions& p, const fs::path& path) {
  std::ostringstream out;
  const std::size_t k = p.scores.empty() ? 0 : p.scores.front().size();
  out << "id";
  for (std::size_t j = 0; j < k; ++j) out << ",score_" << j;
  for (std::size_t j = 0; j < k; ++j) out << ",label_" << j;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    out << p.ids[i];
    for (double s : p.scores[i]) {
      std::snprintf(buf, sizeof buf, ",%.9g", s);
      out << buf;
    }
    for (auto l : p.labels[i]) out << "," << data::label_char(l);
    out << "\n";
  }
  write_text(path, out.str());
}

json auc_json(const stats::ObservationAucs& a) {
  json per = json::array();
  for (double v : a.result.per_observation) per.push_back(nan_to_null(v));
  return {{"mean_auc", nan_to_null(a.result.mean_auc)}, {"per_observation", per},
          {"errors", a.errors}};
}

train::TrainConfig base_train_config(const Config& c) {
  train::TrainConfig t;
  t.steps = to_uint(c, "train.steps");
  t.batch_size = to_uint(c, "train.batch_size");
  t.checkpoint_every = to_uint(c, "train.checkpoint_every");
  t.sgd.momentum = to_double(c, "train.momentum");
  t.sgd.weight_decay = to_double(c, "train.weight_decay");
  t.schedule.pct_start = to_double(c, "train.pct_start");
  t.schedule.div = to_double(c, "train.div");
  t.schedule.final_div = to_double(c, "train.final_div");
  t.augment = to_bool(c, "train.augment");
  t.augmentation.rotation_deg = to_double(c, "train.rotation");
  t.augmentation.zoom = to_double(c, "train.zoom");
  t.augmentation.apply_prob = to_double(c, "train.apply_prob");
  return t;
}

}  // namespace

Config::Config() {
  for (const auto& k : config_schema()) values_[k.name] = k.default_value;
}

Config Config::parse(const std::string& text, const std::string& origin) {
  Config c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw UsageError(where, "expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!find_key(key)) throw UsageError(key, "unknown key (" + where + ")");
    c.values_[key] = trim(line.substr(eq + 1));
  }
  return c;
}

Config Config::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("--config", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void Config::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw UsageError(key, "unknown key");
  values_[key] = value;
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError(key, "unknown key");
  return it->second;
}

std::string Config::explain() const {
  std::ostringstream out;
  for (const auto& k : config_schema()) out << k.name << " = " << values_.at(k.name) << "\n";
  return out.str();
}

std::string fraction_label(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", fraction);
  return buf;
}

fs::path ExperimentConfig::cell_dir(train::Strategy s, double fraction, std::uint64_t seed) const {
  return root() / std::string(train::to_string(s)) / fraction_label(fraction) / std::to_string(seed);
}

ExperimentConfig resolve(const Config& c) {
  ExperimentConfig e;
  e.name = c.get("experiment.name");
  if (e.name.empty() || e.name.find('/') != std::string::npos) {
    throw UsageError("experiment.name", "must be a non-empty name without '/'");
  }
  e.out = c.get("experiment.out");
  if (e.out.empty()) throw UsageError("experiment.out", "must not be empty");
  e.data_seed = to_uint(c, "data.seed");
  e.n_train = to_uint(c, "data.n_train");
  e.n_val = to_uint(c, "data.n_val");
  e.n_test = to_uint(c, "data.n_test");
  for (const char* key : {"data.n_train", "data.n_val", "data.n_test"}) {
    if (to_uint(c, key) < 2) throw UsageError(key, "needs at least 2 samples");
  }
  e.target = with_field("data.target", [&] { return data::parse_domain(c.get("data.target")); });
  if (e.target == data::Domain::kSourceRGB) {
    throw UsageError("data.target", "the target task must be a grayscale domain");
  }
  const auto n_obs = data::SyntheticTaskSpec::reference(e.target).n_observations;
  const auto policies = split_list(c.get("data.policy"));
  if (policies.size() != 1 && policies.size() != n_obs) {
    throw UsageError("data.policy", "give one policy or one per observation (" +
                                        std::to_string(n_obs) + ")");
  }
  for (std::size_t k = 0; k < n_obs; ++k) {
    e.policy.push_back(with_field("data.policy", [&] {
      return data::parse_policy(policies[policies.size() == 1 ? 0 : k]);
    }));
  }

  e.colorizer = with_field("model.colorizer",
                           [&] { return parse_colorizer_kind(c.get("model.colorizer")); });
  e.strategy = with_field("train.strategy", [&] { return train::parse_strategy(c.get("train.strategy")); });

  e.train = base_train_config(c);
  e.train.policy = e.policy;
  if (c.get("train.max_lr") == "auto") {
    e.train.auto_lr.emplace();
  } else {
    e.train.schedule.max_lr = to_double(c, "train.max_lr");
  }
  e.sweep.lr_min = to_double(c, "lr_find.lr_min");
  e.sweep.lr_max = to_double(c, "lr_find.lr_max");
  e.sweep.n_steps = to_uint(c, "lr_find.steps");
  with_field("lr_find", [&] { e.sweep.validate(); return 0; });
  if (e.train.auto_lr) e.train.auto_lr = e.sweep;
  with_field("train", [&] { e.train.validate(); return 0; });

  e.source = base_train_config(c);
  e.source.seed = to_uint(c, "source.seed");
  e.source.steps = to_uint(c, "source.steps");
  e.source.schedule.max_lr = to_double(c, "source.max_lr");
  e.source.policy.clear();
  with_field("source", [&] { e.source.validate(); return 0; });

  for (const auto& s : split_list(c.get("grid.seeds"))) e.seeds.push_back(to_uint("grid.seeds", s));
  if (e.seeds.empty()) throw UsageError("grid.seeds", "needs at least one seed");
  for (const auto& f : split_list(c.get("grid.fractions"))) {
    double v = 0;
    try {
      v = std::stod(f);
    } catch (const std::exception&) {
      throw UsageError("grid.fractions", "expected numbers, got '" + f + "'");
    }
    if (!(v > 0.0 && v <= 1.0)) throw UsageError("grid.fractions", "fractions must be in (0, 1]");
    e.fractions.push_back(v);
  }
  if (e.fractions.empty()) throw UsageError("grid.fractions", "needs at least one fraction");

  e.transfer_experiment = c.get("transfer.experiment");
  if (e.transfer_experiment.empty()) e.transfer_experiment = e.name;
  e.transfer_strategy = with_field("transfer.strategy",
                                   [&] { return train::parse_strategy(c.get("transfer.strategy")); });
  e.export_count = to_uint(c, "export.count");
  e.alpha = to_double(c, "report.alpha");
  if (!(e.alpha > 0.0 && e.alpha < 1.0)) throw UsageError("report.alpha", "must be in (0, 1)");
  const std::string pairing = c.get("report.pairing");
  if (pairing != "mean" && pairing != "per-class") {
    throw UsageError("report.pairing", "expected 'mean' or 'per-class'");
  }
  e.per_class_pairing = pairing == "per-class";
  return e;
}

data::Splits target_splits(const ExperimentConfig& cfg) {
  return data::generate_splits(data::SyntheticTaskSpec::reference(cfg.target), cfg.data_seed,
                               cfg.n_train, cfg.n_val, cfg.n_test);
}

data::Splits source_splits(const ExperimentConfig& cfg) {
  return data::generate_splits(data::SyntheticTaskSpec::reference(data::Domain::kSourceRGB),
                               cfg.data_seed, cfg.n_train, cfg.n_val, cfg.n_test);
}

train::TrainRun cmd_pretrain_source(const ExperimentConfig& cfg, std::ostream& log) {
  const auto splits = source_splits(cfg);
  const fs::path dir = cfg.source_dir();
  auto run = train::pretrain_source({&splits.train, &splits.val}, EncoderConfig::desk_scale(),
                                    cfg.source, dir);
  run.best.write(dir / "encoder.clrb");
  nn::Rng rng(0);
  auto model = model_from_checkpoint(run.best, rng);
  const auto preds = train::predict(*model, splits.test, run.norm);
  const auto aucs = train::evaluate(preds);
  const double acc = train::accuracy(preds);
  json summary = {{"test", auc_json(aucs)},
                  {"test_accuracy", acc},
                  {"selected_step", run.checkpoints.at(run.selected).step},
                  {"max_lr", run.max_lr}};
  write_json(dir / "summary.json", summary);
  log << "pretrain-source: test mean AUC " << aucs.result.mean_auc << ", accuracy " << acc << "\n";
  return run;
}

std::vector<train::TrainRun> cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  const std::string strategy_name(train::to_string(cfg.strategy));
  const fs::path encoder_path = cfg.source_dir() / "encoder.clrb";
  const Checkpoint encoder = load_dependency(
      encoder_path, "pretrained encoder: run pretrain-source for experiment '" + cfg.name + "' first");
  const auto splits = target_splits(cfg);
  std::vector<train::TrainRun> runs;
  for (double fraction : cfg.fractions) {
    for (auto seed : cfg.seeds) {
      train::StrategyConfig sc;
      sc.strategy = cfg.strategy;
      sc.colorizer = cfg.colorizer;
      sc.init.encoder = encoder;
      if (cfg.strategy == train::Strategy::kAll) {
        sc.init.color_module = load_dependency(
            cfg.cell_dir(train::Strategy::kColorModule, fraction, seed) / "best.clrb",
            "color-module checkpoint: run train --strategy color-module first");
      }
      if (cfg.strategy == train::Strategy::kLastLayer) {
        ExperimentConfig src = cfg;
        src.name = cfg.transfer_experiment;
        sc.init.transfer = load_dependency(
            src.cell_dir(cfg.transfer_strategy, 1.0, seed) / "best.clrb",
            "transfer source: run train --strategy " + std::string(train::to_string(cfg.transfer_strategy)) +
                " in experiment '" + cfg.transfer_experiment + "' first");
      }
      const data::Dataset subset = data::subsample(splits.train, fraction, seed);
      train::TrainConfig tc = cfg.train;
      tc.seed = seed;
      const fs::path dir = cfg.cell_dir(fraction, seed);
      auto run = train::run_strategy(sc, {&subset, &splits.val}, tc, dir);

      nn::Rng rng(0);
      auto model = model_from_checkpoint(run.best, rng);
      const auto preds = train::predict(*model, splits.test, run.norm);
      const auto aucs = train::evaluate(preds);
      write_predictions(preds, dir / "predictions.csv");
      json result = auc_json(aucs);
      result["strategy"] = strategy_name;
      result["fraction"] = fraction;
      result["seed"] = seed;
      result["n_train"] = subset.size();
      result["selected_step"] = run.checkpoints.at(run.selected).step;
      result["max_lr"] = run.max_lr;
      result["initial_loss"] = run.initial_loss;
      result["final_smoothed_loss"] = run.final_smoothed_loss;
      write_json(dir / "result.json", result);
      log << "train " << strategy_name << " fraction " << fraction_label(fraction) << " seed " << seed
          << ": test mean AUC " << aucs.result.mean_auc << "\n";
      runs.push_back(std::move(run));
    }
  }
  return runs;
}

stats::ObservationAucs cmd_eval(const ExperimentConfig& cfg, const fs::path& checkpoint,
                                const std::optional<fs::path>& dataset_dir, const fs::path& out_dir,
                                std::ostream& log) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const ModelDescriptor desc = ckpt.descriptor();
  data::Dataset test = dataset_dir ? data::import_dataset(*dataset_dir) : target_splits(cfg).test;
  if (test.empty()) throw Error("eval: dataset is empty");
  for (const auto& s : test) {
    if (s.image.dim(0) != desc.input_channels() || s.labels.size() != desc.n_outputs) {
      throw Error("eval: schema mismatch: sample " + s.id + " has " + std::to_string(s.image.dim(0)) +
                  " channel(s) and " + std::to_string(s.labels.size()) + " labels; model expects " +
                  std::to_string(desc.input_channels()) + " and " + std::to_string(desc.n_outputs));
    }
  }
  nn::Rng rng(0);
  auto model = model_from_checkpoint(ckpt, rng);
  const auto preds = train::predict(*model, test, norm_of(ckpt));
  const auto aucs = train::evaluate(preds);
  write_predictions(preds, out_dir / "predictions.csv");
  write_json(out_dir / "auc.json", auc_json(aucs));
  for (const auto& e : aucs.errors) log << "eval: " << e << "\n";
  log << "eval: mean AUC " << aucs.result.mean_auc << "\n";
  return aucs;
}

train::LrFindResult cmd_lr_find(const ExperimentConfig& cfg, const fs::path& out_dir,
                                std::ostream& log) {
  ExperimentConfig single = cfg;
  single.fractions = {cfg.fractions.front()};
  single.seeds = {cfg.seeds.front()};
  const Checkpoint encoder = load_dependency(cfg.source_dir() / "encoder.clrb",
                                             "pretrained encoder: run pretrain-source first");
  train::StrategyConfig sc;
  sc.strategy = cfg.strategy;
  sc.colorizer = cfg.colorizer;
  sc.init.encoder = encoder;
  const auto seed = single.seeds.front();
  const double fraction = single.fractions.front();
  if (cfg.strategy == train::Strategy::kAll) {
    sc.init.color_module = load_dependency(
        cfg.cell_dir(train::Strategy::kColorModule, fraction, seed) / "best.clrb",
        "color-module checkpoint: run train --strategy color-module first");
  }
  if (cfg.strategy == train::Strategy::kLastLayer) {
    ExperimentConfig src = cfg;
    src.name = cfg.transfer_experiment;
    sc.init.transfer = load_dependency(src.cell_dir(cfg.transfer_strategy, 1.0, seed) / "best.clrb",
                                       "transfer source checkpoint");
  }
  const auto splits = target_splits(cfg);
  const data::Dataset subset = data::subsample(splits.train, fraction, seed);
  ModelDescriptor base;
  base.n_outputs = subset.front().labels.size();
  nn::Rng rng(derive_seed({seed, 0xC0, std::uint64_t(cfg.strategy)}));
  auto model = train::build_strategy_model(sc, base, rng);
  train::TrainConfig tc = cfg.train;
  tc.seed = seed;
  const auto r = train::lr_find(*model, {&subset, &splits.val}, tc, cfg.sweep);
  std::ostringstream csv;
  csv << "lr,loss,smoothed\n";
  char buf[96];
  for (std::size_t i = 0; i < r.lrs.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", r.lrs[i], r.losses[i], r.smoothed[i]);
    csv << buf;
  }
  write_text(out_dir / "lr_find.csv", csv.str());
  write_json(out_dir / "lr_find.json", {{"best_lr", r.best_lr}, {"max_lr", r.max_lr}});
  log << "lr-find: minimum smoothed loss at lr " << r.best_lr << ", max_lr " << r.max_lr << "\n";
  return r;
}

Image8 to_rgb8(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw ShapeError("to_rgb8: expected [3,H,W]");
  const std::size_t h = chw.dim(1), w = chw.dim(2);
  const auto [lo_it, hi_it] = std::minmax_element(chw.data().begin(), chw.data().end());
  const double lo = *lo_it, range = double(*hi_it) - lo;
  Image8 img{w, h, 3, std::vector<std::uint8_t>(w * h * 3, 0)};
  if (!(range > 0.0) || !std::isfinite(range)) return img;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double v = (double(chw[(c * h + y) * w + x]) - lo) / range;
        img.pixels[(y * w + x) * 3 + c] = std::uint8_t(std::lround(v * 255.0));
      }
  return img;
}

std::vector<fs::path> cmd_export_colorized(const ExperimentConfig& cfg, const fs::path& checkpoint,
                                           const fs::path& out_dir) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  if (!ckpt.descriptor().has_colorizer()) {
    throw Error("export-colorized: checkpoint has no colorization module (baseline model)");
  }
  nn::Rng rng(0);
  auto model = model_from_checkpoint(ckpt, rng);
  model->set_training(false);
  Colorizer* colorizer = model->colorizer();
  const auto norm = norm_of(ckpt);
  const auto test = target_splits(cfg).test;
  std::vector<fs::path> written;
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < std::min(cfg.export_count, test.size()); ++i) {
    const auto& s = test[i];
    const Tensor batch = train::make_batch(test, {i}, norm);
    const Variable rgb = colorize(*colorizer, Variable::constant(batch));
    const std::size_t h = s.image.dim(1), w = s.image.dim(2);
    const Image8 color = to_rgb8(rgb.value().reshaped({3, h, w}));
    const fs::path color_path = out_dir / (s.id + "_color.png");
    write_png(color_path, color);
    Image8 pair{2 * w, h, 3, std::vector<std::uint8_t>(2 * w * h * 3)};
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double g = std::clamp(double(s.image[y * w + x]), 0.0, 1.0);
        const auto gray = std::uint8_t(std::lround(g * 255.0));
        for (std::size_t c = 0; c < 3; ++c) {
          pair.pixels[(y * 2 * w + x) * 3 + c] = gray;
          pair.pixels[(y * 2 * w + w + x) * 3 + c] = color.pixels[(y * w + x) * 3 + c];
        }
      }
    const fs::path pair_path = out_dir / (s.id + "_pair.png");
    write_png(pair_path, pair);
    written.push_back(color_path);
    written.push_back(pair_path);
  }
  return written;
}

Report cmd_report(const std::vector<fs::path>& roots, double alpha, bool per_class_pairing,
                  const fs::path& out_dir) {
  if (roots.empty()) throw Error("report: no run directories given");
  std::map<std::pair<std::string, double>, ConditionSummary> by_condition;
  for (const auto& root : roots) {
    if (!fs::is_directory(root)) throw Error("report: not a directory: " + root.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (e.is_regular_file() && e.path().filename() == "result.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const json j = read_json(f);
      std::string name = j.at("strategy").get<std::string>();
      if (roots.size() > 1) name = root.filename().string() + "/" + name;
      const double fraction = j.at("fraction").get<double>();
      const auto seed = j.at("seed").get<std::uint64_t>();
      auto& cond = by_condition[{name, fraction}];
      cond.strategy = name;
      cond.fraction = fraction;
      if (j.at("mean_auc").is_null()) throw Error("report: " + f.string() + " has no mean AUC");
      if (cond.mean_auc.count(seed)) throw Error("report: duplicate seed in " + f.string());
      cond.mean_auc[seed] = j.at("mean_auc").get<double>();
      std::vector<double> per;
      for (const auto& v : j.at("per_observation")) per.push_back(v.is_null() ? NAN : v.get<double>());
      cond.per_class_auc[seed] = per;
    }
  }
  if (by_condition.empty()) throw Error("report: no result.json files found");

  Report report;
  for (auto& [key, cond] : by_condition) {
    std::vector<double> values;
    for (const auto& [seed, v] : cond.mean_auc) values.push_back(v);
    if (values.size() < 2) {
      throw Error("report: condition " + cond.strategy + " @ " + fraction_label(cond.fraction) +
                  " needs at least 2 runs");
    }
    cond.aggregate = stats::aggregate_runs(values);
    report.conditions.push_back(cond);
  }
  std::vector<double> raw_p;
  for (std::size_t i = 0; i < report.conditions.size(); ++i) {
    for (std::size_t j = i + 1; j < report.conditions.size(); ++j) {
      const auto& a = report.conditions[i];
      const auto& b = report.conditions[j];
      if (a.fraction != b.fraction) continue;
      std::set<std::uint64_t> sa, sb;
      for (const auto& [s, v] : a.mean_auc) sa.insert(s);
      for (const auto& [s, v] : b.mean_auc) sb.insert(s);
      if (sa != sb) {
        throw Error("report: unmatched seeds between " + a.strategy + " and " + b.strategy +
                    " at fraction " + fraction_label(a.fraction));
      }
      std::vector<double> va, vb;
      for (auto s : sa) {
        if (per_class_pairing) {
          const auto& pa = a.per_class_auc.at(s);
          const auto& pb = b.per_class_auc.at(s);
          for (std::size_t k = 0; k < std::min(pa.size(), pb.size()); ++k) {
            if (std::isfinite(pa[k]) && std::isfinite(pb[k])) {
              va.push_back(pa[k]);
              vb.push_back(pb[k]);
            }
          }
        } else {
          va.push_back(a.mean_auc.at(s));
          vb.push_back(b.mean_auc.at(s));
        }
      }
      Comparison c;
      c.a = a.strategy;
      c.b = b.strategy;
      c.fraction = a.fraction;
      c.test = stats::paired_t_test(va, vb);
      raw_p.push_back(c.test.p_two_sided);
      report.comparisons.push_back(c);
    }
  }
  if (!raw_p.empty()) {
    const auto bh = stats::benjamini_hochberg(raw_p, alpha);
    for (std::size_t i = 0; i < raw_p.size(); ++i) {
      report.comparisons[i].adjusted_p = bh.adjusted_p[i];
      report.comparisons[i].significant = bh.reject[i];
    }
  }
  for (const auto& a : report.conditions) {
    if (a.strategy != "color-module") continue;
    for (const auto& b : report.conditions) {
      if (b.strategy == "baseline" && b.fraction == a.fraction) {
        report.gap[a.fraction] = a.aggregate.mean - b.aggregate.mean;
      }
    }
  }

  std::ostringstream csv;
  csv << "section,condition,fraction,n,mean_auc,std_auc,formatted,other,t,dof,p,adjusted_p,significant\n";
  char buf[256];
  json jc = json::array(), jp = json::array(), jg = json::array();
  for (const auto& c : report.conditions) {
    std::snprintf(buf, sizeof buf, "condition,%s,%s,%zu,%.6f,%.6f,%s,,,,,,\n", c.strategy.c_str(),
                  fraction_label(c.fraction).c_str(), c.aggregate.values.size(), c.aggregate.mean,
                  c.aggregate.std, stats::format_mean_std(c.aggregate).c_str());
    csv << buf;
    jc.push_back({{"strategy", c.strategy},
                  {"fraction", c.fraction},
                  {"seeds", c.mean_auc.size()},
                  {"mean_auc", c.aggregate.mean},
                  {"std_auc", c.aggregate.std},
                  {"formatted", stats::format_mean_std(c.aggregate)}});
  }
  for (const auto& c : report.comparisons) {
    std::snprintf(buf, sizeof buf, "comparison,%s,%s,,,,,%s,%.6f,%d,%.6g,%.6g,%d\n", c.a.c_str(),
                  fraction_label(c.fraction).c_str(), c.b.c_str(), c.test.t, c.test.dof,
                  c.test.p_two_sided, c.adjusted_p, int(c.significant));
    csv << buf;
    jp.push_back({{"a", c.a},
                  {"b", c.b},
                  {"fraction", c.fraction},
                  {"t", nan_to_null(c.test.t)},
                  {"dof", c.test.dof},
                  {"p", c.test.p_two_sided},
                  {"adjusted_p", c.adjusted_p},
                  {"significant", c.significant}});
  }
  for (const auto& [f, g] : report.gap) {
    std::snprintf(buf, sizeof buf, "gap,color-module-minus-baseline,%s,,%.6f,,,,,,,,\n",
                  fraction_label(f).c_str(), g);
    csv << buf;
    jg.push_back({{"fraction", f}, {"gap", g}});
  }
  write_text(out_dir / "report.csv", csv.str());
  write_json(out_dir / "report.json",
             {{"alpha", alpha},
              {"pairing", per_class_pairing ? "per-class" : "mean"},
              {"conditions", jc},
              {"comparisons", jp},
              {"gap", jg}});
  return report;
}

}  // namespace colorbridge::experiment
