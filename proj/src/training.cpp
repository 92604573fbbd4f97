#include "colorbridge/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "colorbridge/rng.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI::train {

Variable bce_multilabel_loss(const Variable& logits, const Tensor& targets, const Tensor& mask) {
  return ops::bce_with_logits(logits, targets, mask);
}

void SgdConfig::validate() const {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("sgd.momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw Error("sgd.weight_decay must be non-negative");
}

Sgd::Sgd(std::vector<Variable> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params_) velocity_.emplace_back(p.shape());
}

void Sgd::step(double lr) {
  for (const auto& p : params_) {
    if (p.trainable() && !p.grad().all_finite()) throw NumericError("sgd: non-finite gradient");
  }
  const double mu = cfg_.momentum, wd = cfg_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Variable& p = params_[i];
    if (!p.trainable()) continue;
    Scalar* theta = p.mutable_value().ptr();
    const Scalar* g = p.grad().ptr();
    Scalar* v = velocity_[i].ptr();
    for (std::size_t k = 0, n = velocity_[i].numel(); k < n; ++k) {
      v[k] = Scalar(mu * v[k] + g[k] + wd * theta[k]);
      theta[k] = Scalar(theta[k] - lr * v[k]);
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void OneCycleConfig::validate() const {
  if (!(max_lr > 0.0)) throw Error("schedule.max_lr must be positive");
  if (total_steps == 0) throw Error("schedule.total_steps must be positive");
  if (!(pct_start > 0.0 && pct_start < 1.0)) throw Error("schedule.pct_start must be in (0, 1)");
  if (!(div > 1.0)) throw Error("schedule.div must exceed 1");
  if (!(final_div > 1.0)) throw Error("schedule.final_div must exceed 1");
}

double one_cycle_lr(const OneCycleConfig& cfg, std::size_t step) {
  cfg.validate();
  if (step > cfg.total_steps) {
    throw Error("one_cycle_lr: step " + std::to_string(step) + " outside [0, " +
                std::to_string(cfg.total_steps) + "]");
  }
  const double total = double(cfg.total_steps);
  const double peak = cfg.pct_start * total;
  const double start = cfg.max_lr / cfg.div, end = cfg.max_lr / cfg.final_div;
  const double s = double(step);
  if (s <= peak) {
    if (s == peak) return cfg.max_lr;
    return start + (cfg.max_lr - start) * (s / peak);
  }
  if (step == cfg.total_steps) return end;
  const double frac = (s - peak) / (total - peak);
  return end + (cfg.max_lr - end) * 0.5 * (1.0 + std::cos(M_PI * frac));
}

void LrFindConfig::validate() const {
  if (!(lr_min > 0.0 && lr_max > lr_min)) throw Error("lr_find: need 0 < lr_min < lr_max");
  if (n_steps < 2) throw Error("lr_find: need at least 2 steps");
  if (!(beta >= 0.0 && beta < 1.0)) throw Error("lr_find: beta must be in [0, 1)");
}

std::vector<double> smooth_losses(const std::vector<double>& losses, double beta) {
  std::vector<double> out;
  out.reserve(losses.size());
  double avg = 0.0, corr = 1.0;
  for (double l : losses) {
    avg = beta * avg + (1.0 - beta) * l;
    corr *= beta;
    out.push_back(avg / (1.0 - corr));
  }
  return out;
}

LrFindResult lr_find(const std::function<double(double lr)>& step, const LrFindConfig& cfg) {
  cfg.validate();
  LrFindResult r;
  const double ratio = cfg.lr_max / cfg.lr_min;
  double avg = 0.0, corr = 1.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cfg.n_steps; ++i) {
    const double lr = cfg.lr_min * std::pow(ratio, double(i) / double(cfg.n_steps - 1));
    const double loss = step(lr);
    if (!std::isfinite(loss)) {
      if (i == 0) throw NumericError("lr_find: loss diverged at lr_min");
      break;
    }
    avg = cfg.beta * avg + (1.0 - cfg.beta) * loss;
    corr *= cfg.beta;
    const double smoothed = avg / (1.0 - corr);
    r.lrs.push_back(lr);
    r.losses.push_back(loss);
    r.smoothed.push_back(smoothed);
    if (smoothed < best) {
      best = smoothed;
      r.best_lr = lr;
    }
    if (smoothed > cfg.divergence_factor * best) break;
  }
  r.max_lr = std::clamp(r.best_lr / 10.0, cfg.lr_min, cfg.lr_max);
  return r;
}

void AugmentConfig::validate() const {
  if (!(rotation_deg >= 0.0)) throw Error("augment.rotation must be non-negative");
  if (!(zoom >= 0.0 && zoom < 1.0)) throw Error("augment.zoom must be in [0, 1)");
  if (!(apply_prob >= 0.0 && apply_prob <= 1.0)) throw Error("augment.apply_prob must be in [0, 1]");
  if (out_height == 0 || out_width == 0) throw Error("augment: target size must be positive");
}

Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937_64& rng) {
  if (image.rank() != 3) throw ShapeError("augment: expected [C,H,W], got " + colorbridge::to_string(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const bool rotate = uniform01(rng) < cfg.apply_prob;
  const double angle = uniform(rng, -cfg.rotation_deg, cfg.rotation_deg) * M_PI / 180.0;
  const bool zoom = uniform01(rng) < cfg.apply_prob;
  const double scale = 1.0 + uniform(rng, 0.0, cfg.zoom);

  const std::size_t side = std::min(h, w);
  const double oy = double(h - side) / 2.0, ox = double(w - side) / 2.0;
  const double cs = rotate ? std::cos(angle) : 1.0, sn = rotate ? std::sin(angle) : 0.0;
  const double inv_zoom = zoom ? 1.0 / scale : 1.0;
  const std::size_t oh = cfg.out_height, ow = cfg.out_width;

  Tensor out({c, oh, ow});
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      // Output pixel centre in [-1, 1], mapped back into the crop.
      const double u = (double(x) + 0.5) / double(ow) * 2.0 - 1.0;
      const double v = (double(y) + 0.5) / double(oh) * 2.0 - 1.0;
      const double su = (cs * u + sn * v) * inv_zoom;
      const double sv = (-sn * u + cs * v) * inv_zoom;
      const double sx = ox + (su + 1.0) / 2.0 * double(side) - 0.5;
      const double sy = oy + (sv + 1.0) / 2.0 * double(side) - 0.5;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const long x0 = long(fx), y0 = long(fy);
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto px = [&](long yy, long xx) -> double {
          if (yy < 0 || xx < 0 || yy >= long(h) || xx >= long(w)) return 0.0;
          return double(image[(ch * h + std::size_t(yy)) * w + std::size_t(xx)]);
        };
        double val = 0.0;
        if (ax == 0.0 && ay == 0.0) {
          val = px(y0, x0);
        } else {
          val = (1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1)) +
                ay * ((1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1));
        }
        out[(ch * oh + y) * ow + x] = Scalar(val);
      }
    }
  }
  return out;
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kBaseline: return "baseline";
    case Strategy::kBaselineAll: return "baseline-all";
    case Strategy::kColorModule: return "color-module";
    case Strategy::kAll: return "all";
    case Strategy::kLastLayer: return "last-layer";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  for (auto s : {Strategy::kBaseline, Strategy::kBaselineAll, Strategy::kColorModule,
                 Strategy::kAll, Strategy::kLastLayer}) {
    if (name == to_string(s)) return s;
  }
  throw Error("unknown strategy '" + std::string(name) +
              "' (expected baseline, baseline-all, color-module, all or last-layer)");
}

void TrainConfig::validate() const {
  if (steps == 0) throw Error("train.steps must be positive");
  if (batch_size < 2) throw Error("train.batch_size must be at least 2");
  if (checkpoint_every == 0) throw Error("train.checkpoint_every must be positive");
  if (eval_batch == 0) throw Error("train.eval_batch must be positive");
  sgd.validate();
  OneCycleConfig s = schedule;
  s.total_steps = steps;
  s.validate();
  augmentation.validate();
}

namespace {

using data::Dataset;
using data::NormalizationStats;

Tensor vec(std::vector<Scalar> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

void attach_norm(Checkpoint& ckpt, const NormalizationStats& norm) {
  ckpt.set("meta.norm", vec({Scalar(norm.mean), Scalar(norm.std)}));
}

std::vector<data::UncertainPolicy> resolve_policy(const TrainConfig& cfg, std::size_t k) {
  if (cfg.policy.empty()) return std::vector<data::UncertainPolicy>(k, data::UncertainPolicy::kUOnes);
  if (cfg.policy.size() != k) {
    throw Error("train.policy has " + std::to_string(cfg.policy.size()) + " entries for " +
                std::to_string(k) + " observations");
  }
  return cfg.policy;
}

struct TargetBatch {
  Tensor targets, mask;
};

TargetBatch make_targets(const Dataset& ds, const std::vector<std::size_t>& idx,
                         const std::vector<data::UncertainPolicy>& policy) {
  const std::size_t k = policy.size();
  TargetBatch b{Tensor({idx.size(), k}), Tensor({idx.size(), k})};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto pt = data::apply_policy(ds[idx[i]].labels, policy);
    for (std::size_t j = 0; j < k; ++j) {
      b.targets[i * k + j] = Scalar(pt.targets[j]);
      b.mask[i * k + j] = Scalar(pt.mask[j]);
    }
  }
  return b;
}

/// Training batch stream: a fresh permutation per epoch, the last partial
/// batch dropped whenever at least one full batch exists.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::size_t batch, std::uint64_t seed)
      : n_(n), batch_(std::min(batch, n)), seed_(seed) {
    if (n < 2) throw Error("training split needs at least 2 samples");
    reshuffle();
  }
  std::vector<std::size_t> next() {
    if (pos_ + batch_ > n_) {
      ++epoch_;
      reshuffle();
    }
    std::vector<std::size_t> out(order_.begin() + long(pos_), order_.begin() + long(pos_ + batch_));
    pos_ += batch_;
    return out;
  }
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed({seed_, epoch_, 0xB7}));
    shuffle(order_.begin(), order_.end(), rng);
    pos_ = 0;
  }
  std::size_t n_, batch_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0, pos_ = 0;
  std::vector<std::size_t> order_;
};

Tensor make_train_batch(const Dataset& ds, const std::vector<std::size_t>& idx,
                        const NormalizationStats& norm, const TrainConfig& cfg, std::size_t epoch) {
  if (!cfg.augment) return make_batch(ds, idx, norm);
  const Tensor& first = ds[idx[0]].image;
  AugmentConfig aug = cfg.augmentation;
  aug.out_height = first.dim(1);
  aug.out_width = first.dim(2);
  const std::size_t per = first.numel();
  Tensor out({idx.size(), first.dim(0), first.dim(1), first.dim(2)});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::mt19937_64 rng(derive_seed({cfg.seed, epoch, idx[i], 0xA6}));
    const Tensor a = augment(ds[idx[i]].image, aug, rng);
    for (std::size_t j = 0; j < per; ++j) {
      out[i * per + j] = Scalar((double(a[j]) - norm.mean) / norm.std);
    }
  }
  return out;
}

double train_step(ComposedModel& model, Sgd& opt, const Tensor& batch, const TargetBatch& t,
                  double lr) {
  opt.zero_grad();
  Tape tape;
  Variable loss;
  {
    TapeScope scope(tape);
    Variable logits = model.forward(Variable::constant(batch));
    loss = bce_multilabel_loss(logits, t.targets, t.mask);
  }
  const double value = double(loss.value().item());
  if (!std::isfinite(value)) throw NumericError("training loss is not finite");
  tape.backward(loss);
  opt.step(lr);
  return value;
}

double validation_loss(ComposedModel& model, const Dataset& ds, const NormalizationStats& norm,
                       const std::vector<data::UncertainPolicy>& policy, std::size_t batch) {
  double total = 0.0, weight = 0.0;
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + batch); ++i) idx.push_back(i);
    const TargetBatch t = make_targets(ds, idx, policy);
    const Variable logits = model.forward(Variable::constant(make_batch(ds, idx, norm)));
    const double m = double(sum(t.mask));
    total += double(bce_multilabel_loss(logits, t.targets, t.mask).value().item()) * m;
    weight += m;
  }
  return weight > 0 ? total / weight : 0.0;
}

std::string checkpoint_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06zu.clrb", step);
  return buf;
}

const std::set<Component> kAllComponents = {Component::kT, Component::kE, Component::kC};

}  // namespace

Tensor make_batch(const Dataset& ds, const std::vector<std::size_t>& idx,
                  const NormalizationStats& norm) {
  if (idx.empty()) throw Error("make_batch: empty batch");
  const Tensor& first = ds.at(idx[0]).image;
  const std::size_t per = first.numel();
  Tensor out({idx.size(), first.dim(0), first.dim(1), first.dim(2)});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor& img = ds.at(idx[i]).image;
    if (img.shape() != first.shape()) throw ShapeError("make_batch: mixed image shapes");
    for (std::size_t j = 0; j < per; ++j) {
      out[i * per + j] = Scalar((double(img[j]) - norm.mean) / norm.std);
    }
  }
  return out;
}

Predictions predict(ComposedModel& model, const Dataset& ds, const NormalizationStats& norm,
                    std::size_t batch) {
  if (ds.empty()) throw Error("predict: empty dataset");
  model.set_training(false);
  Predictions p;
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + batch); ++i) idx.push_back(i);
    const Variable logits = model.forward(Variable::constant(make_batch(ds, idx, norm)));
    const std::size_t k = logits.shape()[1];
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::vector<double> row(k);
      for (std::size_t j = 0; j < k; ++j) {
        row[j] = 1.0 / (1.0 + std::exp(-double(logits.value()[i * k + j])));
      }
      p.ids.push_back(ds[idx[i]].id);
      p.scores.push_back(std::move(row));
      p.labels.push_back(ds[idx[i]].labels);
    }
  }
  return p;
}

stats::ObservationAucs evaluate(const Predictions& p) {
  std::vector<std::vector<int>> targets, mask;
  for (const auto& l : p.labels) {
    const auto t = data::evaluation_targets(l);
    targets.emplace_back(t.targets.begin(), t.targets.end());
    mask.emplace_back(t.mask.begin(), t.mask.end());
  }
  return stats::evaluate_aucs(p.scores, targets, mask);
}

double accuracy(const Predictions& p) {
  std::size_t right = 0, total = 0;
  for (std::size_t i = 0; i < p.scores.size(); ++i) {
    for (std::size_t k = 0; k < p.scores[i].size(); ++k) {
      const auto s = p.labels[i][k];
      if (s == data::LabelState::kUncertain) continue;
      right += (p.scores[i][k] >= 0.5) == (s == data::LabelState::kPositive);
      ++total;
    }
  }
  return total ? double(right) / double(total) : 0.0;
}

void write_metrics(const TrainRun& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream m(dir / "metrics.csv", std::ios::trunc);
  if (!m) throw Error("cannot write " + (dir / "metrics.csv").string());
  m << "step,lr,loss,split\n";
  char buf[128];
  for (const auto& r : run.metrics) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%s\n", r.step, r.lr, r.loss, r.split.c_str());
    m << buf;
  }
  std::ofstream c(dir / "checkpoints.csv", std::ios::trunc);
  c << "step,val_mean_auc,selected\n";
  for (std::size_t i = 0; i < run.checkpoints.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%d\n", run.checkpoints[i].step,
                  run.checkpoints[i].val_mean_auc, int(i == run.selected));
    c << buf;
  }
}

std::unique_ptr<ComposedModel> build_strategy_model(const StrategyConfig& cfg,
                                                    const ModelDescriptor& base, nn::Rng& rng) {
  const std::string name(to_string(cfg.strategy));
  auto need = [&](const std::optional<Checkpoint>& ckpt, const char* what) -> const Checkpoint& {
    if (!ckpt) throw Error("strategy " + name + " requires " + what);
    return *ckpt;
  };
  ModelDescriptor desc = base;
  TrainableFlags flags;
  const Checkpoint* t_source = nullptr;
  const Checkpoint* e_source = nullptr;
  switch (cfg.strategy) {
    case Strategy::kBaseline:
    case Strategy::kBaselineAll:
      e_source = &need(cfg.init.encoder, "a pretrained encoder checkpoint");
      desc.front_end = FrontEndKind::kReplicate;
      flags = {false, cfg.strategy == Strategy::kBaselineAll, true};
      break;
    case Strategy::kColorModule:
      e_source = &need(cfg.init.encoder, "a pretrained encoder checkpoint");
      desc.front_end = front_end_kind_of(cfg.colorizer);
      desc.colorizer = cfg.colorizer_cfg;
      flags = {true, false, true};
      break;
    case Strategy::kAll: {
      e_source = &need(cfg.init.encoder, "a pretrained encoder checkpoint");
      t_source = &need(cfg.init.color_module, "a color-module checkpoint for T (run color-module first)");
      const ModelDescriptor td = t_source->descriptor();
      if (!td.has_colorizer()) throw Error("strategy all: the color-module checkpoint has no colorizer");
      desc.front_end = td.front_end;
      desc.colorizer = td.colorizer;
      flags = {true, true, true};
      break;
    }
    case Strategy::kLastLayer: {
      const Checkpoint& src = need(cfg.init.transfer, "a source checkpoint carrying T and E");
      t_source = e_source = &src;
      const ModelDescriptor td = src.descriptor();
      desc.front_end = td.front_end;
      desc.colorizer = td.colorizer;
      flags = {false, false, true};
      break;
    }
  }
  desc.encoder = e_source->descriptor().encoder;
  if (desc.front_end == FrontEndKind::kIdentity) {
    throw Error("strategy " + name + ": an RGB source model cannot be applied to gray targets");
  }
  auto model = build_model(desc, flags, rng);
  if (t_source && desc.has_colorizer()) restore(*model, *t_source, {Component::kT});
  restore(*model, *e_source, {Component::kE});
  return model;
}

TrainRun fit(ComposedModel& model, const Datasets& data, const TrainConfig& cfg,
             const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  if (!data.train || !data.val) throw Error("fit: train and validation splits are required");
  const Dataset& train = *data.train;
  const Dataset& val = *data.val;
  if (train.empty() || val.empty()) throw Error("fit: empty split");
  const auto policy = resolve_policy(cfg, train.front().labels.size());
  if (policy.size() != model.descriptor().n_outputs) {
    throw Error("fit: dataset has " + std::to_string(policy.size()) + " observations, model has " +
                std::to_string(model.descriptor().n_outputs) + " outputs");
  }
  auto params = model.trainable_parameters();
  if (params.empty()) throw Error("fit: model has no trainable parameters");

  TrainRun run;
  run.seed = cfg.seed;
  run.steps = cfg.steps;
  run.checkpoint_every = cfg.checkpoint_every;
  run.norm = data::compute_norm_stats(train);

  OneCycleConfig sched = cfg.schedule;
  sched.total_steps = cfg.steps;
  if (cfg.auto_lr) sched.max_lr = lr_find(model, data, cfg, *cfg.auto_lr).max_lr;
  run.max_lr = sched.max_lr;
  Sgd opt(params, cfg.sgd);
  BatchStream stream(train.size(), cfg.batch_size, cfg.seed);
  std::vector<double> losses;
  double best_auc = -std::numeric_limits<double>::infinity();

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double lr = one_cycle_lr(sched, step);
    const auto idx = stream.next();
    const Tensor batch = make_train_batch(train, idx, run.norm, cfg, stream.epoch());
    const TargetBatch t = make_targets(train, idx, policy);
    model.set_training(true);
    const double loss = train_step(model, opt, batch, t, lr);
    losses.push_back(loss);
    run.metrics.push_back({step + 1, lr, loss, "train"});

    const std::size_t done = step + 1;
    if (done % cfg.checkpoint_every != 0 && done != cfg.steps) continue;
    const Predictions p = predict(model, val, run.norm, cfg.eval_batch);
    const double auc = evaluate(p).result.mean_auc;
    const double vloss = validation_loss(model, val, run.norm, policy, cfg.eval_batch);
    run.metrics.push_back({done, lr, vloss, "val"});
    run.checkpoints.push_back({done, auc});
    Checkpoint ckpt = make_checkpoint(model, kAllComponents);
    attach_norm(ckpt, run.norm);
    if (out_dir) ckpt.write(*out_dir / "checkpoints" / checkpoint_name(done));
    if (std::isfinite(auc) && auc > best_auc) {
      best_auc = auc;
      run.selected = run.checkpoints.size() - 1;
      run.best = std::move(ckpt);
    } else if (run.checkpoints.size() == 1) {
      run.best = std::move(ckpt);
    }
  }
  model.set_training(false);
  restore(model, run.best, kAllComponents);
  run.initial_loss = losses.front();
  run.final_smoothed_loss = smooth_losses(losses, 0.98).back();
  if (out_dir) {
    run.best.write(*out_dir / "best.clrb");
    write_metrics(run, *out_dir);
  }
  return run;
}

TrainRun run_strategy(const StrategyConfig& strategy, const Datasets& data, const TrainConfig& cfg,
                      const std::optional<std::filesystem::path>& out_dir) {
  if (!data.train || data.train->empty()) throw Error("run_strategy: empty training split");
  ModelDescriptor base;
  base.n_outputs = data.train->front().labels.size();
  nn::Rng rng(derive_seed({cfg.seed, 0xC0, std::uint64_t(strategy.strategy)}));
  auto model = build_strategy_model(strategy, base, rng);
  return fit(*model, data, cfg, out_dir);
}

TrainRun pretrain_source(const Datasets& data, const EncoderConfig& encoder, const TrainConfig& cfg,
                         const std::optional<std::filesystem::path>& out_dir) {
  if (!data.train || data.train->empty()) throw Error("pretrain_source: empty training split");
  if (data.train->front().image.dim(0) != 3) throw Error("pretrain_source: source images must be RGB");
  ModelDescriptor desc;
  desc.front_end = FrontEndKind::kIdentity;
  desc.encoder = encoder;
  desc.n_outputs = data.train->front().labels.size();
  nn::Rng rng(derive_seed({cfg.seed, 0x50}));
  auto model = build_model(desc, {true, true, true}, rng);
  return fit(*model, data, cfg, out_dir);
}

LrFindResult lr_find(ComposedModel& model, const Datasets& data, const TrainConfig& cfg,
                     const LrFindConfig& sweep) {
  cfg.validate();
  if (!data.train || data.train->empty()) throw Error("lr_find: empty training split");
  const Dataset& train = *data.train;
  const auto policy = resolve_policy(cfg, train.front().labels.size());
  const auto norm = data::compute_norm_stats(train);
  const Checkpoint snapshot = make_checkpoint(model, kAllComponents);
  Sgd opt(model.trainable_parameters(), cfg.sgd);
  BatchStream stream(train.size(), cfg.batch_size, cfg.seed);
  auto step = [&](double lr) {
    const auto idx = stream.next();
    const Tensor batch = make_train_batch(train, idx, norm, cfg, stream.epoch());
    model.set_training(true);
    try {
      return train_step(model, opt, batch, make_targets(train, idx, policy), lr);
    } catch (const NumericError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  LrFindResult r;
  try {
    r = lr_find(step, sweep);
  } catch (...) {
    restore(model, snapshot, kAllComponents);
    throw;
  }
  model.set_training(false);
  restore(model, snapshot, kAllComponents);
  return r;
}

}  // namespace colorbridge::train
