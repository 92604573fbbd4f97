#include "gradient_suite.hpp"

#include <algorithm>
#include <functional>

#include "colorbridge/backbone.hpp"
#include "colorbridge/gradcheck.hpp"
#include "colorbridge/rng.hpp"
#include "colorbridge/training.hpp"

#ifndef COLORBRIDGE_DOUBLE
#error "the gradient suite needs the double-precision build"
#endif

using namespace colorbridge;

namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + uniform_index(rng, hi - lo + 1);
}

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * standard_normal(rng);
  return t;
}

// Values bounded away from zero so that +-step never crosses a kink.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = (uniform01(rng) < 0.5 ? -1 : 1) * uniform(rng, 0.1, 1.0);
  return t;
}

// Distinct values at least 0.05 apart, in random order.
Tensor well_separated(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::vector<double> v(t.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * double(i) + uniform(rng, 0.0, 0.01);
  shuffle(v.begin(), v.end(), rng);
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
  return t;
}

// Scalar loss mean(out * R) with a fixed random R.
Variable project(const Variable& out, const Tensor& r) {
  return ops::mean(ops::mul(out, Variable::constant(r)));
}

struct Projector {
  Tensor r;
  Variable operator()(const Variable& out, Rng& rng) {
    if (r.empty()) r = random_tensor(out.shape(), rng);
    return project(out, r);
  }
};

std::vector<Variable> params_of(const nn::Module& m) {
  std::vector<Variable> out;
  for (const auto& p : nn::parameters(m)) out.push_back(p.var);
  return out;
}

// Builds one instance and returns its worst relative error.
using Case = std::function<FiniteDiffReport(Rng&)>;

FiniteDiffReport conv_case(Rng& rng) {
  const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 4), o = pick(rng, 1, 4);
  const std::size_t h = pick(rng, 2, 4), w = pick(rng, 2, 4);
  ops::ConvGeometry g{pick(rng, 1, 3), pick(rng, 1, 2), pick(rng, 0, 1)};
  g.kernel = std::min(g.kernel, std::min(h, w) + 2 * g.padding);
  Variable x = Variable::leaf(random_tensor({n, c, h, w}, rng), true);
  Variable wt = Variable::leaf(random_tensor({o, c, g.kernel, g.kernel}, rng), true);
  Variable b = Variable::leaf(random_tensor({o}, rng), true);
  Projector p;
  auto fn = [&] { return p(ops::conv2d(x, wt, b, g), rng); };
  fn();
  return finite_diff_report(fn, {x, wt, b}, kGradientStep, true, kGradientTolerance);
}

FiniteDiffReport conv_transpose_case(Rng& rng) {
  const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 4), o = pick(rng, 1, 4);
  const std::size_t h = pick(rng, 1, 4), w = pick(rng, 1, 4);
  ops::ConvGeometry g{pick(rng, 1, 4), pick(rng, 1, 2), 0};
  if (g.kernel >= 3) g.padding = pick(rng, 0, 1);
  Variable x = Variable::leaf(random_tensor({n, c, h, w}, rng), true);
  Variable wt = Variable::leaf(random_tensor({c, o, g.kernel, g.kernel}, rng), true);
  Variable b = Variable::leaf(random_tensor({o}, rng), true);
  Projector p;
  auto fn = [&] { return p(ops::conv_transpose2d(x, wt, b, g), rng); };
  fn();
  return finite_diff_report(fn, {x, wt, b}, kGradientStep, true, kGradientTolerance);
}

FiniteDiffReport batch_norm_case(Rng& rng, bool training) {
  const std::size_t n = pick(rng, 2, 3), c = pick(rng, 1, 4);
  const std::size_t h = pick(rng, 1, 4), w = pick(rng, 1, 4);
  Variable x = Variable::leaf(random_tensor({n, c, h, w}, rng), true);
  Variable gamma = Variable::leaf(random_tensor({c}, rng), true);
  Variable beta = Variable::leaf(random_tensor({c}, rng), true);
  Tensor rm = random_tensor({c}, rng, 0.5);
  Tensor rv({c});
  for (auto& v : rv.data()) v = uniform(rng, 0.5, 2.0);
  Projector p;
  auto fn = [&] {
    Tensor m = rm, v = rv;  // keep the buffers fixed across evaluations
    return p(ops::batch_norm2d(x, gamma, beta, {&m, &v}, training), rng);
  };
  fn();
  return finite_diff_report(fn, {x, gamma, beta}, kGradientStep, true, kGradientTolerance);
}

FiniteDiffReport leaky_relu_case(Rng& rng, Scalar slope) {
  Variable x = Variable::leaf(away_from_zero({pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 4),
                                              pick(rng, 1, 4)},
                                             rng),
                              true);
  Projector p;
  auto fn = [&] { return p(ops::leaky_relu(x, slope), rng); };
  fn();
  return finite_diff_report(fn, {x}, kGradientStep, true, kGradientTolerance);
}

FiniteDiffReport max_pool_case(Rng& rng) {
  const std::size_t k = pick(rng, 1, 2), s = pick(rng, 1, 2);
  Variable x = Variable::leaf(
      well_separated({pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 2, 4), pick(rng, 2, 4)}, rng),
      true);
  Projector p;
  auto fn = [&] { return p(ops::max_pool2d(x, k, s), rng); };
  fn();
  return finite_diff_report(fn, {x}, kGradientStep, true, kGradientTolerance);
}

FiniteDiffReport global_avg_pool_case(Rng& rng) {
  Variable x = Variable::leaf(
      random_tensor({pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)}, rng),
      true);
  Projector p;
  auto fn = [&] { return p(ops::global_avg_pool(x), rng); };
  fn();
  return finite_diff_report(fn, {x}, kGradientStep, true, kGradientTolerance);
}

FiniteDiffReport linear_case(Rng& rng) {
  const std::size_t n = pick(rng, 1, 3), in = pick(rng, 1, 4), out = pick(rng, 1, 4);
  Variable x = Variable::leaf(random_tensor({n, in}, rng), true);
  Variable w = Variable::leaf(random_tensor({out, in}, rng), true);
  Variable b = Variable::leaf(random_tensor({out}, rng), true);
  Projector p;
  auto fn = [&] { return p(ops::linear(x, w, b), rng); };
  fn();
  return finite_diff_report(fn, {x, w, b}, kGradientStep, true, kGradientTolerance);
}

FiniteDiffReport pixel_shuffle_case(Rng& rng) {
  const std::size_t r = pick(rng, 1, 2);
  Variable x = Variable::leaf(
      random_tensor({pick(rng, 1, 2), r * r * pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)},
                    rng),
      true);
  Projector p, q;
  auto fn = [&] {
    const Variable y = ops::pixel_shuffle(x, r);
    return ops::add(p(y, rng), q(ops::pixel_unshuffle(y, r), rng));
  };
  fn();
  return finite_diff_report(fn, {x}, kGradientStep, true, kGradientTolerance);
}

FiniteDiffReport replicate_case(Rng& rng) {
  Variable x =
      Variable::leaf(random_tensor({pick(rng, 1, 2), 1, pick(rng, 1, 4), pick(rng, 1, 4)}, rng), true);
  Projector p;
  auto fn = [&] { return p(replicate_gray(x), rng); };
  fn();
  return finite_diff_report(fn, {x}, kGradientStep, true, kGradientTolerance);
}

FiniteDiffReport bce_case(Rng& rng) {
  const std::size_t n = pick(rng, 1, 4), k = pick(rng, 1, 4);
  Variable logits = Variable::leaf(random_tensor({n, k}, rng, 2.0), true);
  Tensor targets({n, k}), mask({n, k});
  for (std::size_t i = 0; i < n * k; ++i) {
    targets[i] = uniform01(rng) < 0.5 ? 1 : 0;
    mask[i] = uniform01(rng) < 0.8 ? 1 : 0;
  }
  mask[0] = 1;
  auto fn = [&] { return ops::bce_with_logits(logits, targets, mask); };
  return finite_diff_report(fn, {logits}, kGradientStep, true, kGradientTolerance);
}

FiniteDiffReport elementwise_case(Rng& rng) {
  const Shape shape{pick(rng, 1, 3), pick(rng, 1, 4)};
  Variable a = Variable::leaf(random_tensor(shape, rng), true);
  Tensor bv(shape);
  for (auto& v : bv.data()) v = (uniform01(rng) < 0.5 ? -1 : 1) * uniform(rng, 0.5, 2.0);
  Variable b = Variable::leaf(bv, true);
  // keep max-with away from ties
  Tensor cv = a.value();
  for (auto& v : cv.data()) v += (uniform01(rng) < 0.5 ? -1 : 1) * uniform(rng, 0.1, 1.0);
  Variable c = Variable::leaf(cv, true);
  const Scalar s = uniform(rng, 0.5, 2.0);
  Projector p;
  auto fn = [&] {
    Variable y = ops::add(ops::mul(a, b), ops::div(a, b));
    y = ops::sub(y, ops::maximum(a, c));
    y = ops::add(y, ops::elementwise(ElementwiseOp::kMul, c, s));
    y = ops::add(y, ops::elementwise(ElementwiseOp::kDiv, a, s));
    const Variable flat = ops::reshape(y, {shape_numel(shape)});
    return ops::add(p(flat, rng), ops::mean(ops::mul(y, y)));
  };
  fn();
  return finite_diff_report(fn, {a, b, c}, kGradientStep, true, kGradientTolerance);
}

// Standard-normal entries for every parameter, like the single-layer cases.
void randomize(const std::vector<Variable>& params, Rng& rng) {
  for (Variable p : params) p.mutable_value() = random_tensor(p.shape(), rng);
}

FiniteDiffReport module_case(nn::Module& m, const Tensor& input, Rng& rng) {
  Variable x = Variable::leaf(input, true);
  std::vector<Variable> wrt = params_of(m);
  randomize(wrt, rng);
  wrt.push_back(x);
  Projector p;
  auto fn = [&] { return p(m.forward(x), rng); };
  fn();
  return finite_diff_report(fn, wrt, kGradientStep, true, kGradientTolerance);
}

FiniteDiffReport residual_case(Rng& rng, bool projection) {
  const std::size_t c = pick(rng, 1, 4);
  const std::size_t out = projection ? pick(rng, 1, 4) : c;
  const std::size_t stride = projection ? 2 : 1;
  nn::ResidualBlock block(c, out, stride, rng);
  return module_case(block, random_tensor({2, c, pick(rng, 2, 4), pick(rng, 2, 4)}, rng), rng);
}

FiniteDiffReport colorizer_case(Rng& rng, ColorizerKind kind) {
  ColorizerConfig cfg;
  cfg.stem_channels = 2;
  cfg.n_res_blocks = 1;
  cfg.coloru_channels = {2, 3, 4};
  cfg.input_height = cfg.input_width = kind == ColorizerKind::kColorU ? 16 : 8;
  auto net = build_colorizer(kind, cfg, rng);
  return module_case(*net, random_tensor({2, 1, cfg.input_height, cfg.input_width}, rng), rng);
}

FiniteDiffReport model_case(Rng& rng) {
  ModelDescriptor desc;
  desc.front_end = FrontEndKind::kPixelShuffle;
  desc.colorizer.input_height = desc.colorizer.input_width = 8;
  desc.colorizer.stem_channels = 2;
  desc.colorizer.n_res_blocks = 1;
  desc.encoder.stem_channels = 3;
  desc.encoder.stages = {{4, 1, 2}};
  desc.n_outputs = 3;
  auto model = build_model(desc, {true, true, true}, rng);
  model->set_training(true);
  Variable x = Variable::leaf(random_tensor({3, 1, 8, 8}, rng), true);
  std::vector<Variable> wrt = model->trainable_parameters();
  randomize(wrt, rng);
  wrt.push_back(x);
  Tensor targets({3, 3}), mask({3, 3}, 1);
  for (auto& t : targets.data()) t = uniform01(rng) < 0.5 ? 1 : 0;
  auto fn = [&] { return train::bce_multilabel_loss(model->forward(x), targets, mask); };
  return finite_diff_report(fn, wrt, kGradientStep, true, kGradientTolerance);
}

}  // namespace

std::vector<GradientCaseResult> run_gradient_suite(std::size_t instances) {
  const std::vector<std::pair<std::string, Case>> cases = {
      {"conv2d", conv_case},
      {"conv_transpose2d", conv_transpose_case},
      {"batch_norm2d(train)", [](Rng& r) { return batch_norm_case(r, true); }},
      {"batch_norm2d(eval)", [](Rng& r) { return batch_norm_case(r, false); }},
      {"leaky_relu", [](Rng& r) { return leaky_relu_case(r, nn::kLeakySlope); }},
      {"relu", [](Rng& r) { return leaky_relu_case(r, 0); }},
      {"max_pool2d", max_pool_case},
      {"global_avg_pool", global_avg_pool_case},
      {"linear", linear_case},
      {"pixel_shuffle", pixel_shuffle_case},
      {"replicate_gray", replicate_case},
      {"bce_with_logits", bce_case},
      {"elementwise", elementwise_case},
      {"residual_block", [](Rng& r) { return residual_case(r, false); }},
      {"residual_block(projection)", [](Rng& r) { return residual_case(r, true); }},
      {"colorizer(deconv)", [](Rng& r) { return colorizer_case(r, ColorizerKind::kDeconv); }},
      {"colorizer(pixelshuffle)",
       [](Rng& r) { return colorizer_case(r, ColorizerKind::kPixelShuffle); }},
      {"colorizer(coloru)", [](Rng& r) { return colorizer_case(r, ColorizerKind::kColorU); }},
      {"composed_model", model_case},
  };
  std::vector<GradientCaseResult> results;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradientCaseResult res{cases[c].first, instances, 0.0, 0, 0, 0};
    for (std::size_t i = 0; i < instances; ++i) {
      Rng rng(derive_seed({0x6C, c, i}));
      const FiniteDiffReport r = cases[c].second(rng);
      res.worst_rel_error = std::max(res.worst_rel_error, r.max_rel_error);
      res.checked += r.checked;
      res.skipped_nonsmooth += r.skipped_nonsmooth;
      res.refined += r.refined;
    }
    results.push_back(res);
  }
  return results;
}
