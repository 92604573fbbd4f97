#include "colorbridge/layers.hpp"

#include <cmath>

#include "colorbridge/rng.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI::nn {

namespace {

Tensor he_normal(Shape shape, double fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& v : t.data()) v = Scalar(std * standard_normal(rng));
  return t;
}

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

void check_channels(const Variable& x, std::size_t expected, std::string_view layer) {
  if (x.value().rank() != 4 || x.shape()[1] != expected) {
    throw ShapeError(std::string(layer) + " expected " + std::to_string(expected) +
                     " input channels, got input of shape " + to_string(x.shape()));
  }
}

}  // namespace

void Module::collect_parameters(const std::string&, std::vector<NamedVariable>&) const {}
void Module::collect_buffers(const std::string&, std::vector<NamedVariable>&) const {}

std::vector<NamedVariable> parameters(const Module& m, const std::string& prefix) {
  std::vector<NamedVariable> out;
  m.collect_parameters(prefix, out);
  return out;
}

std::vector<NamedVariable> buffers(const Module& m, const std::string& prefix) {
  std::vector<NamedVariable> out;
  m.collect_buffers(prefix, out);
  return out;
}

std::size_t count_params(const Module& m, bool trainable_only) {
  std::size_t total = 0;
  for (const auto& p : parameters(m)) {
    if (!trainable_only || p.var.trainable()) total += p.var.value().numel();
  }
  return total;
}

void set_trainable(Module& m, bool trainable) {
  for (auto& p : parameters(m)) p.var.set_trainable(trainable);
}

void zero_grad(Module& m) {
  for (auto& p : parameters(m)) p.var.zero_grad();
}

Conv2d::Conv2d(const Conv2dSpec& spec, Rng& rng) : spec_(spec) {
  const double fan_in = double(spec.in_channels * spec.kernel * spec.kernel);
  weight_ = Variable::leaf(
      he_normal({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}, fan_in, rng), true);
  if (spec.has_bias) bias_ = Variable::leaf(Tensor({spec.out_channels}), true);
}

Variable Conv2d::forward(const Variable& x) {
  check_channels(x, spec_.in_channels, "conv2d");
  return ops::conv2d(x, weight_, bias_, {spec_.kernel, spec_.stride, spec_.padding});
}

void Conv2d::collect_parameters(const std::string& prefix, std::vector<NamedVariable>& out) const {
  out.push_back({join(prefix, "weight"), weight_});
  if (bias_.defined()) out.push_back({join(prefix, "bias"), bias_});
}

ConvTranspose2d::ConvTranspose2d(const Conv2dSpec& spec, Rng& rng) : spec_(spec) {
  // Each output pixel receives about in*k*k/stride^2 contributions.
  const double fan_in = std::max(
      1.0, double(spec.in_channels * spec.kernel * spec.kernel) / double(spec.stride * spec.stride));
  weight_ = Variable::leaf(
      he_normal({spec.in_channels, spec.out_channels, spec.kernel, spec.kernel}, fan_in, rng), true);
  if (spec.has_bias) bias_ = Variable::leaf(Tensor({spec.out_channels}), true);
}

Variable ConvTranspose2d::forward(const Variable& x) {
  check_channels(x, spec_.in_channels, "conv_transpose2d");
  return ops::conv_transpose2d(x, weight_, bias_, {spec_.kernel, spec_.stride, spec_.padding});
}

void ConvTranspose2d::collect_parameters(const std::string& prefix,
                                         std::vector<NamedVariable>& out) const {
  out.push_back({join(prefix, "weight"), weight_});
  if (bias_.defined()) out.push_back({join(prefix, "bias"), bias_});
}

BatchNorm2d::BatchNorm2d(std::size_t channels, Scalar momentum, Scalar eps)
    : momentum_(momentum),
      eps_(eps),
      gamma_(Variable::leaf(Tensor({channels}, Scalar{1}), true)),
      beta_(Variable::leaf(Tensor({channels}), true)),
      running_mean_(Variable::constant(Tensor({channels}))),
      running_var_(Variable::constant(Tensor({channels}, Scalar{1}))) {}

Variable BatchNorm2d::forward(const Variable& x) {
  check_channels(x, gamma_.value().numel(), "batch_norm2d");
  ops::BatchNormBuffers b{&running_mean_.mutable_value(), &running_var_.mutable_value(), momentum_,
                          eps_};
  return ops::batch_norm2d(x, gamma_, beta_, b, training_);
}

void BatchNorm2d::collect_parameters(const std::string& prefix,
                                     std::vector<NamedVariable>& out) const {
  out.push_back({join(prefix, "weight"), gamma_});
  out.push_back({join(prefix, "bias"), beta_});
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<NamedVariable>& out) const {
  out.push_back({join(prefix, "running_mean"), running_mean_});
  out.push_back({join(prefix, "running_var"), running_var_});
}

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& rng) {
  Tensor w({out_features, in_features});
  const double bound = 1.0 / std::sqrt(double(in_features));
  for (auto& v : w.data()) v = Scalar(uniform(rng, -bound, bound));
  weight_ = Variable::leaf(std::move(w), true);
  bias_ = Variable::leaf(Tensor({out_features}), true);
}

Variable Linear::forward(const Variable& x) { return ops::linear(x, weight_, bias_); }

void Linear::collect_parameters(const std::string& prefix, std::vector<NamedVariable>& out) const {
  out.push_back({join(prefix, "weight"), weight_});
  out.push_back({join(prefix, "bias"), bias_});
}

Variable Sequential::forward(const Variable& x) {
  Variable h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      h = layers_[i].module->forward(h);
    } catch (const NumericError& e) {
      throw NumericError("in " + layers_[i].name + ": " + e.what());
    }
    if (!h.value().all_finite()) {
      throw NumericError("non-finite activation after layer " + std::to_string(i) + " (" +
                         layers_[i].name + ")");
    }
  }
  return h;
}

void Sequential::collect_parameters(const std::string& prefix,
                                    std::vector<NamedVariable>& out) const {
  for (const auto& e : layers_) e.module->collect_parameters(join(prefix, e.name), out);
}

void Sequential::collect_buffers(const std::string& prefix, std::vector<NamedVariable>& out) const {
  for (const auto& e : layers_) e.module->collect_buffers(join(prefix, e.name), out);
}

void Sequential::visit(const std::function<void(const Module&)>& fn) const {
  fn(*this);
  for (const auto& e : layers_) e.module->visit(fn);
}

void Sequential::set_training(bool training) {
  Module::set_training(training);
  for (auto& e : layers_) e.module->set_training(training);
}

ResidualBlock::ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                             Rng& rng)
    : in_channels_(in_channels),
      conv1_({in_channels, out_channels, 3, stride, 1, false}, rng),
      bn1_(out_channels),
      conv2_({out_channels, out_channels, 3, 1, 1, false}, rng),
      bn2_(out_channels) {
  if (stride != 1 || in_channels != out_channels) {
    shortcut_conv_ = std::make_unique<Conv2d>(
        Conv2dSpec{in_channels, out_channels, 1, stride, 0, false}, rng);
    shortcut_bn_ = std::make_unique<BatchNorm2d>(out_channels);
  }
}

Variable ResidualBlock::forward(const Variable& x) {
  check_channels(x, in_channels_, "residual_block");
  Variable branch = ops::relu(bn1_.forward(conv1_.forward(x)));
  branch = bn2_.forward(conv2_.forward(branch));
  Variable skip = shortcut_conv_ ? shortcut_bn_->forward(shortcut_conv_->forward(x)) : x;
  return ops::relu(ops::add(skip, branch));
}

void ResidualBlock::collect_parameters(const std::string& prefix,
                                       std::vector<NamedVariable>& out) const {
  conv1_.collect_parameters(join(prefix, "conv1"), out);
  bn1_.collect_parameters(join(prefix, "bn1"), out);
  conv2_.collect_parameters(join(prefix, "conv2"), out);
  bn2_.collect_parameters(join(prefix, "bn2"), out);
  if (shortcut_conv_) {
    shortcut_conv_->collect_parameters(join(prefix, "shortcut.conv"), out);
    shortcut_bn_->collect_parameters(join(prefix, "shortcut.bn"), out);
  }
}

void ResidualBlock::collect_buffers(const std::string& prefix,
                                    std::vector<NamedVariable>& out) const {
  bn1_.collect_buffers(join(prefix, "bn1"), out);
  bn2_.collect_buffers(join(prefix, "bn2"), out);
  if (shortcut_bn_) shortcut_bn_->collect_buffers(join(prefix, "shortcut.bn"), out);
}

void ResidualBlock::visit(const std::function<void(const Module&)>& fn) const {
  fn(*this);
  conv1_.visit(fn);
  bn1_.visit(fn);
  conv2_.visit(fn);
  bn2_.visit(fn);
  if (shortcut_conv_) {
    shortcut_conv_->visit(fn);
    shortcut_bn_->visit(fn);
  }
}

void ResidualBlock::set_training(bool training) {
  Module::set_training(training);
  bn1_.set_training(training);
  bn2_.set_training(training);
  if (shortcut_bn_) shortcut_bn_->set_training(training);
}

}  // namespace colorbridge::nn
