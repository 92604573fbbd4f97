#pragma once

#include "colorbridge/abi.hpp"

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "colorbridge/ops.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI::nn {

using Rng = std::mt19937_64;

struct NamedVariable {
  std::string name;
  Variable var;
};

inline constexpr Scalar kLeakySlope = Scalar(0.01);
inline constexpr Scalar kBatchNormEps = Scalar(1e-5);
inline constexpr Scalar kBatchNormMomentum = Scalar(0.1);

class Module {
 public:
  virtual ~Module() = default;

  virtual Variable forward(const Variable& x) = 0;
  virtual std::string_view kind() const = 0;

  /// Learnable tensors, named relative to this module ("conv1.weight").
  virtual void collect_parameters(const std::string& prefix, std::vector<NamedVariable>& out) const;
  /// Non-learnable state such as BatchNorm running statistics.
  virtual void collect_buffers(const std::string& prefix, std::vector<NamedVariable>& out) const;
  /// Calls `fn` on this module and every nested module, depth first.
  virtual void visit(const std::function<void(const Module&)>& fn) const { fn(*this); }

  virtual void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

 protected:
  bool training_ = true;
};

std::vector<NamedVariable> parameters(const Module& m, const std::string& prefix = "");
std::vector<NamedVariable> buffers(const Module& m, const std::string& prefix = "");
std::size_t count_params(const Module& m, bool trainable_only);
void set_trainable(Module& m, bool trainable);
void zero_grad(Module& m);

struct Conv2dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool has_bias = true;

  std::size_t output_size(std::size_t input) const {
    return (input + 2 * padding - kernel) / stride + 1;
  }
};

class Conv2d : public Module {
 public:
  Conv2d(const Conv2dSpec& spec, Rng& rng);
  Variable forward(const Variable& x) override;
  std::string_view kind() const override { return "conv2d"; }
  void collect_parameters(const std::string& prefix, std::vector<NamedVariable>& out) const override;

  const Conv2dSpec& spec() const { return spec_; }
  Variable& weight() { return weight_; }
  Variable& bias() { return bias_; }

 private:
  Conv2dSpec spec_;
  Variable weight_;  // [out, in, k, k]
  Variable bias_;
};

/// Output spatial size is (H-1)*stride - 2*padding + kernel.
class ConvTranspose2d : public Module {
 public:
  ConvTranspose2d(const Conv2dSpec& spec, Rng& rng);
  Variable forward(const Variable& x) override;
  std::string_view kind() const override { return "conv_transpose2d"; }
  void collect_parameters(const std::string& prefix, std::vector<NamedVariable>& out) const override;

  const Conv2dSpec& spec() const { return spec_; }
  Variable& weight() { return weight_; }
  Variable& bias() { return bias_; }

 private:
  Conv2dSpec spec_;
  Variable weight_;  // [in, out, k, k]
  Variable bias_;
};

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(std::size_t channels, Scalar momentum = kBatchNormMomentum,
                       Scalar eps = kBatchNormEps);
  Variable forward(const Variable& x) override;
  std::string_view kind() const override { return "batch_norm2d"; }
  void collect_parameters(const std::string& prefix, std::vector<NamedVariable>& out) const override;
  void collect_buffers(const std::string& prefix, std::vector<NamedVariable>& out) const override;

  Variable& gamma() { return gamma_; }
  Variable& beta() { return beta_; }
  Tensor& running_mean() { return running_mean_.mutable_value(); }
  Tensor& running_var() { return running_var_.mutable_value(); }

 private:
  Scalar momentum_;
  Scalar eps_;
  Variable gamma_, beta_;
  Variable running_mean_, running_var_;
};

class LeakyReLU : public Module {
 public:
  explicit LeakyReLU(Scalar slope = kLeakySlope) : slope_(slope) {}
  Variable forward(const Variable& x) override { return ops::leaky_relu(x, slope_); }
  std::string_view kind() const override { return slope_ == 0 ? "relu" : "leaky_relu"; }

 private:
  Scalar slope_;
};

class ReLU : public LeakyReLU {
 public:
  ReLU() : LeakyReLU(Scalar{0}) {}
};

class MaxPool2d : public Module {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride) : kernel_(kernel), stride_(stride) {}
  Variable forward(const Variable& x) override { return ops::max_pool2d(x, kernel_, stride_); }
  std::string_view kind() const override { return "max_pool2d"; }

 private:
  std::size_t kernel_, stride_;
};

class GlobalAvgPool : public Module {
 public:
  Variable forward(const Variable& x) override { return ops::global_avg_pool(x); }
  std::string_view kind() const override { return "global_avg_pool"; }
};

class PixelShuffle : public Module {
 public:
  explicit PixelShuffle(std::size_t upscale) : upscale_(upscale) {}
  Variable forward(const Variable& x) override { return ops::pixel_shuffle(x, upscale_); }
  std::string_view kind() const override { return "pixel_shuffle"; }

 private:
  std::size_t upscale_;
};

class Linear : public Module {
 public:
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng);
  Variable forward(const Variable& x) override;
  std::string_view kind() const override { return "linear"; }
  void collect_parameters(const std::string& prefix, std::vector<NamedVariable>& out) const override;

  Variable& weight() { return weight_; }
  Variable& bias() { return bias_; }

 private:
  Variable weight_;  // [out, in]
  Variable bias_;
};

/// Ordered list of named layers. Forward checks every intermediate result
/// and reports the first layer that produced a non-finite value.
class Sequential : public Module {
 public:
  Sequential() = default;

  template <typename Layer>
  Layer& add(std::string name, std::unique_ptr<Layer> layer) {
    Layer& ref = *layer;
    layers_.push_back({std::move(name), std::move(layer)});
    return ref;
  }

  Variable forward(const Variable& x) override;
  std::string_view kind() const override { return "sequential"; }
  void collect_parameters(const std::string& prefix, std::vector<NamedVariable>& out) const override;
  void collect_buffers(const std::string& prefix, std::vector<NamedVariable>& out) const override;
  void visit(const std::function<void(const Module&)>& fn) const override;
  void set_training(bool training) override;

  std::size_t size() const { return layers_.size(); }
  const std::string& name(std::size_t i) const { return layers_.at(i).name; }
  Module& layer(std::size_t i) { return *layers_.at(i).module; }
  const Module& layer(std::size_t i) const { return *layers_.at(i).module; }

 private:
  struct Entry {
    std::string name;
    std::unique_ptr<Module> module;
  };
  std::vector<Entry> layers_;
};

/// out = relu(shortcut(x) + bn2(conv2(relu(bn1(conv1(x)))))), 3x3 convs.
/// The shortcut is the identity unless the stride or channel count changes,
/// in which case it is a 1x1 strided convolution followed by BatchNorm.
class ResidualBlock : public Module {
 public:
  ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Rng& rng);
  ResidualBlock(std::size_t channels, Rng& rng) : ResidualBlock(channels, channels, 1, rng) {}

  Variable forward(const Variable& x) override;
  std::string_view kind() const override { return "residual_block"; }
  void collect_parameters(const std::string& prefix, std::vector<NamedVariable>& out) const override;
  void collect_buffers(const std::string& prefix, std::vector<NamedVariable>& out) const override;
  void visit(const std::function<void(const Module&)>& fn) const override;
  void set_training(bool training) override;

  std::size_t in_channels() const { return in_channels_; }
  Conv2d& conv1() { return conv1_; }
  Conv2d& conv2() { return conv2_; }
  BatchNorm2d& bn1() { return bn1_; }
  BatchNorm2d& bn2() { return bn2_; }

 private:
  std::size_t in_channels_;
  Conv2d conv1_;
  BatchNorm2d bn1_;
  Conv2d conv2_;
  BatchNorm2d bn2_;
  std::unique_ptr<Conv2d> shortcut_conv_;
  std::unique_ptr<BatchNorm2d> shortcut_bn_;
};

}  // namespace colorbridge::nn
