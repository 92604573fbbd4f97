#pragma once

#include "colorbridge/abi.hpp"

#include <memory>
#include <string_view>
#include <vector>

#include "colorbridge/layers.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI {

enum class ColorizerKind { kDeconv, kPixelShuffle, kColorU };

std::string_view to_string(ColorizerKind kind);
ColorizerKind parse_colorizer_kind(std::string_view name);

struct ColorizerConfig {
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  // Deconv / PixelShuffle: stem conv(k7,s2) + 2x2 max-pool, residual trunk,
  // then an upsampler by `upscale` back to the input size.
  std::size_t stem_channels = 16;
  std::size_t n_res_blocks = 2;
  std::size_t upscale = 4;
  // ColorU: output channels of the three ColorDown blocks; the ColorUp
  // blocks mirror them and ColorOut emits 3 channels.
  std::vector<std::size_t> coloru_channels = {8, 16, 32};

  /// 1x320x320 input, 64-channel stem, 8 residual blocks.
  static ColorizerConfig full_scale();
  /// 1x32x32 input, 16-channel stem, 2 residual blocks.
  static ColorizerConfig desk_scale();

  void validate(ColorizerKind kind) const;
};

/// Learned map from a [N,1,H,W] grayscale batch to a [N,3,H,W] image.
class Colorizer : public nn::Module {
 public:
  Colorizer(ColorizerKind kind, ColorizerConfig cfg, nn::Sequential net)
      : kind_(kind), cfg_(std::move(cfg)), net_(std::move(net)) {}

  Variable forward(const Variable& gray) override;
  std::string_view kind() const override { return "colorizer"; }
  void collect_parameters(const std::string& prefix,
                          std::vector<nn::NamedVariable>& out) const override {
    net_.collect_parameters(prefix, out);
  }
  void collect_buffers(const std::string& prefix,
                       std::vector<nn::NamedVariable>& out) const override {
    net_.collect_buffers(prefix, out);
  }
  void visit(const std::function<void(const Module&)>& fn) const override {
    fn(*this);
    net_.visit(fn);
  }
  void set_training(bool training) override {
    Module::set_training(training);
    net_.set_training(training);
  }

  ColorizerKind colorizer_kind() const { return kind_; }
  const ColorizerConfig& config() const { return cfg_; }
  nn::Sequential& network() { return net_; }
  const nn::Sequential& network() const { return net_; }

 private:
  ColorizerKind kind_;
  ColorizerConfig cfg_;
  nn::Sequential net_;
};

std::unique_ptr<Colorizer> build_colorizer(ColorizerKind kind, const ColorizerConfig& cfg,
                                           nn::Rng& rng);

/// T(x). Throws ShapeError unless gray is [N,1,H,W] at the configured size.
Variable colorize(Colorizer& colorizer, const Variable& gray);

}  // namespace colorbridge
