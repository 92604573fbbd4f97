#pragma once

#include "colorbridge/abi.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "colorbridge/colorizers.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI {

struct EncoderStage {
  std::size_t channels;
  std::size_t blocks;
  std::size_t stride;
};

struct EncoderConfig {
  std::size_t in_channels = 3;
  std::size_t stem_channels = 16;
  std::size_t stem_kernel = 3;
  std::size_t stem_stride = 1;
  bool stem_pool = false;
  std::vector<EncoderStage> stages = {{16, 1, 2}, {32, 1, 2}};

  /// stem conv(3->16,k3,s1) and two residual stages of 16 and 32 channels.
  static EncoderConfig desk_scale();
  /// 18-layer residual network (four stages of two basic blocks). Only
  /// instantiated for parameter accounting.
  static EncoderConfig full_scale();

  std::size_t feature_dim() const { return stages.empty() ? stem_channels : stages.back().channels; }
  void validate() const;
};

/// E: convolutional trunk followed by global average pooling, [N,3,H,W] -> [N,D].
class Encoder : public nn::Module {
 public:
  Encoder(const EncoderConfig& cfg, nn::Rng& rng);

  Variable forward(const Variable& x) override { return net_.forward(x); }
  std::string_view kind() const override { return "encoder"; }
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

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  nn::Sequential net_;
};

/// C: one logit per observation.
class ClassifierHead : public nn::Module {
 public:
  ClassifierHead(std::size_t feature_dim, std::size_t n_outputs, nn::Rng& rng)
      : feature_dim_(feature_dim), n_outputs_(n_outputs), fc_(feature_dim, n_outputs, rng) {}

  Variable forward(const Variable& features) override { return fc_.forward(features); }
  std::string_view kind() const override { return "classifier_head"; }
  void collect_parameters(const std::string& prefix,
                          std::vector<nn::NamedVariable>& out) const override {
    fc_.collect_parameters(prefix.empty() ? "fc" : prefix + ".fc", out);
  }

  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t n_outputs() const { return n_outputs_; }

 private:
  std::size_t feature_dim_;
  std::size_t n_outputs_;
  nn::Linear fc_;
};

/// Baseline front end: copies the single gray channel into three channels.
class ChannelReplicate : public nn::Module {
 public:
  Variable forward(const Variable& x) override { return ops::replicate_channels(x, 3); }
  std::string_view kind() const override { return "replicate"; }
};

/// Pass-through front end for inputs that are already RGB (source pretraining).
class IdentityFrontEnd : public nn::Module {
 public:
  Variable forward(const Variable& x) override { return x; }
  std::string_view kind() const override { return "identity"; }
};

Variable replicate_gray(const Variable& x);

enum class FrontEndKind { kReplicate, kDeconv, kPixelShuffle, kColorU, kIdentity };

FrontEndKind front_end_kind_of(ColorizerKind kind);

/// Everything needed to rebuild a ComposedModel's architecture.
struct ModelDescriptor {
  FrontEndKind front_end = FrontEndKind::kReplicate;
  ColorizerConfig colorizer = ColorizerConfig::desk_scale();
  EncoderConfig encoder = EncoderConfig::desk_scale();
  std::size_t n_outputs = 4;

  bool has_colorizer() const {
    return front_end == FrontEndKind::kDeconv || front_end == FrontEndKind::kPixelShuffle ||
           front_end == FrontEndKind::kColorU;
  }
  std::size_t input_channels() const { return front_end == FrontEndKind::kIdentity ? 3 : 1; }
};

struct TrainableFlags {
  bool front_end = true;  // T
  bool encoder = true;    // E
  bool head = true;       // C

  bool operator==(const TrainableFlags&) const = default;
};

/// C(E(front_end(x))) with per-component trainability. Frozen components
/// stay in evaluation mode, so their BatchNorm statistics never move.
class ComposedModel {
 public:
  ComposedModel(ModelDescriptor desc, std::unique_ptr<nn::Module> front_end,
                std::unique_ptr<Encoder> encoder, std::unique_ptr<ClassifierHead> head,
                TrainableFlags flags);

  /// batch [N,C_in,H,W] (normalized) -> logits [N, n_outputs].
  Variable forward(const Variable& batch);

  /// Training mode applies to trainable components only.
  void set_training(bool training);
  void set_flags(TrainableFlags flags);
  const TrainableFlags& flags() const { return flags_; }
  const ModelDescriptor& descriptor() const { return desc_; }

  /// Parameters named "T.*", "E.*", "C.*".
  std::vector<nn::NamedVariable> named_parameters() const;
  std::vector<nn::NamedVariable> named_buffers() const;
  std::vector<Variable> trainable_parameters() const;
  void zero_grad();

  nn::Module& front_end() { return *front_end_; }
  Colorizer* colorizer();
  Encoder& encoder() { return *encoder_; }
  ClassifierHead& head() { return *head_; }

 private:
  ModelDescriptor desc_;
  std::unique_ptr<nn::Module> front_end_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<ClassifierHead> head_;
  TrainableFlags flags_;
  bool training_ = false;
};

/// Validates that the front end produces the encoder's channel count and
/// the head matches the encoder's feature size.
std::unique_ptr<ComposedModel> compose(ModelDescriptor desc, std::unique_ptr<nn::Module> front_end,
                                       std::unique_ptr<Encoder> encoder,
                                       std::unique_ptr<ClassifierHead> head, TrainableFlags flags);

/// Fresh, randomly initialized model for `desc`.
std::unique_ptr<ComposedModel> build_model(const ModelDescriptor& desc, TrainableFlags flags,
                                           nn::Rng& rng);

}  // namespace colorbridge
