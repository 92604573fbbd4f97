#include "colorbridge/backbone.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI {

EncoderConfig EncoderConfig::desk_scale() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::full_scale() {
  EncoderConfig cfg;
  cfg.in_channels = 3;
  cfg.stem_channels = 64;
  cfg.stem_kernel = 7;
  cfg.stem_stride = 2;
  cfg.stem_pool = true;
  cfg.stages = {{64, 2, 1}, {128, 2, 2}, {256, 2, 2}, {512, 2, 2}};
  return cfg;
}

void EncoderConfig::validate() const {
  if (in_channels == 0 || stem_channels == 0 || stem_kernel == 0 || stem_stride == 0) {
    throw Error("invalid encoder config: stem sizes must be positive");
  }
  for (const auto& s : stages) {
    if (s.channels == 0 || s.blocks == 0 || s.stride == 0) {
      throw Error("invalid encoder config: stage sizes must be positive");
    }
  }
}

Encoder::Encoder(const EncoderConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
  cfg.validate();
  auto stem = std::make_unique<nn::Sequential>();
  stem->add("conv", std::make_unique<nn::Conv2d>(
                        nn::Conv2dSpec{cfg.in_channels, cfg.stem_channels, cfg.stem_kernel,
                                       cfg.stem_stride, cfg.stem_kernel / 2, false},
                        rng));
  stem->add("bn", std::make_unique<nn::BatchNorm2d>(cfg.stem_channels));
  stem->add("relu", std::make_unique<nn::ReLU>());
  if (cfg.stem_pool) stem->add("pool", std::make_unique<nn::MaxPool2d>(2, 2));
  net_.add("stem", std::move(stem));
  std::size_t channels = cfg.stem_channels;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& stage = cfg.stages[s];
    auto seq = std::make_unique<nn::Sequential>();
    for (std::size_t b = 0; b < stage.blocks; ++b) {
      seq->add("block" + std::to_string(b),
               std::make_unique<nn::ResidualBlock>(channels, stage.channels,
                                                   b == 0 ? stage.stride : 1, rng));
      channels = stage.channels;
    }
    net_.add("stage" + std::to_string(s + 1), std::move(seq));
  }
  net_.add("pool", std::make_unique<nn::GlobalAvgPool>());
}

Variable replicate_gray(const Variable& x) { return ops::replicate_channels(x, 3); }

FrontEndKind front_end_kind_of(ColorizerKind kind) {
  switch (kind) {
    case ColorizerKind::kDeconv: return FrontEndKind::kDeconv;
    case ColorizerKind::kPixelShuffle: return FrontEndKind::kPixelShuffle;
    case ColorizerKind::kColorU: return FrontEndKind::kColorU;
  }
  return FrontEndKind::kReplicate;
}

ComposedModel::ComposedModel(ModelDescriptor desc, std::unique_ptr<nn::Module> front_end,
                             std::unique_ptr<Encoder> encoder, std::unique_ptr<ClassifierHead> head,
                             TrainableFlags flags)
    : desc_(std::move(desc)),
      front_end_(std::move(front_end)),
      encoder_(std::move(encoder)),
      head_(std::move(head)) {
  set_flags(flags);
}

namespace {

template <typename Fn>
Variable guarded(char component, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError(std::string(1, component) + ": " + e.what());
  }
}

}  // namespace

Variable ComposedModel::forward(const Variable& batch) {
  Variable rgb = guarded('T', [&] { return front_end_->forward(batch); });
  Variable features = guarded('E', [&] { return encoder_->forward(rgb); });
  Variable logits = head_->forward(features);
  if (!logits.value().all_finite()) throw NumericError("C: non-finite logits");
  return logits;
}

void ComposedModel::set_training(bool training) {
  training_ = training;
  front_end_->set_training(training && flags_.front_end);
  encoder_->set_training(training && flags_.encoder);
  head_->set_training(training && flags_.head);
}

void ComposedModel::set_flags(TrainableFlags flags) {
  flags_ = flags;
  nn::set_trainable(*front_end_, flags.front_end);
  nn::set_trainable(*encoder_, flags.encoder);
  nn::set_trainable(*head_, flags.head);
  set_training(training_);
}

std::vector<nn::NamedVariable> ComposedModel::named_parameters() const {
  std::vector<nn::NamedVariable> out;
  front_end_->collect_parameters("T", out);
  encoder_->collect_parameters("E", out);
  head_->collect_parameters("C", out);
  return out;
}

std::vector<nn::NamedVariable> ComposedModel::named_buffers() const {
  std::vector<nn::NamedVariable> out;
  front_end_->collect_buffers("T", out);
  encoder_->collect_buffers("E", out);
  head_->collect_buffers("C", out);
  return out;
}

std::vector<Variable> ComposedModel::trainable_parameters() const {
  std::vector<Variable> out;
  for (auto& p : named_parameters()) {
    if (p.var.trainable()) out.push_back(p.var);
  }
  return out;
}

void ComposedModel::zero_grad() {
  for (auto& p : named_parameters()) p.var.zero_grad();
}

Colorizer* ComposedModel::colorizer() { return dynamic_cast<Colorizer*>(front_end_.get()); }

std::unique_ptr<ComposedModel> compose(ModelDescriptor desc, std::unique_ptr<nn::Module> front_end,
                                       std::unique_ptr<Encoder> encoder,
                                       std::unique_ptr<ClassifierHead> head, TrainableFlags flags) {
  if (!front_end || !encoder || !head) throw Error("compose: missing component");
  const std::size_t front_out = 3;  // every front end emits RGB
  if (encoder->config().in_channels != front_out) {
    throw ShapeError("compose: front end emits " + std::to_string(front_out) +
                     " channels but encoder expects " +
                     std::to_string(encoder->config().in_channels));
  }
  if (head->feature_dim() != encoder->config().feature_dim()) {
    throw ShapeError("compose: head expects " + std::to_string(head->feature_dim()) +
                     " features, encoder produces " + std::to_string(encoder->config().feature_dim()));
  }
  if (desc.has_colorizer() && dynamic_cast<Colorizer*>(front_end.get()) == nullptr) {
    throw Error("compose: descriptor declares a colorizer but the front end is not one");
  }
  return std::make_unique<ComposedModel>(std::move(desc), std::move(front_end), std::move(encoder),
                                         std::move(head), flags);
}

std::unique_ptr<ComposedModel> build_model(const ModelDescriptor& desc, TrainableFlags flags,
                                           nn::Rng& rng) {
  std::unique_ptr<nn::Module> front_end;
  switch (desc.front_end) {
    case FrontEndKind::kReplicate: front_end = std::make_unique<ChannelReplicate>(); break;
    case FrontEndKind::kIdentity: front_end = std::make_unique<IdentityFrontEnd>(); break;
    case FrontEndKind::kDeconv:
      front_end = build_colorizer(ColorizerKind::kDeconv, desc.colorizer, rng);
      break;
    case FrontEndKind::kPixelShuffle:
      front_end = build_colorizer(ColorizerKind::kPixelShuffle, desc.colorizer, rng);
      break;
    case FrontEndKind::kColorU:
      front_end = build_colorizer(ColorizerKind::kColorU, desc.colorizer, rng);
      break;
  }
  auto encoder = std::make_unique<Encoder>(desc.encoder, rng);
  auto head = std::make_unique<ClassifierHead>(desc.encoder.feature_dim(), desc.n_outputs, rng);
  return compose(desc, std::move(front_end), std::move(encoder), std::move(head), flags);
}

}  // namespace colorbridge
