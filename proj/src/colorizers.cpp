#include "colorbridge/colorizers.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI {

using nn::BatchNorm2d;
using nn::Conv2d;
using nn::Conv2dSpec;
using nn::ConvTranspose2d;
using nn::LeakyReLU;
using nn::Sequential;

std::string_view to_string(ColorizerKind kind) {
  switch (kind) {
    case ColorizerKind::kDeconv: return "deconv";
    case ColorizerKind::kPixelShuffle: return "pixelshuffle";
    case ColorizerKind::kColorU: return "coloru";
  }
  return "?";
}

ColorizerKind parse_colorizer_kind(std::string_view name) {
  if (name == "deconv") return ColorizerKind::kDeconv;
  if (name == "pixelshuffle") return ColorizerKind::kPixelShuffle;
  if (name == "coloru") return ColorizerKind::kColorU;
  throw Error("unknown colorizer '" + std::string(name) + "' (expected deconv|pixelshuffle|coloru)");
}

ColorizerConfig ColorizerConfig::full_scale() {
  ColorizerConfig cfg;
  cfg.input_height = cfg.input_width = 320;
  cfg.stem_channels = 64;
  cfg.n_res_blocks = 8;
  cfg.upscale = 4;
  cfg.coloru_channels = {16, 32, 64};
  return cfg;
}

ColorizerConfig ColorizerConfig::desk_scale() { return ColorizerConfig{}; }

void ColorizerConfig::validate(ColorizerKind kind) const {
  auto fail = [](const std::string& what) { throw Error("invalid colorizer config: " + what); };
  if (input_height == 0 || input_width == 0) fail("input size must be positive");
  if (kind == ColorizerKind::kColorU) {
    if (coloru_channels.size() != 3) fail("coloru_channels needs exactly 3 entries");
    for (auto c : coloru_channels) {
      if (c == 0) fail("coloru_channels entries must be positive");
    }
    if (input_height % 8 != 0 || input_width % 8 != 0) {
      fail("ColorU needs input size divisible by 8");
    }
    return;
  }
  if (stem_channels == 0) fail("stem_channels must be positive");
  if (input_height % 4 != 0 || input_width % 4 != 0) fail("input size must be divisible by 4");
  // conv(k7,s2,p3) halves an even size, the max-pool halves it again.
  const std::size_t stem_h = input_height / 4, stem_w = input_width / 4;
  if (upscale * stem_h != input_height || upscale * stem_w != input_width) {
    fail("upscale " + std::to_string(upscale) + " does not map the " + std::to_string(stem_h) +
         "x" + std::to_string(stem_w) + " stem back to the input size");
  }
}

namespace {

Sequential build_residual_colorizer(ColorizerKind kind, const ColorizerConfig& cfg, nn::Rng& rng) {
  Sequential net;
  auto stem = std::make_unique<Sequential>();
  stem->add("conv", std::make_unique<Conv2d>(Conv2dSpec{1, cfg.stem_channels, 7, 2, 3, false}, rng));
  stem->add("bn", std::make_unique<BatchNorm2d>(cfg.stem_channels));
  stem->add("relu", std::make_unique<nn::ReLU>());
  stem->add("pool", std::make_unique<nn::MaxPool2d>(2, 2));
  net.add("stem", std::move(stem));
  for (std::size_t i = 0; i < cfg.n_res_blocks; ++i) {
    net.add("res" + std::to_string(i), std::make_unique<nn::ResidualBlock>(cfg.stem_channels, rng));
  }
  const std::size_t r = cfg.upscale;
  if (kind == ColorizerKind::kDeconv) {
    net.add("up", std::make_unique<ConvTranspose2d>(Conv2dSpec{cfg.stem_channels, 3, r, r, 0, true},
                                                    rng));
  } else {
    auto up = std::make_unique<Sequential>();
    up->add("conv", std::make_unique<Conv2d>(Conv2dSpec{cfg.stem_channels, 3 * r * r, 3, 1, 1, true},
                                             rng));
    up->add("shuffle", std::make_unique<nn::PixelShuffle>(r));
    net.add("up", std::move(up));
  }
  return net;
}

// conv3x3 -> lrelu -> conv4x4/2 -> lrelu -> BN
std::unique_ptr<Sequential> color_down(std::size_t in, std::size_t out, nn::Rng& rng) {
  auto b = std::make_unique<Sequential>();
  b->add("conv1", std::make_unique<Conv2d>(Conv2dSpec{in, out, 3, 1, 1, true}, rng));
  b->add("act1", std::make_unique<LeakyReLU>());
  b->add("conv2", std::make_unique<Conv2d>(Conv2dSpec{out, out, 4, 2, 1, true}, rng));
  b->add("act2", std::make_unique<LeakyReLU>());
  b->add("bn", std::make_unique<BatchNorm2d>(out));
  return b;
}

// tconv4x4/2 -> lrelu -> conv3x3 -> lrelu -> conv3x3 [-> lrelu -> BN]
std::unique_ptr<Sequential> color_up(std::size_t in, std::size_t out, std::size_t final_out,
                                     bool is_output, nn::Rng& rng) {
  auto b = std::make_unique<Sequential>();
  b->add("tconv", std::make_unique<ConvTranspose2d>(Conv2dSpec{in, out, 4, 2, 1, true}, rng));
  b->add("act1", std::make_unique<LeakyReLU>());
  b->add("conv1", std::make_unique<Conv2d>(Conv2dSpec{out, out, 3, 1, 1, true}, rng));
  b->add("act2", std::make_unique<LeakyReLU>());
  b->add("conv2", std::make_unique<Conv2d>(Conv2dSpec{out, final_out, 3, 1, 1, true}, rng));
  if (!is_output) {
    b->add("act3", std::make_unique<LeakyReLU>());
    b->add("bn", std::make_unique<BatchNorm2d>(final_out));
  }
  return b;
}

Sequential build_coloru(const ColorizerConfig& cfg, nn::Rng& rng) {
  const auto& ch = cfg.coloru_channels;
  Sequential net;
  net.add("down1", color_down(1, ch[0], rng));
  net.add("down2", color_down(ch[0], ch[1], rng));
  net.add("down3", color_down(ch[1], ch[2], rng));
  net.add("up1", color_up(ch[2], ch[1], ch[1], false, rng));
  net.add("up2", color_up(ch[1], ch[0], ch[0], false, rng));
  net.add("out", color_up(ch[0], ch[0], 3, true, rng));
  return net;
}

}  // namespace

std::unique_ptr<Colorizer> build_colorizer(ColorizerKind kind, const ColorizerConfig& cfg,
                                           nn::Rng& rng) {
  cfg.validate(kind);
  Sequential net = kind == ColorizerKind::kColorU ? build_coloru(cfg, rng)
                                                  : build_residual_colorizer(kind, cfg, rng);
  return std::make_unique<Colorizer>(kind, cfg, std::move(net));
}

Variable Colorizer::forward(const Variable& gray) {
  const Shape& s = gray.shape();
  if (s.size() != 4 || s[1] != 1) {
    throw ShapeError("colorizer expects a [N,1,H,W] grayscale batch, got " + to_string(s));
  }
  if (s[2] != cfg_.input_height || s[3] != cfg_.input_width) {
    throw ShapeError("colorizer configured for " + std::to_string(cfg_.input_height) + "x" +
                     std::to_string(cfg_.input_width) + " input, got " + to_string(s));
  }
  return net_.forward(gray);
}

Variable colorize(Colorizer& colorizer, const Variable& gray) { return colorizer.forward(gray); }

}  // namespace colorbridge
