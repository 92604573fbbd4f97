#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "colorbridge/checkpoint.hpp"
#include "colorbridge/rng.hpp"

using namespace colorbridge;
using nn::Rng;
namespace fs = std::filesystem;

namespace {

Tensor randn(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = Scalar(standard_normal(rng));
  return t;
}

ModelDescriptor desc_of(FrontEndKind fe, std::size_t n_outputs = 4) {
  ModelDescriptor d;
  d.front_end = fe;
  d.n_outputs = n_outputs;
  return d;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("colorbridge_backbone_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string checkpoint_error_field(const std::string& bytes) {
  try {
    Checkpoint::parse(bytes);
  } catch (const CheckpointError& e) {
    return e.field();
  }
  return "";
}

// Back-propagates the mean logit.
void run_backward(ComposedModel& model, const Tensor& x) {
  Tape tape;
  Variable loss;
  {
    TapeScope scope(tape);
    loss = ops::mean(model.forward(Variable::constant(x)));
  }
  tape.backward(loss);
}

}  // namespace

TEST_SUITE("replicate_gray") {
  TEST_CASE("copies the gray channel three times") {
    const Tensor y = replicate_gray(Variable::constant(Tensor({1, 1, 1, 1}, 0.3f))).value();
    CHECK(y == Tensor({1, 3, 1, 1}, {0.3f, 0.3f, 0.3f}));
  }

  TEST_CASE("channels are pairwise bitwise equal") {
    Rng rng(1);
    const Tensor y = replicate_gray(Variable::constant(randn({2, 1, 5, 4}, rng))).value();
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t h = 0; h < 5; ++h)
        for (std::size_t w = 0; w < 4; ++w) {
          CHECK(y.at(n, 0, h, w) == y.at(n, 1, h, w));
          CHECK(y.at(n, 1, h, w) == y.at(n, 2, h, w));
        }
  }

  TEST_CASE("commutes with a shared normalization") {
    Rng rng(2);
    const Tensor x = randn({1, 1, 3, 3}, rng);
    const Tensor a = elementwise(ElementwiseOp::kDiv,
                                 elementwise(ElementwiseOp::kSub, replicate_gray(Variable::constant(x)).value(), Scalar(0.4)),
                                 Scalar(0.2));
    const Tensor xn = elementwise(ElementwiseOp::kDiv, elementwise(ElementwiseOp::kSub, x, Scalar(0.4)), Scalar(0.2));
    CHECK(a == replicate_gray(Variable::constant(xn)).value());
  }

  TEST_CASE("rejects multi-channel input") {
    CHECK_THROWS_AS(replicate_gray(Variable::constant(Tensor({1, 2, 2, 2}))), ShapeError);
  }
}

TEST_SUITE("compose") {
  TEST_CASE("forward shape [N, n_outputs]") {
    Rng rng(3);
    auto model = build_model(desc_of(FrontEndKind::kReplicate, 5), {}, rng);
    CHECK(model->forward(Variable::constant(randn({4, 1, 32, 32}, rng))).shape() == Shape{4, 5});
    auto colored = build_model(desc_of(FrontEndKind::kColorU, 5), {}, rng);
    CHECK(colored->forward(Variable::constant(randn({4, 1, 32, 32}, rng))).shape() == Shape{4, 5});
  }

  TEST_CASE("incompatible components are rejected") {
    Rng rng(4);
    EncoderConfig enc = EncoderConfig::desk_scale();
    enc.in_channels = 1;
    CHECK_THROWS_AS(compose(desc_of(FrontEndKind::kReplicate), std::make_unique<ChannelReplicate>(),
                            std::make_unique<Encoder>(enc, rng),
                            std::make_unique<ClassifierHead>(32, 4, rng), {}),
                    ShapeError);
    CHECK_THROWS_AS(compose(desc_of(FrontEndKind::kReplicate), std::make_unique<ChannelReplicate>(),
                            std::make_unique<Encoder>(EncoderConfig::desk_scale(), rng),
                            std::make_unique<ClassifierHead>(16, 4, rng), {}),
                    ShapeError);
    CHECK_THROWS_AS(compose(desc_of(FrontEndKind::kPixelShuffle), std::make_unique<ChannelReplicate>(),
                            std::make_unique<Encoder>(EncoderConfig::desk_scale(), rng),
                            std::make_unique<ClassifierHead>(32, 4, rng), {}),
                    Error);
  }

  TEST_CASE("strategy flag sets select exactly the trainable parameters") {
    Rng rng(5);
    struct Case {
      TrainableFlags flags;
      const char* trainable;  // component prefixes
    };
    for (const Case& c : {Case{{true, false, true}, "TC"}, Case{{true, true, true}, "TEC"},
                          Case{{false, false, true}, "C"}, Case{{false, true, true}, "EC"}}) {
      auto model = build_model(desc_of(FrontEndKind::kPixelShuffle), c.flags, rng);
      const std::string want = c.trainable;
      for (const auto& p : model->named_parameters()) {
        INFO(p.name);
        CHECK(p.var.trainable() == (want.find(p.name[0]) != std::string::npos));
      }
      std::size_t n = 0;
      for (const auto& p : model->named_parameters()) n += p.var.trainable();
      CHECK(model->trainable_parameters().size() == n);
    }
  }

  TEST_CASE("frozen encoder receives no gradient") {
    Rng rng(6);
    auto model = build_model(desc_of(FrontEndKind::kPixelShuffle), {true, false, true}, rng);
    model->set_training(true);
    run_backward(*model, randn({2, 1, 32, 32}, rng));
    bool t_moved = false;
    for (const auto& p : model->named_parameters()) {
      bool nonzero = false;
      for (auto g : p.var.grad().data()) nonzero |= g != 0;
      if (p.name[0] == 'E') CHECK_FALSE(nonzero);
      if (p.name[0] == 'T') t_moved |= nonzero;
    }
    CHECK(t_moved);
  }

  TEST_CASE("frozen components stay in evaluation mode") {
    Rng rng(7);
    auto model = build_model(desc_of(FrontEndKind::kPixelShuffle), {true, false, true}, rng);
    std::vector<Tensor> before;
    for (const auto& b : model->named_buffers()) before.push_back(b.var.value());
    model->set_training(true);
    CHECK(model->colorizer()->training());
    CHECK_FALSE(model->encoder().training());
    model->forward(Variable::constant(randn({2, 1, 32, 32}, rng)));
    const auto after = model->named_buffers();
    for (std::size_t i = 0; i < after.size(); ++i) {
      INFO(after[i].name);
      if (after[i].name[0] == 'E') CHECK(after[i].var.value() == before[i]);
      if (after[i].name[0] == 'T') CHECK_FALSE(after[i].var.value() == before[i]);
    }
  }

  TEST_CASE("eval-mode forward is deterministic") {
    Rng rng(8);
    auto model = build_model(desc_of(FrontEndKind::kDeconv), {}, rng);
    model->set_training(false);
    const Tensor x = randn({3, 1, 32, 32}, rng);
    CHECK(model->forward(Variable::constant(x)).value() == model->forward(Variable::constant(x)).value());
  }

  TEST_CASE("non-finite activations name the component and layer") {
    Rng rng(9);
    auto model = build_model(desc_of(FrontEndKind::kPixelShuffle), {}, rng);
    for (auto& p : model->named_parameters()) {
      if (p.name == "T.stem.conv.weight") p.var.mutable_value().fill(std::numeric_limits<Scalar>::quiet_NaN());
    }
    std::string msg;
    try {
      model->forward(Variable::constant(randn({2, 1, 32, 32}, rng)));
    } catch (const NumericError& e) {
      msg = e.what();
    }
    CHECK(msg.rfind("T:", 0) == 0);
    CHECK(msg.find("stem") != std::string::npos);
  }
}

TEST_SUITE("parameter budgets") {
  TEST_CASE("full-scale encoder has at least 1e7 parameters, desk-scale at most 1e6") {
    Rng rng(10);
    Encoder full(EncoderConfig::full_scale(), rng);
    Encoder desk(EncoderConfig::desk_scale(), rng);
    MESSAGE("full encoder ", nn::count_params(full, false), ", desk encoder ",
            nn::count_params(desk, false));
    CHECK(nn::count_params(full, false) >= 10'000'000);
    CHECK(nn::count_params(desk, false) <= 1'000'000);
  }

  TEST_CASE("desk encoder maps [N,3,32,32] to [N,32]") {
    Rng rng(11);
    Encoder enc(EncoderConfig::desk_scale(), rng);
    CHECK(enc.forward(Variable::constant(randn({2, 3, 32, 32}, rng))).shape() == Shape{2, 32});
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save and load are bitwise lossless") {
    Rng rng(12);
    const fs::path dir = temp_dir("roundtrip");
    for (auto fe : {FrontEndKind::kReplicate, FrontEndKind::kDeconv, FrontEndKind::kPixelShuffle,
                    FrontEndKind::kColorU, FrontEndKind::kIdentity}) {
      ModelDescriptor d = desc_of(fe, 3);
      auto model = build_model(d, {fe != FrontEndKind::kReplicate, false, true}, rng);
      model->set_training(true);
      model->forward(Variable::constant(randn({2, d.input_channels(), 32, 32}, rng)));  // move BN stats
      save_checkpoint(*model, dir / "m.clrb");
      const Checkpoint loaded = load_checkpoint(dir / "m.clrb");
      CHECK(loaded.flags() == model->flags());
      CHECK(loaded.descriptor().front_end == fe);
      CHECK(loaded.descriptor().n_outputs == 3);
      Rng other(99);
      auto rebuilt = model_from_checkpoint(loaded, other);
      const auto a = model->named_parameters(), b = rebuilt->named_parameters();
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(a[i].var.value() == b[i].var.value());
      }
      const auto ba = model->named_buffers(), bb = rebuilt->named_buffers();
      REQUIRE(ba.size() == bb.size());
      for (std::size_t i = 0; i < ba.size(); ++i) CHECK(ba[i].var.value() == bb[i].var.value());
      CHECK(rebuilt->flags() == model->flags());
    }
  }

  TEST_CASE("serialization is stable") {
    Rng rng(13);
    auto model = build_model(desc_of(FrontEndKind::kPixelShuffle), {}, rng);
    const std::string bytes = make_checkpoint(*model).serialize();
    CHECK(bytes.substr(0, 4) == "CLRB");
    CHECK(Checkpoint::parse(bytes).serialize() == bytes);
  }

  TEST_CASE("corruption is reported with the offending field") {
    Rng rng(14);
    auto model = build_model(desc_of(FrontEndKind::kReplicate), {}, rng);
    const std::string bytes = make_checkpoint(*model).serialize();
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK(checkpoint_error_field(bad) == "magic");
    bad = bytes;
    bad[4] = 9;
    CHECK(checkpoint_error_field(bad) == "version");
    CHECK(checkpoint_error_field(bytes.substr(0, 7)) == "count");
    CHECK(checkpoint_error_field(bytes.substr(0, bytes.size() - 3)).find(".data") != std::string::npos);
    CHECK(checkpoint_error_field(bytes + "x") == "trailing");
    CHECK(checkpoint_error_field(std::string("CL")) == "magic");
  }

  TEST_CASE("a missing file is an error") {
    CHECK_THROWS_AS(load_checkpoint(temp_dir("missing") / "none.clrb"), Error);
  }

  TEST_CASE("a T-only file restores the colorizer and leaves E and C alone") {
    Rng rng(15);
    const fs::path dir = temp_dir("partial");
    auto source = build_model(desc_of(FrontEndKind::kPixelShuffle), {}, rng);
    save_checkpoint(*source, dir / "t.clrb", {Component::kT});
    const Checkpoint ckpt = load_checkpoint(dir / "t.clrb");
    CHECK(ckpt.components() == std::set<Component>{Component::kT});
    for (const auto& e : ckpt.entries()) {
      CHECK((e.name.rfind("T.", 0) == 0 || e.name.rfind("meta.", 0) == 0));
    }

    auto target = build_model(desc_of(FrontEndKind::kPixelShuffle), {}, rng);
    std::vector<Tensor> before;
    for (const auto& p : target->named_parameters()) before.push_back(p.var.value());
    restore(*target, ckpt, {Component::kT});
    const auto src = source->named_parameters(), dst = target->named_parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i].name[0] == 'T') CHECK(dst[i].var.value() == src[i].var.value());
      else CHECK(dst[i].var.value() == before[i]);
    }
    CHECK_THROWS_AS(restore(*target, ckpt, {Component::kE}), CheckpointError);
  }

  TEST_CASE("shape mismatches are reported by name") {
    Rng rng(16);
    auto source = build_model(desc_of(FrontEndKind::kReplicate, 4), {}, rng);
    auto target = build_model(desc_of(FrontEndKind::kReplicate, 5), {}, rng);
    const Checkpoint ckpt = make_checkpoint(*source);
    try {
      restore(*target, ckpt, {Component::kC});
      FAIL("expected a CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(e.field().rfind("C.", 0) == 0);
    }
  }
}
