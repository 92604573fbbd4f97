#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "colorbridge/layers.hpp"
#include "colorbridge/rng.hpp"

using namespace colorbridge;
using nn::Rng;

namespace {

Tensor randn(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = Scalar(standard_normal(rng));
  return t;
}

Variable cst(const Tensor& t) { return Variable::constant(t); }

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

// Direct cross-correlation, independent of the library's im2col path.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor* b, std::size_t stride,
                  std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor out({n, o, ho, wo});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) {
          double acc = b ? (*b)[oc] : 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) {
                const long sy = long(y * stride + i) - long(pad);
                const long sx = long(xx * stride + j) - long(pad);
                if (sy < 0 || sx < 0 || sy >= long(h) || sx >= long(wd)) continue;
                acc += double(x.at(in, ic, sy, sx)) * w.at(oc, ic, i, j);
              }
          out.at(in, oc, y, xx) = Scalar(acc);
        }
  return out;
}

}  // namespace

TEST_SUITE("conv2d") {
  TEST_CASE("stem shape chain at 320x320") {
    Rng rng(1);
    nn::Conv2d conv({1, 64, 7, 2, 3, false}, rng);
    const Variable y = conv.forward(cst(Tensor({1, 1, 320, 320}, 0.5f)));
    CHECK(y.shape() == Shape{1, 64, 160, 160});
    CHECK(ops::max_pool2d(y, 2, 2).shape() == Shape{1, 64, 80, 80});
  }

  TEST_CASE("1x1 kernel is a scalar multiply") {
    const Variable y = ops::conv2d(cst(Tensor({1, 1, 1, 1}, 3)), cst(Tensor({1, 1, 1, 1}, 2)),
                                   cst(Tensor({1}, 0)), {1, 1, 0});
    CHECK(y.value()[0] == 6);
  }

  TEST_CASE("all-ones 3x3 sums to 9") {
    const Variable y = ops::conv2d(cst(Tensor({1, 1, 3, 3}, 1)), cst(Tensor({1, 1, 3, 3}, 1)),
                                   Variable(), {3, 1, 0});
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.value()[0] == 9);
  }

  TEST_CASE("output size follows floor((H + 2p - k)/s) + 1") {
    Rng rng(2);
    for (std::size_t h : {5, 6, 7})
      for (std::size_t k : {1, 2, 3})
        for (std::size_t s : {1, 2, 3})
          for (std::size_t p : {0, 1}) {
            nn::Conv2dSpec spec{2, 3, k, s, p, true};
            nn::Conv2d conv(spec, rng);
            const Variable y = conv.forward(cst(Tensor({1, 2, h, h + 1})));
            CHECK(y.shape() == Shape{1, 3, spec.output_size(h), spec.output_size(h + 1)});
            CHECK(spec.output_size(h) == (h + 2 * p - k) / s + 1);
          }
  }

  TEST_CASE("cross-correlation matches a direct loop") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t s = 1 + trial % 2, p = trial % 3 == 0 ? 0 : 1, k = 1 + trial % 3;
      const Tensor x = randn({2, 3, 5, 6}, rng), w = randn({4, 3, k, k}, rng), b = randn({4}, rng);
      const Tensor got = ops::conv2d(cst(x), cst(w), cst(b), {k, s, p}).value();
      const Tensor want = naive_conv(x, w, &b, s, p);
      REQUIRE(got.shape() == want.shape());
      for (std::size_t i = 0; i < got.numel(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-4));
    }
  }

  TEST_CASE("channel mismatch names expected and actual") {
    Rng rng(4);
    nn::Conv2d conv({3, 2, 3, 1, 1, true}, rng);
    const std::string msg = error_of([&] { conv.forward(cst(Tensor({1, 2, 4, 4}))); });
    CHECK(msg.find("expected 3") != std::string::npos);
    CHECK(msg.find("[1,2,4,4]") != std::string::npos);
  }

  TEST_CASE("kernel larger than padded input is rejected") {
    CHECK_THROWS_AS(ops::conv2d(cst(Tensor({1, 1, 2, 2})), cst(Tensor({1, 1, 3, 3})), Variable(), {3, 1, 0}),
                    ShapeError);
  }
}

TEST_SUITE("conv_transpose2d") {
  TEST_CASE("4x upsampling to 320x320") {
    Rng rng(5);
    nn::ConvTranspose2d up({3, 3, 4, 4, 0, true}, rng);
    CHECK(up.forward(cst(Tensor({1, 3, 80, 80}))).shape() == Shape{1, 3, 320, 320});
  }

  TEST_CASE("1x1 unit kernel is the identity") {
    Rng rng(6);
    const Tensor x = randn({2, 1, 3, 4}, rng);
    CHECK(ops::conv_transpose2d(cst(x), cst(Tensor({1, 1, 1, 1}, 1)), Variable(), {1, 1, 0}).value() == x);
  }

  TEST_CASE("adjoint of conv2d: <conv(x), y> = <x, conv_t(y)>") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t k = 1 + trial % 4, s = 1 + trial % 2, p = k >= 3 ? trial % 2 : 0;
      const std::size_t c = 1 + trial % 3, o = 1 + (trial / 3) % 3;
      const Tensor w = randn({o, c, k, k}, rng);
      const Tensor x = randn({2, c, 4, 4}, rng);
      const Tensor cx = ops::conv2d(cst(x), cst(w), Variable(), {k, s, p}).value();
      const Tensor y = randn(cx.shape(), rng);
      // conv_t weights are laid out [in=o, out=c, k, k]: the same tensor.
      const Tensor ty = ops::conv_transpose2d(cst(y), cst(w.reshaped({o, c, k, k})), Variable(), {k, s, p}).value();
      if (ty.shape() != x.shape()) continue;  // lossy stride: sizes differ
      const double lhs = dot(cx, y), rhs = dot(x, ty);
      CHECK(std::abs(lhs - rhs) <= 1e-5 * std::max(1.0, std::abs(lhs)));
    }
  }

  TEST_CASE("output size (H-1)*s - 2p + k") {
    Rng rng(8);
    nn::ConvTranspose2d up({2, 1, 4, 2, 1, true}, rng);
    CHECK(up.forward(cst(Tensor({1, 2, 5, 3}))).shape() == Shape{1, 1, 10, 6});
    CHECK_THROWS_AS(up.forward(cst(Tensor({1, 3, 5, 3}))), ShapeError);
  }
}

TEST_SUITE("pixel_shuffle") {
  TEST_CASE("shape rule") {
    CHECK(ops::pixel_shuffle(cst(Tensor({1, 4, 2, 2})), 2).shape() == Shape{1, 1, 4, 4});
    CHECK(ops::pixel_shuffle(cst(Tensor({2, 48, 8, 8})), 4).shape() == Shape{2, 3, 32, 32});
  }

  TEST_CASE("channels of one pixel become a 2x2 block") {
    Tensor x({1, 4, 1, 1}, {1, 2, 3, 4});
    const Tensor y = ops::pixel_shuffle(cst(x), 2).value();
    CHECK(y == Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  }

  TEST_CASE("index map out[n,c,h*r+i,w*r+j] = in[n,c*r*r+i*r+j,h,w]") {
    Rng rng(9);
    const std::size_t r = 3, c = 2;
    const Tensor x = randn({2, c * r * r, 2, 3}, rng);
    const Tensor y = ops::pixel_shuffle(cst(x), r).value();
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t h = 0; h < 2; ++h)
          for (std::size_t w = 0; w < 3; ++w)
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < r; ++j)
                CHECK(y.at(n, ch, h * r + i, w * r + j) == x.at(n, ch * r * r + i * r + j, h, w));
  }

  TEST_CASE("bijection: multiset preserved, inverse restores bitwise") {
    Rng rng(10);
    for (std::size_t r : {1, 2, 4}) {
      const Tensor x = randn({2, 3 * r * r, 3, 2}, rng);
      const Tensor y = ops::pixel_shuffle(cst(x), r).value();
      std::vector<Scalar> a(x.data().begin(), x.data().end()), b(y.data().begin(), y.data().end());
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      CHECK(a == b);
      CHECK(ops::pixel_unshuffle(cst(y), r).value() == x);
    }
  }

  TEST_CASE("indivisible channels are rejected") {
    CHECK_THROWS_AS(ops::pixel_shuffle(cst(Tensor({1, 6, 2, 2})), 2), ShapeError);
  }
}

TEST_SUITE("batch_norm2d") {
  TEST_CASE("train mode normalizes {1,3} to {-1,+1}") {
    nn::BatchNorm2d bn(1, Scalar(0.1), Scalar(1e-12));
    const Tensor y = bn.forward(cst(Tensor({2, 1, 1, 1}, {1, 3}))).value();
    CHECK(y[0] == doctest::Approx(-1));
    CHECK(y[1] == doctest::Approx(1));
  }

  TEST_CASE("running statistics follow the momentum update") {
    nn::BatchNorm2d bn(1);
    bn.forward(cst(Tensor({2, 1, 1, 1}, {1, 3})));
    CHECK(bn.running_mean()[0] == doctest::Approx(0.1 * 2));
    // unbiased batch variance 2
    CHECK(bn.running_var()[0] == doctest::Approx(0.9 + 0.1 * 2));
  }

  TEST_CASE("eval mode with unit statistics is the identity") {
    Rng rng(11);
    nn::BatchNorm2d bn(3, nn::kBatchNormMomentum, Scalar(0));
    bn.set_training(false);
    const Tensor x = randn({2, 3, 2, 2}, rng);
    const Tensor y = bn.forward(cst(x)).value();
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]));
  }

  TEST_CASE("eval output does not depend on batch composition") {
    Rng rng(12);
    nn::BatchNorm2d bn(2);
    for (int i = 0; i < 3; ++i) bn.forward(cst(randn({4, 2, 3, 3}, rng)));
    bn.set_training(false);
    const Tensor a = randn({1, 2, 3, 3}, rng), b = randn({3, 2, 3, 3}, rng);
    Tensor ab({4, 2, 3, 3});
    std::copy(a.data().begin(), a.data().end(), ab.data().begin());
    std::copy(b.data().begin(), b.data().end(), ab.data().begin() + a.numel());
    const Tensor alone = bn.forward(cst(a)).value();
    const Tensor joint = bn.forward(cst(ab)).value();
    for (std::size_t i = 0; i < alone.numel(); ++i) CHECK(alone[i] == joint[i]);
  }

  TEST_CASE("running variance stays non-negative") {
    Rng rng(13);
    nn::BatchNorm2d bn(2);
    for (int i = 0; i < 10; ++i) bn.forward(cst(randn({2, 2, 2, 2}, rng)));
    for (auto v : bn.running_var().data()) CHECK(v >= 0);
  }

  TEST_CASE("a single element per channel is a degenerate batch") {
    nn::BatchNorm2d bn(1);
    const std::string msg = error_of([&] { bn.forward(cst(Tensor({1, 1, 1, 1}, 2))); });
    CHECK(msg.find("degenerate batch") != std::string::npos);
    bn.set_training(false);
    CHECK_NOTHROW(bn.forward(cst(Tensor({1, 1, 1, 1}, 2))));
  }
}

TEST_SUITE("activations and pooling") {
  TEST_CASE("leaky_relu examples") {
    const Tensor y = ops::leaky_relu(cst(Tensor({3}, {2, -2, 0})), Scalar(0.01)).value();
    CHECK(y[0] == 2);
    CHECK(y[1] == doctest::Approx(-0.02));
    CHECK(y[2] == 0);
    CHECK(ops::relu(cst(Tensor({2}, {-1, 1}))).value() == Tensor({2}, {0, 1}));
  }

  TEST_CASE("max_pool2d") {
    CHECK(ops::max_pool2d(cst(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})), 2, 2).value()[0] == 4);
    CHECK_THROWS_AS(ops::max_pool2d(cst(Tensor({1, 1, 2, 2})), 3, 1), ShapeError);
  }

  TEST_CASE("global_avg_pool of a constant") {
    const Tensor y = ops::global_avg_pool(cst(Tensor({2, 3, 4, 5}, 1.25f))).value();
    CHECK(y.shape() == Shape{2, 3});
    for (auto v : y.data()) CHECK(v == doctest::Approx(1.25));
  }

  TEST_CASE("linear with identity weight is the identity") {
    Rng rng(14);
    nn::Linear fc(3, 3, rng);
    fc.weight().mutable_value() = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    fc.bias().mutable_value().fill(0);
    const Tensor x = randn({4, 3}, rng);
    CHECK(fc.forward(cst(x)).value() == x);
    CHECK_THROWS_AS(fc.forward(cst(Tensor({4, 2}))), ShapeError);
  }
}

TEST_SUITE("residual_block") {
  TEST_CASE("zero branch weights give relu(input)") {
    Rng rng(15);
    nn::ResidualBlock block(4, rng);
    for (auto& p : nn::parameters(block)) {
      if (p.name.find("conv") != std::string::npos) p.var.mutable_value().fill(0);
    }
    const Tensor x = randn({2, 4, 3, 3}, rng);
    const Tensor y = block.forward(cst(x)).value();
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == std::max(x[i], Scalar(0)));
  }

  TEST_CASE("shape is preserved at full scale") {
    Rng rng(16);
    nn::ResidualBlock block(64, rng);
    CHECK(block.forward(cst(randn({1, 64, 80, 80}, rng))).shape() == Shape{1, 64, 80, 80});
  }

  TEST_CASE("shape preserved over random inputs") {
    Rng rng(17);
    for (std::size_t c : {1, 2, 3})
      for (std::size_t h : {2, 3, 5}) {
        nn::ResidualBlock block(c, rng);
        CHECK(block.forward(cst(randn({2, c, h, h + 1}, rng))).shape() == Shape{2, c, h, h + 1});
      }
  }

  TEST_CASE("channel mismatch") {
    Rng rng(18);
    nn::ResidualBlock block(2, rng);
    CHECK_THROWS_AS(block.forward(cst(Tensor({1, 3, 4, 4}))), ShapeError);
  }

  TEST_CASE("projection shortcut when stride or width changes") {
    Rng rng(19);
    nn::ResidualBlock block(2, 4, 2, rng);
    CHECK(block.forward(cst(randn({2, 2, 4, 4}, rng))).shape() == Shape{2, 4, 2, 2});
    bool has_shortcut = false;
    for (auto& p : nn::parameters(block)) has_shortcut |= p.name.rfind("shortcut.", 0) == 0;
    CHECK(has_shortcut);
  }
}

TEST_SUITE("modules") {
  TEST_CASE("parameter naming and counting") {
    Rng rng(20);
    nn::Sequential seq;
    seq.add("conv", std::make_unique<nn::Conv2d>(nn::Conv2dSpec{1, 2, 3, 1, 1, true}, rng));
    seq.add("bn", std::make_unique<nn::BatchNorm2d>(2));
    seq.add("act", std::make_unique<nn::LeakyReLU>());
    std::vector<std::string> names;
    for (auto& p : nn::parameters(seq)) names.push_back(p.name);
    CHECK(names == std::vector<std::string>{"conv.weight", "conv.bias", "bn.weight", "bn.bias"});
    CHECK(nn::count_params(seq, false) == 18 + 2 + 2 + 2);
    CHECK(nn::buffers(seq).size() == 2);
    nn::set_trainable(seq, false);
    CHECK(nn::count_params(seq, true) == 0);
  }

  TEST_CASE("sequential reports the first layer with a non-finite activation") {
    Rng rng(21);
    nn::Sequential seq;
    auto& conv = seq.add("first", std::make_unique<nn::Conv2d>(nn::Conv2dSpec{1, 1, 1, 1, 0, false}, rng));
    seq.add("second", std::make_unique<nn::ReLU>());
    conv.weight().mutable_value().fill(std::numeric_limits<Scalar>::infinity());
    const std::string msg = error_of([&] { seq.forward(cst(Tensor({1, 1, 2, 2}, 1))); });
    CHECK(msg.find("first") != std::string::npos);
  }
}

TEST_SUITE("determinism") {
  TEST_CASE("gradients do not depend on heap layout") {
    Rng rng(40);
    nn::Conv2d conv({3, 8, 3, 1, 1, true}, rng);
    nn::Linear fc(24, 5, rng);
    const Tensor x = randn({4, 3, 6, 6}, rng), z = randn({7, 24}, rng);
    std::vector<Tensor> first;
    for (int trial = 0; trial < 12; ++trial) {
      // Shift subsequent allocations by a varying amount.
      std::vector<std::vector<char>> pad;
      for (int i = 0; i < trial; ++i) pad.emplace_back(std::size_t(4 + 12 * i));
      conv.weight().zero_grad();
      conv.bias().zero_grad();
      fc.weight().zero_grad();
      fc.bias().zero_grad();
      Tape tape;
      Variable loss;
      {
        TapeScope scope(tape);
        loss = ops::add(ops::mean(ops::mul(conv.forward(cst(x)), conv.forward(cst(x)))),
                        ops::mean(ops::mul(fc.forward(cst(z)), fc.forward(cst(z)))));
      }
      tape.backward(loss);
      std::vector<Tensor> grads = {conv.weight().grad(), conv.bias().grad(), fc.weight().grad(),
                                   fc.bias().grad()};
      if (first.empty()) first = grads;
      for (std::size_t i = 0; i < grads.size(); ++i) CHECK(grads[i] == first[i]);
    }
  }
}
