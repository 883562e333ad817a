#include <cmath>
#include <limits>

#include "doctest.h"
#include "kdseg/tensor.hpp"
#include "support.hpp"

using namespace kdseg;
using kdseg::test::random_tensor;

namespace {

// Direct six-loop cross-correlation, accumulated in double.
Tensor naive_conv(const Tensor& x, const Tensor& k, const Tensor& bias, int stride, int pad) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = k.dim(0), KH = k.dim(2), KW = k.dim(3);
  const int OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
  Tensor y({B, O, OH, OW});
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = bias[o];
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < KH; ++ky)
              for (int kx = 0; kx < KW; ++kx) {
                const int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += static_cast<double>(x.at(b, c, iy, ix)) * k.at(o, c, ky, kx);
              }
          y.at(b, o, oy, ox) = static_cast<Scalar>(acc);
        }
  return y;
}

struct ConvCase { int b, cin, h, w, cout, k, stride, pad; };

const ConvCase kConvCases[] = {
    {1, 1, 5, 5, 1, 3, 1, 1}, {2, 3, 8, 8, 4, 3, 2, 1}, {1, 2, 7, 6, 3, 1, 1, 0},
    {2, 3, 9, 9, 5, 5, 2, 2}, {1, 4, 6, 6, 2, 3, 1, 0}, {1, 3, 32, 32, 16, 3, 2, 1},
    {1, 16, 4, 4, 16, 3, 1, 1}, {3, 2, 5, 11, 7, 3, 3, 1},
};

}  // namespace

TEST_CASE("conv2d of ones with a ones kernel sums the 3x3 window") {
  Tape tape;
  Var y = conv2d(tape.constant(Tensor({1, 1, 3, 3}, 1)), tape.constant(Tensor({1, 1, 3, 3}, 1)),
                 tape.constant(Tensor({1}, 0)), 1, 1);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.value().at(0, 0, 1, 1) == 9.0f);
  CHECK(y.value().at(0, 0, 0, 0) == 4.0f);
}

TEST_CASE("conv2d with a zero kernel outputs the bias") {
  Rng rng(1);
  Tape tape;
  const Tensor bias({2}, std::vector<Scalar>{0.5f, -3.0f});
  Var y = conv2d(tape.constant(random_tensor({2, 3, 6, 6}, rng)), tape.constant(Tensor({2, 3, 3, 3})),
                 tape.constant(bias), 2, 1);
  for (int b = 0; b < 2; ++b)
    for (int o = 0; o < 2; ++o)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(y.value().at(b, o, i, j) == bias[o]);
}

TEST_CASE("conv2d matches the naive loop oracle") {
  Rng rng(7);
  for (const ConvCase& c : kConvCases) {
    const Tensor x = random_tensor({c.b, c.cin, c.h, c.w}, rng);
    const Tensor k = random_tensor({c.cout, c.cin, c.k, c.k}, rng);
    const Tensor bias = random_tensor({c.cout}, rng);
    Tape tape;
    Var y = conv2d(tape.constant_ref(x), tape.constant_ref(k), tape.constant_ref(bias), c.stride, c.pad);
    const Tensor ref = naive_conv(x, k, bias, c.stride, c.pad);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      REQUIRE(y.value()[i] == doctest::Approx(ref[i]).epsilon(1e-5).scale(1.0));
    }
  }
}

TEST_CASE("conv2d backward matches loop-derived gradients") {
  Rng rng(8);
  for (const ConvCase& c : kConvCases) {
    Tensor x = random_tensor({c.b, c.cin, c.h, c.w}, rng);
    Tensor k = random_tensor({c.cout, c.cin, c.k, c.k}, rng);
    Tensor bias = random_tensor({c.cout}, rng);
    for (Tensor* t : {&x, &k, &bias}) t->set_requires_grad(true);
    Tape tape;
    Var y = conv2d(tape.leaf(x), tape.leaf(k), tape.leaf(bias), c.stride, c.pad);
    const Tensor r = random_tensor(y.shape(), rng);
    tape.backward(sum(mul(y, tape.constant_ref(r))));

    const int OH = y.shape()[2], OW = y.shape()[3];
    std::vector<double> gx(x.size()), gk(k.size()), gb(bias.size());
    for (int b = 0; b < c.b; ++b)
      for (int o = 0; o < c.cout; ++o)
        for (int oy = 0; oy < OH; ++oy)
          for (int ox = 0; ox < OW; ++ox) {
            const double g = r.at(b, o, oy, ox);
            gb[o] += g;
            for (int ci = 0; ci < c.cin; ++ci)
              for (int ky = 0; ky < c.k; ++ky)
                for (int kx = 0; kx < c.k; ++kx) {
                  const int iy = oy * c.stride + ky - c.pad, ix = ox * c.stride + kx - c.pad;
                  if (iy < 0 || iy >= c.h || ix < 0 || ix >= c.w) continue;
                  const std::size_t xi = ((static_cast<std::size_t>(b) * c.cin + ci) * c.h + iy) * c.w + ix;
                  const std::size_t ki = ((static_cast<std::size_t>(o) * c.cin + ci) * c.k + ky) * c.k + kx;
                  gx[xi] += g * k[ki];
                  gk[ki] += g * x[xi];
                }
          }
    for (std::size_t i = 0; i < gx.size(); ++i) REQUIRE(x.grad()[i] == doctest::Approx(gx[i]).epsilon(1e-4).scale(1.0));
    for (std::size_t i = 0; i < gk.size(); ++i) REQUIRE(k.grad()[i] == doctest::Approx(gk[i]).epsilon(1e-4).scale(1.0));
    for (std::size_t i = 0; i < gb.size(); ++i) REQUIRE(bias.grad()[i] == doctest::Approx(gb[i]).epsilon(1e-4).scale(1.0));
  }
}

TEST_CASE("conv2d rejects bad shapes") {
  Tape tape;
  Var x = tape.constant(Tensor({1, 2, 5, 5}));
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({1, 3, 3, 3})), tape.constant(Tensor({1})), 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({1, 2, 3, 3})), tape.constant(Tensor({2})), 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({1, 2, 2, 2})), tape.constant(Tensor({1})), 1, 0), ConfigError);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({1, 2, 7, 7})), tape.constant(Tensor({1})), 1, 0), ConfigError);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({1, 2, 3, 3})), tape.constant(Tensor({1})), 0, 1), ConfigError);
}

TEST_CASE("relu clamps negatives") {
  Tape tape;
  Var y = relu(tape.constant(Tensor({3}, std::vector<Scalar>{-1, 0, 2})));
  CHECK(std::vector<Scalar>(y.value().data().begin(), y.value().data().end()) == std::vector<Scalar>{0, 0, 2});
  Rng rng(2);
  const Tensor pos = random_tensor({2, 3, 4, 4}, rng, 0.01, 5);
  Var z = relu(tape.constant_ref(pos));
  for (std::size_t i = 0; i < pos.size(); ++i) CHECK(z.value()[i] == pos[i]);
}

TEST_CASE("softmax over channels") {
  Tape tape;
  Var p = softmax_channels(tape.constant(Tensor({1, 2, 1, 1}, 0)));
  CHECK(p.value()[0] == doctest::Approx(0.5));
  CHECK(p.value()[1] == doctest::Approx(0.5));

  Rng rng(3);
  Tensor l = random_tensor({2, 5, 4, 3}, rng, -8, 8);
  Tensor shifted = l;
  for (int b = 0; b < 2; ++b)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 3; ++x) {
        const Scalar s = static_cast<Scalar>(rng.uniform(-20, 20));
        for (int c = 0; c < 5; ++c) shifted.at(b, c, y, x) += s;
      }
  Var a = softmax_channels(tape.constant_ref(l));
  Var b = softmax_channels(tape.constant_ref(shifted));
  for (std::size_t i = 0; i < l.size(); ++i) CHECK(a.value()[i] == doctest::Approx(b.value()[i]).epsilon(1e-5));

  for (int bb = 0; bb < 2; ++bb)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 3; ++x) {
        double total = 0;
        for (int c = 0; c < 5; ++c) {
          const Scalar v = a.value().at(bb, c, y, x);
          CHECK(v >= 0);
          CHECK(v <= 1);
          total += v;
        }
        CHECK(std::abs(total - 1) < 1e-6);
      }
}

TEST_CASE("softmax rejects non-finite logits") {
  Tape tape;
  Tensor l({1, 2, 1, 2}, 0);
  l[3] = std::numeric_limits<Scalar>::quiet_NaN();
  CHECK_THROWS_AS(softmax_channels(tape.constant(l)), NumericError);
  l[3] = std::numeric_limits<Scalar>::infinity();
  CHECK_THROWS_AS(softmax_channels(tape.constant(l)), NumericError);
}

TEST_CASE("nearest upsampling doubles each side") {
  Tape tape;
  Var y = upsample_nearest2x(tape.constant(Tensor({1, 1, 1, 1}, 3.5f)));
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  for (int i = 0; i < 4; ++i) CHECK(y.value()[i] == 3.5f);

  Rng rng(4);
  const Tensor x = random_tensor({2, 3, 3, 5}, rng);
  Var u = upsample_nearest2x(tape.constant_ref(x));
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 10; ++j) CHECK(u.value().at(b, c, i, j) == x.at(b, c, i / 2, j / 2));
}

TEST_CASE("backward of simple reductions") {
  Rng rng(5);
  Tensor x = random_tensor({2, 3, 4, 5}, rng);
  x.set_requires_grad(true);
  {
    Tape tape;
    tape.backward(sum(tape.leaf(x)));
    for (Scalar g : x.grad()) CHECK(g == 1.0f);
  }
  x.zero_grad();
  {
    Tape tape;
    Var v = tape.leaf(x);
    tape.backward(sum(mul(v, v)));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2 * x[i]));
  }
}

TEST_CASE("gradients accumulate across tapes and stop at constants") {
  Tensor x({3}, 1.0f);
  x.set_requires_grad(true);
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(sum(scale(tape.leaf(x), 3)));
  }
  for (Scalar g : x.grad()) CHECK(g == 6.0f);

  Tensor c({3}, 2.0f);
  Tape tape;
  Var y = add(tape.constant_ref(c), tape.constant_ref(c));
  CHECK_FALSE(y.requires_grad());
  tape.backward(sum(y));
  CHECK_FALSE(c.has_grad());
}

TEST_CASE("tape misuse is a usage error") {
  Tensor x({2, 2}, 1.0f);
  x.set_requires_grad(true);
  {
    Tape tape;
    Var v = tape.leaf(x);
    CHECK_THROWS_AS(tape.backward(v), UsageError);
  }
  {
    Tape tape;
    Var l = sum(tape.leaf(x));
    tape.backward(l);
    CHECK_THROWS_AS(tape.backward(l), UsageError);
  }
  {
    Tape a, b;
    CHECK_THROWS_AS(add(a.leaf(x), b.leaf(x)), UsageError);
  }
  {
    Tape tape;
    CHECK_THROWS_AS(add(tape.constant(Tensor({2})), tape.constant(Tensor({3}))), DimensionError);
  }
}

TEST_CASE("forward results are bit-identical across repeated runs") {
  Rng rng(6);
  const Tensor x = random_tensor({2, 3, 16, 16}, rng);
  const Tensor k = random_tensor({8, 3, 3, 3}, rng);
  const Tensor bias = random_tensor({8}, rng);
  auto run = [&] {
    Tape tape;
    Var y = softmax_channels(relu(conv2d(tape.constant_ref(x), tape.constant_ref(k), tape.constant_ref(bias), 2, 1)));
    return std::vector<Scalar>(y.value().data().begin(), y.value().data().end());
  };
  CHECK(run() == run());
}

TEST_CASE("all_finite detects NaN and infinity anywhere") {
  for (std::size_t n : {1u, 7u, 8u, 9u, 33u}) {
    Tensor t({static_cast<int>(n)}, 1.0f);
    CHECK(t.all_finite());
    for (std::size_t i = 0; i < n; ++i) {
      Tensor u = t;
      u[i] = std::numeric_limits<Scalar>::quiet_NaN();
      CHECK_FALSE(u.all_finite());
      u[i] = -std::numeric_limits<Scalar>::infinity();
      CHECK_FALSE(u.all_finite());
    }
  }
}
