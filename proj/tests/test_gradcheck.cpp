#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "kdseg/losses.hpp"
#include "kdseg/models.hpp"
#include "loss_oracles.hpp"
#include "support.hpp"

using namespace kdseg;
using kdseg::test::check_gradients;
using kdseg::test::random_labels;
using kdseg::test::random_tensor;

static_assert(sizeof(Scalar) == 8, "gradient checks need the 64-bit build");

namespace {

constexpr double kTol = 1e-4;
constexpr int kSeeds = 5;

// Projects an op output onto a fixed random direction so every output
// element contributes to the checked scalar.
Var project(Var y, const Tensor& dir) { return sum(mul(y, y.tape().constant_ref(dir))); }

Tensor away_from_zero(Tensor t) {
  for (Scalar& v : t.data()) v = v >= 0 ? v + 0.1 : v - 0.1;
  return t;
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
  struct Case { int b, cin, h, w, cout, k, stride, pad; };
  const Case cases[] = {{1, 2, 5, 5, 3, 3, 1, 1}, {2, 3, 6, 6, 2, 3, 2, 1}, {1, 2, 7, 5, 2, 5, 1, 2},
                        {1, 3, 4, 4, 2, 1, 1, 0}};
  for (const Case& c : cases) {
    for (int seed = 1; seed <= kSeeds; ++seed) {
      Rng rng(seed);
      Tensor x = random_tensor({c.b, c.cin, c.h, c.w}, rng);
      Tensor k = random_tensor({c.cout, c.cin, c.k, c.k}, rng);
      Tensor bias = random_tensor({c.cout}, rng);
      for (Tensor* t : {&x, &k, &bias}) t->set_requires_grad(true);
      Tensor dir;
      auto loss = [&](bool bw) {
        Tape tape;
        Var y = conv2d(tape.leaf(x), tape.leaf(k), tape.leaf(bias), c.stride, c.pad);
        if (dir.size() == 0) dir = random_tensor(y.shape(), rng);
        Var l = project(y, dir);
        if (bw) tape.backward(l);
        return static_cast<double>(l.value()[0]);
      };
      const auto r = check_gradients({{"x", &x}, {"kernel", &k}, {"bias", &bias}}, loss);
      INFO("k=" << c.k << " stride=" << c.stride << " seed=" << seed << " worst at " << r.where);
      CHECK(r.worst < kTol);
    }
  }
}

TEST_CASE("elementwise and reshaping ops match finite differences") {
  for (int seed = 1; seed <= kSeeds; ++seed) {
    Rng rng(100 + seed);
    Tensor a = away_from_zero(random_tensor({2, 3, 3, 4}, rng));
    Tensor b = random_tensor({2, 3, 3, 4}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    const Tensor dir = random_tensor({2, 3, 3, 4}, rng);
    const Tensor dir_up = random_tensor({2, 3, 6, 8}, rng);

    auto run = [&](auto op, const Tensor& d) {
      return check_gradients({{"a", &a}, {"b", &b}}, [&](bool bw) {
        Tape tape;
        Var l = project(op(tape.leaf(a), tape.leaf(b)), d);
        if (bw) tape.backward(l);
        return static_cast<double>(l.value()[0]);
      });
    };
    INFO("seed " << seed);
    CHECK(run([](Var x, Var y) { return add(relu(x), y); }, dir).worst < kTol);
    CHECK(run([](Var x, Var y) { return mul(x, y); }, dir).worst < kTol);
    CHECK(run([](Var x, Var y) { return scale(add(x, y), Scalar(-2.5)); }, dir).worst < kTol);
    CHECK(run([](Var x, Var y) { return softmax_channels(mul(x, y)); }, dir).worst < kTol);
    CHECK(run([](Var x, Var y) { return upsample_nearest2x(add(x, y)); }, dir_up).worst < kTol);
  }
}

TEST_CASE("loss gradients with respect to student logits match finite differences") {
  const LossWeights w{4.0, 0.4, 0.5};
  for (int seed = 1; seed <= kSeeds; ++seed) {
    Rng rng(200 + seed);
    const int n = 4;
    Tensor ls = random_tensor({2, n, 5, 6}, rng, -2, 2);
    const Tensor lt = random_tensor({2, n, 5, 6}, rng, -2, 2);
    const LabelMap lab = random_labels(2, 5, 6, n, rng, 0.3);
    const LabelMap pseudo = random_labels(2, 5, 6, n, rng, 0.5);
    ls.set_requires_grad(true);

    auto run = [&](auto build) {
      return check_gradients({{"logits", &ls}}, [&](bool bw) {
        Tape tape;
        Var l = build(tape.leaf(ls), tape.constant_ref(lt));
        if (bw) tape.backward(l);
        return static_cast<double>(l.value()[0]);
      });
    };
    INFO("seed " << seed);
    CHECK(run([&](Var s, Var) { return segmentation_loss(s, lab); }).worst < kTol);
    CHECK(run([&](Var s, Var t) { return probability_loss(softmax_channels(s), softmax_channels(t)); }).worst < kTol);
    CHECK(run([&](Var s, Var t) { return consistency_loss(s, t); }).worst < kTol);
    CHECK(run([&](Var s, Var t) { return total_loss_labeled(s, t, lab, w).total; }).worst < kTol);
    CHECK(run([&](Var s, Var t) {
            Var a = total_loss_labeled(s, t, lab, w).total;
            Var b = total_loss_labeled(s, t, pseudo, w).total;
            return total_loss_joint(a, b, w.lambda);
          }).worst < kTol);
  }
}

TEST_CASE("network parameter gradients through the full objective match finite differences") {
  const NetworkConfig cfg{3, 1, 4, 1.0, 3};
  for (int seed = 1; seed <= kSeeds; ++seed) {
    SegNetwork student = build_network(cfg, seed);
    SegNetwork teacher = build_network(cfg, 1000 + seed, Role::kTeacher);
    teacher.freeze();
    Rng rng(300 + seed);
    const Tensor x = random_tensor({1, 3, 6, 6}, rng, 0, 1);
    const Tensor tl = teacher.infer(x);
    const LabelMap lab = random_labels(1, 6, 6, 3, rng, 0.2);

    std::vector<std::pair<std::string, Tensor*>> wrt;
    for (std::size_t i = 0; i < student.parameters().size(); ++i) {
      wrt.emplace_back(student.parameter_names()[i], &student.parameters()[i]);
    }
    const auto r = check_gradients(wrt, [&](bool bw) {
      Tape tape;
      Var l = student.forward(tape, tape.constant_ref(x));
      Var loss = total_loss_labeled(l, tape.constant_ref(tl), lab, LossWeights{}).total;
      if (bw) tape.backward(loss);
      return static_cast<double>(loss.value()[0]);
    });
    INFO("seed " << seed << " worst at " << r.where);
    CHECK(r.worst < kTol);
    for (const Tensor& p : teacher.parameters()) CHECK_FALSE(p.has_grad());
  }
}
