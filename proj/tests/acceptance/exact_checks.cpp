// Built with 64-bit scalars.

#include <chrono>
#include <cmath>
#include <sstream>

#include "criteria.hpp"
#include "gradcheck.hpp"
#include "kdseg/losses.hpp"
#include "kdseg/models.hpp"
#include "loss_oracles.hpp"
#include "support.hpp"

static_assert(sizeof(kdseg::Scalar) == 8, "exact checks need the 64-bit build");

namespace kdseg::acceptance {
namespace {

using test::random_labels;
using test::random_tensor;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double value(Var v) { return v.value()[0]; }

}  // namespace

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  // One encoder block and one decoder block around the context conv.
  const NetworkConfig cfg{4, 1, 4, 1.0, 3};
  const LossWeights w;
  const char* names[] = {"L_S", "L_p", "L_c", "labeled total"};
  double worst = 0;
  std::string where;
  std::size_t checked = 0, refined = 0;
  for (int seed = 1; seed <= 5; ++seed) {
    SegNetwork student = build_network(cfg, seed);
    SegNetwork teacher = build_network(cfg, 100 + seed, Role::kTeacher);
    teacher.freeze();
    Rng rng(1000 + seed);
    const Tensor x = random_tensor({1, 3, 6, 6}, rng, 0, 1);
    const Tensor tl = teacher.infer(x);
    const LabelMap lab = random_labels(1, 6, 6, cfg.num_classes, rng, 0.2);
    std::vector<std::pair<std::string, Tensor*>> wrt;
    for (std::size_t i = 0; i < student.parameters().size(); ++i) {
      wrt.emplace_back(student.parameter_names()[i], &student.parameters()[i]);
    }
    for (int which = 0; which < 4; ++which) {
      const auto r = test::check_gradients(wrt, [&](bool bw) {
        Tape tape;
        Var s = student.forward(tape, tape.constant_ref(x));
        Var t = tape.constant_ref(tl);
        Var loss = which == 0   ? segmentation_loss(s, lab)
                   : which == 1 ? probability_loss(softmax_channels(s), softmax_channels(t))
                   : which == 2 ? consistency_loss(s, t)
                                : total_loss_labeled(s, t, lab, w).total;
        if (bw) tape.backward(loss);
        return value(loss);
      });
      checked += r.checked;
      refined += r.refined;
      if (r.worst > worst) {
        worst = r.worst;
        where = std::string(names[which]) + " seed " + std::to_string(seed) + " " + r.where;
      }
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << checked << " partials over 5 seeds at h=1e-4, worst relative error " << worst << " (" << where << "), "
     << refined << " re-evaluated at h=1e-5 next to a ReLU kink, " << secs << " s";
  return {worst < 1e-4 && secs < 60, os.str()};
}

Outcome oracle_equivalence() {
  Rng rng(77);
  double map_err = 0, lp_err = 0, ls_err = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int h = rng.uniform_int(1, 9), wd = rng.uniform_int(1, 9), n = rng.uniform_int(1, 4);
    const Tensor l = random_tensor({1, n, h, wd}, rng, -3, 3);
    Tape tape;
    const Tensor c = consistency_map(tape.constant_ref(l)).value();
    const std::vector<double> ref = test::consistency_oracle(l);
    for (std::size_t i = 0; i < ref.size(); ++i) map_err = std::max(map_err, std::abs(c[i] - ref[i]));
  }
  for (int trial = 0; trial < 50; ++trial) {
    const int b = rng.uniform_int(1, 3), h = rng.uniform_int(1, 9), wd = rng.uniform_int(1, 9),
              n = rng.uniform_int(2, 5);
    const Tensor ls = random_tensor({b, n, h, wd}, rng, -3, 3), lt = random_tensor({b, n, h, wd}, rng, -3, 3);
    const LabelMap lab = random_labels(b, h, wd, n, rng, 0.3);
    Tape tape;
    Var s = tape.constant_ref(ls), t = tape.constant_ref(lt);
    lp_err = std::max(lp_err, std::abs(value(probability_loss(softmax_channels(s), softmax_channels(t))) -
                                       test::lp_oracle(ls, lt)));
    ls_err = std::max(ls_err, std::abs(value(segmentation_loss(s, lab)) - test::ce_oracle(ls, lab)));
  }
  std::ostringstream os;
  os << "max |c - oracle| " << map_err << ", max |L_p - oracle| " << lp_err << ", max |L_S - oracle| " << ls_err;
  return {map_err < 1e-6 && lp_err < 1e-6 && ls_err < 1e-5, os.str()};
}

Outcome loss_identities() {
  Rng rng(91);
  bool zero_ok = true, bias_ok = true, joint_ok = true;
  double shift_err = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 4, h = rng.uniform_int(2, 9), wd = rng.uniform_int(2, 9);
    const Tensor l = random_tensor({2, n, h, wd}, rng, -3, 3), other = random_tensor({2, n, h, wd}, rng, -3, 3);
    Tape tape;
    Var a = tape.constant_ref(l), b = tape.constant(l);
    zero_ok &= value(probability_loss(softmax_channels(a), softmax_channels(b))) == 0;
    zero_ok &= value(consistency_loss(a, b)) == 0;

    // Uniform shift of every logit map by its own constant.
    Tensor shifted = l, shifted_other = other;
    for (Tensor* t : {&shifted, &shifted_other}) {
      for (int bi = 0; bi < 2; ++bi)
        for (int c = 0; c < n; ++c) {
          const Scalar s = static_cast<Scalar>(rng.uniform(-10, 10));
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < wd; ++x) t->at(bi, c, y, x) += s;
        }
    }
    const double base = value(consistency_loss(a, tape.constant_ref(other)));
    const double moved = value(consistency_loss(tape.constant_ref(shifted), tape.constant_ref(shifted_other)));
    shift_err = std::max(shift_err, std::abs(moved - base));

    Var o = tape.constant_ref(other);
    bias_ok &= value(knowledge_bias(softmax_channels(a), softmax_channels(o), a, o, LossWeights{0, 0, 0.5})) == 0;

    const LabelMap lab = random_labels(2, h, wd, n, rng, 0.2);
    Var labeled = total_loss_labeled(a, o, lab, LossWeights{}).total;
    Var unlabeled = total_loss_labeled(o, a, lab, LossWeights{}).total;
    joint_ok &= value(total_loss_joint(labeled, unlabeled, 0.0)) == value(labeled);
  }
  std::ostringstream os;
  os << "L_p=L_c=0 on identical inputs " << (zero_ok ? "yes" : "no") << ", max |dL_c| under shift " << shift_err
     << ", knowledge_bias(0,0)=0 " << (bias_ok ? "yes" : "no") << ", joint(lambda=0)=labeled "
     << (joint_ok ? "yes" : "no");
  return {zero_ok && bias_ok && joint_ok && shift_err < 1e-9, os.str()};
}

}  // namespace kdseg::acceptance
