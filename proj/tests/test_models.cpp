#include <cstring>

#include "doctest.h"
#include "kdseg/models.hpp"
#include "support.hpp"

using namespace kdseg;
using kdseg::test::random_tensor;
using kdseg::test::read_bytes;
using kdseg::test::TempDir;
using kdseg::test::write_bytes;

namespace {

bool same_parameters(const SegNetwork& a, const SegNetwork& b) {
  if (a.parameters().size() != b.parameters().size()) return false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto x = a.parameters()[i].data(), y = b.parameters()[i].data();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size_bytes()) != 0) return false;
  }
  return true;
}

void put_u32_at(std::string& bytes, std::size_t pos, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes[pos + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
}

template <typename F>
CheckpointFault fault_of(F&& f) {
  try {
    f();
  } catch (const CheckpointError& e) {
    return e.fault();
  }
  FAIL("expected a checkpoint error");
  return CheckpointFault::kBadMagic;
}

}  // namespace

TEST_CASE("same config and seed give identical networks") {
  const SegNetwork a = build_network(student_preset(4), 42);
  const SegNetwork b = build_network(student_preset(4), 42);
  const SegNetwork c = build_network(student_preset(4), 43);
  CHECK(same_parameters(a, b));
  CHECK_FALSE(same_parameters(a, c));
}

TEST_CASE("initial weights respect the fan-in bound and biases start at zero") {
  const SegNetwork net = build_network(student_preset(4), 3);
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    const Tensor& p = net.parameters()[i];
    if (p.ndim() == 1) {
      for (Scalar v : p.data()) CHECK(v == 0);
      continue;
    }
    const double bound = std::sqrt(6.0 / (p.dim(1) * p.dim(2) * p.dim(3)));
    for (Scalar v : p.data()) CHECK(std::abs(v) <= bound);
  }
}

TEST_CASE("parameter counts") {
  for (int n : {2, 4, 7}) {
    for (double w : {0.5, 0.75, 1.0, 1.5}) {
      const NetworkConfig cfg = student_preset(n, w);
      CHECK(count_parameters(SegNetwork(cfg, Role::kStudent)) == count_parameters(cfg));
    }
    CHECK(count_parameters(student_preset(n, 0.5)) < count_parameters(student_preset(n, 1.0)));
    CHECK(count_parameters(student_preset(n, 0.75)) < count_parameters(student_preset(n, 1.0)));
    CHECK(count_parameters(teacher_preset(n)) > count_parameters(student_preset(n)));
  }
  CHECK(count_parameters(student_preset(4)) == 14436);
  CHECK(count_parameters(teacher_preset(4)) == 71356);

  // The head is a single 1x1 conv; with 3 hidden channels it holds 3n + n values.
  for (int n : {2, 4, 9}) {
    const SegNetwork net(NetworkConfig{n, 1, 3, 1.0, 3}, Role::kStudent);
    CHECK(net.parameter("head.weight").size() + net.parameter("head.bias").size() ==
          static_cast<std::size_t>(3 * n + n));
  }
}

TEST_CASE("forward keeps the input resolution") {
  Rng rng(1);
  for (const NetworkConfig& cfg : {student_preset(4), student_preset(3, 0.5), teacher_preset(5)}) {
    const SegNetwork net = build_network(cfg, 1);
    for (int size : {8, 16, 32}) {
      const Tensor out = net.infer(random_tensor({2, 3, size, size + 8}, rng, 0, 1));
      CHECK(out.shape() == Shape{2, cfg.num_classes, size, size + 8});
    }
  }
}

TEST_CASE("a zero final layer yields uniform probabilities") {
  SegNetwork net = build_network(student_preset(4), 5);
  for (Scalar& v : net.parameter("head.weight").data()) v = 0;
  Rng rng(2);
  const Tensor x = random_tensor({1, 3, 16, 16}, rng, 0, 1);
  Tape tape;
  Var p = softmax_channels(net.forward_inference(tape, tape.constant_ref(x)));
  for (Scalar v : p.value().data()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("identical images in a batch give identical logits") {
  const SegNetwork net = build_network(student_preset(4), 6);
  Rng rng(3);
  const Tensor one = random_tensor({1, 3, 16, 16}, rng, 0, 1);
  Tensor two({2, 3, 16, 16});
  std::copy(one.data().begin(), one.data().end(), two.data().begin());
  std::copy(one.data().begin(), one.data().end(), two.data().begin() + one.size());
  const Tensor out = net.infer(two);
  const std::size_t half = out.size() / 2;
  CHECK(std::memcmp(out.data().data(), out.data().data() + half, half * sizeof(Scalar)) == 0);
  const Tensor again = net.infer(two);
  CHECK(std::memcmp(out.data().data(), again.data().data(), out.size() * sizeof(Scalar)) == 0);
}

TEST_CASE("forward rejects sizes the encoder cannot halve") {
  const SegNetwork net = build_network(student_preset(4), 1);
  CHECK_THROWS_AS(net.infer(Tensor({1, 3, 12, 16})), DimensionError);
  CHECK_THROWS_AS(net.infer(Tensor({1, 1, 16, 16})), DimensionError);
}

TEST_CASE("invalid configs are rejected") {
  CHECK_THROWS_AS(SegNetwork(NetworkConfig{1, 3, 16, 1.0, 3}, Role::kStudent), ConfigError);
  CHECK_THROWS_AS(SegNetwork(NetworkConfig{4, 0, 16, 1.0, 3}, Role::kStudent), ConfigError);
  CHECK_THROWS_AS(SegNetwork(NetworkConfig{4, 3, 16, 0.0, 3}, Role::kStudent), ConfigError);
}

TEST_CASE("frozen networks never receive gradients") {
  SegNetwork net = build_network(student_preset(4), 1);
  net.freeze();
  Rng rng(4);
  const Tensor x = random_tensor({1, 3, 8, 8}, rng, 0, 1);
  Tape tape;
  Var out = net.forward(tape, tape.constant_ref(x));
  CHECK_FALSE(out.requires_grad());
  for (const Tensor& p : net.parameters()) CHECK_FALSE(p.has_grad());
}

TEST_CASE("checkpoint round trip is bit-exact") {
  TempDir dir("ckpt");
  for (const NetworkConfig& cfg : {student_preset(4), student_preset(6, 0.75), teacher_preset(4)}) {
    const SegNetwork net = build_network(cfg, 9, Role::kTeacher);
    save_checkpoint(net, dir / "a.ckpt");
    const SegNetwork back = load_checkpoint(dir / "a.ckpt", Role::kTeacher);
    CHECK(back.config() == cfg);
    CHECK(back.role() == Role::kTeacher);
    CHECK(same_parameters(net, back));
    CHECK(read_checkpoint_config(dir / "a.ckpt") == cfg);
    save_checkpoint(back, dir / "b.ckpt");
    CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
  }
}

TEST_CASE("checkpoint faults are distinguished") {
  TempDir dir("ckptbad");
  const SegNetwork net = build_network(student_preset(4), 1);
  save_checkpoint(net, dir / "good.ckpt");
  const std::string good = read_bytes(dir / "good.ckpt");
  const auto bad = dir / "bad.ckpt";

  std::string b = good;
  b[0] = 'X';
  write_bytes(bad, b);
  CHECK(fault_of([&] { load_checkpoint(bad); }) == CheckpointFault::kBadMagic);

  b = good;
  put_u32_at(b, 5, kCheckpointVersion + 1);
  write_bytes(bad, b);
  CHECK(fault_of([&] { load_checkpoint(bad); }) == CheckpointFault::kVersionMismatch);

  for (std::size_t len : {std::size_t{3}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
    write_bytes(bad, good.substr(0, len));
    CHECK(fault_of([&] { load_checkpoint(bad); }) == CheckpointFault::kTruncated);
  }

  b = good;
  put_u32_at(b, 9 + 8, 20);  // base_channels 16 -> 20: stored tensors no longer fit
  write_bytes(bad, b);
  CHECK(fault_of([&] { load_checkpoint(bad); }) == CheckpointFault::kShapeMismatch);

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_CASE("the header exposes the stored class count") {
  TempDir dir("ckpthdr");
  save_checkpoint(build_network(student_preset(6), 1), dir / "n6.ckpt");
  CHECK(read_checkpoint_config(dir / "n6.ckpt").num_classes == 6);
}
