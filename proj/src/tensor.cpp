#include "kdseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

KDSEG_BEGIN_NAMESPACE

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)) {
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " does not match buffer of " +
                         std::to_string(data_.size()) + " scalars");
  }
}

void Tensor::accumulate_grad(std::span<const Scalar> g) {
  if (g.size() != data_.size()) throw DimensionError("gradient length mismatch");
  if (grad_.empty()) {
    grad_.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) grad_[i] += g[i];
}

void Tensor::zero_grad() {
  if (grad_.empty()) {
    grad_.assign(data_.size(), Scalar(0));
  } else {
    std::fill(grad_.begin(), grad_.end(), Scalar(0));
  }
}

bool Tensor::all_finite() const noexcept {
  // x * 0 is 0 for finite x and NaN otherwise; NaN survives the sums.
  Scalar acc[8] = {};
  const std::size_t n = data_.size(), full = n - n % 8;
  for (std::size_t i = 0; i < full; i += 8) {
    for (int k = 0; k < 8; ++k) acc[k] += data_[i + k] * Scalar(0);
  }
  for (std::size_t i = full; i < n; ++i) acc[0] += data_[i] * Scalar(0);
  Scalar total = 0;
  for (Scalar a : acc) total += a;
  return total == Scalar(0);
}

// ---------------------------------------------------------------------------

Tape& Var::tape() const {
  if (tape_ == nullptr) throw UsageError("use of an empty Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(id_); }

bool Var::requires_grad() const { return tape().needs_grad(id_); }

Var Tape::leaf(Tensor& param) {
  if (backward_done_) throw UsageError("tape already consumed by backward()");
  Node& node = nodes_.emplace_back();
  node.op = "leaf";
  node.external = &param;
  node.needs_grad = param.requires_grad();
  node.leaf = node.needs_grad ? &param : nullptr;
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant_ref(const Tensor& value) {
  if (backward_done_) throw UsageError("tape already consumed by backward()");
  Node& node = nodes_.emplace_back();
  node.op = "constant";
  node.external = &value;
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) {
  if (backward_done_) throw UsageError("tape already consumed by backward()");
  Node& node = nodes_.emplace_back();
  node.op = "constant";
  node.value = std::move(value);
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(const char* op, Tensor value, std::vector<int> inputs, BackwardFn backward) {
  if (backward_done_) throw UsageError("tape already consumed by backward()");
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite values produced by ") + op);
  }
  Node& node = nodes_.emplace_back();
  node.op = op;
  node.value = std::move(value);
  node.needs_grad = std::any_of(inputs.begin(), inputs.end(), [this](int id) { return needs_grad(id); });
  node.inputs = std::move(inputs);
  if (node.needs_grad) node.backward = std::move(backward);
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Tensor& Tape::value(int id) const {
  const Node& node = nodes_.at(static_cast<std::size_t>(id));
  return node.external ? *node.external : node.value;
}

std::span<Scalar> Tape::grad(int id) {
  Node& node = nodes_.at(static_cast<std::size_t>(id));
  if (node.grad.empty()) node.grad.assign(value(id).size(), Scalar(0));
  return node.grad;
}

void Tape::check_owned(Var v) const {
  if (&v.tape() != this || v.id() < 0 || static_cast<std::size_t>(v.id()) >= nodes_.size()) {
    throw UsageError("variable does not belong to this tape");
  }
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (backward_done_) throw UsageError("backward() already called on this tape");
  if (value(loss.id()).size() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " + shape_str(value(loss.id()).shape()));
  }
  backward_done_ = true;
  if (!needs_grad(loss.id())) return;
  grad(loss.id())[0] = Scalar(1);
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.needs_grad || node.grad.empty() || !node.backward) continue;
    node.backward(*this, id);
  }
  for (Node& node : nodes_) {
    if (node.leaf == nullptr || node.grad.empty()) continue;
    for (Scalar g : node.grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient reached a parameter");
    }
    node.leaf->accumulate_grad(node.grad);
  }
}

KDSEG_END_NAMESPACE
