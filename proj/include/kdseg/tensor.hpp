#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kdseg/error.hpp"
#include "kdseg/scalar.hpp"

KDSEG_BEGIN_NAMESPACE

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array with an optional gradient buffer of the same length.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0));
  Tensor(Shape shape, std::vector<Scalar> data);

  static Tensor scalar(Scalar value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  int ndim() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<Scalar> data() noexcept { return data_; }
  std::span<const Scalar> data() const noexcept { return data_; }
  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  /// Element access for 4-d tensors laid out as [B, C, H, W].
  Scalar& at(int b, int c, int h, int w) { return data_[offset(b, c, h, w)]; }
  Scalar at(int b, int c, int h, int w) const { return data_[offset(b, c, h, w)]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; if (!on) grad_.clear(); }

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<Scalar> grad() noexcept { return grad_; }
  std::span<const Scalar> grad() const noexcept { return grad_; }
  /// Adds `g` into the gradient buffer, allocating it on first use.
  void accumulate_grad(std::span<const Scalar> g);
  void zero_grad();
  void clear_grad() { grad_.clear(); }

  bool all_finite() const noexcept;

 private:
  std::size_t offset(int b, int c, int h, int w) const {
    return ((static_cast<std::size_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Shape shape_;
  std::vector<Scalar> data_;
  std::vector<Scalar> grad_;
  bool requires_grad_ = false;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape& tape() const;
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records operations in execution order and replays their backward rules in
/// reverse. A tape serves exactly one forward pass and one backward call.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Wraps an externally owned tensor (typically a parameter). When the tensor
  /// requires grad, backward() accumulates into its grad buffer.
  Var leaf(Tensor& param);
  /// Wraps an externally owned tensor that never receives gradients.
  Var constant_ref(const Tensor& value);
  /// Records a value that never receives gradients.
  Var constant(Tensor value);
  /// Records an op output. `backward` is dropped when no input needs grad.
  Var record(const char* op, Tensor value, std::vector<int> inputs, BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(int id) const;
  bool needs_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).needs_grad; }
  /// Gradient buffer of a node; allocated zero-filled on first access.
  std::span<Scalar> grad(int id);
  std::size_t size() const noexcept { return nodes_.size(); }
  bool backward_done() const noexcept { return backward_done_; }

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    const Tensor* external = nullptr;
    Tensor* leaf = nullptr;
    bool needs_grad = false;
    std::vector<int> inputs;
    std::vector<Scalar> grad;
    BackwardFn backward;
  };

  void check_owned(Var v) const;

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// Differentiable operations. All inputs must live on the same tape.

/// Cross-correlation with bias; kernel is [Cout, Cin, Kh, Kw] with odd Kh, Kw.
Var conv2d(Var input, Var kernel, Var bias, int stride, int padding);
Var relu(Var x);
/// Per-pixel softmax over dim 1 of a [B, n, H, W] tensor.
Var softmax_channels(Var logits);
Var upsample_nearest2x(Var x);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, Scalar factor);
Var sum(Var x);

KDSEG_END_NAMESPACE
