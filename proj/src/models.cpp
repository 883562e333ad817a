#include "kdseg/models.hpp"

#include <algorithm>
#include <cmath>

#include "kdseg/random.hpp"

KDSEG_BEGIN_NAMESPACE

const char* role_name(Role role) { return role == Role::kTeacher ? "teacher" : "student"; }

int NetworkConfig::channels() const {
  return std::max(1, static_cast<int>(std::lround(base_channels * width_multiplier)));
}

void NetworkConfig::validate() const {
  if (num_classes < 2 || num_classes > 255) throw ConfigError("num_classes must be in [2, 255]");
  if (depth < 1 || depth > 8) throw ConfigError("depth must be in [1, 8]");
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (!(width_multiplier > 0.0 && width_multiplier <= 2.0)) {
    throw ConfigError("width_multiplier must be in (0, 2]");
  }
  if (input_channels < 1) throw ConfigError("input_channels must be >= 1");
}

NetworkConfig teacher_preset(int num_classes) { return NetworkConfig{num_classes, 3, 36, 1.0, 3}; }

NetworkConfig student_preset(int num_classes, double width_multiplier) {
  return NetworkConfig{num_classes, 3, 16, width_multiplier, 3};
}

SegNetwork::SegNetwork(NetworkConfig config, Role role) : config_(config), role_(role) {
  config_.validate();
  const int c = config_.channels();
  for (int i = 0; i < config_.depth; ++i) {
    const int cin = i == 0 ? config_.input_channels : c;
    add_parameter("enc" + std::to_string(i) + ".weight", Shape{c, cin, 3, 3});
    add_parameter("enc" + std::to_string(i) + ".bias", Shape{c});
  }
  add_parameter("context.weight", Shape{c, c, 3, 3});
  add_parameter("context.bias", Shape{c});
  for (int i = 0; i < config_.depth; ++i) {
    add_parameter("dec" + std::to_string(i) + ".weight", Shape{c, c, 3, 3});
    add_parameter("dec" + std::to_string(i) + ".bias", Shape{c});
  }
  add_parameter("head.weight", Shape{config_.num_classes, c, 1, 1});
  add_parameter("head.bias", Shape{config_.num_classes});
}

void SegNetwork::add_parameter(std::string name, Shape shape) {
  names_.push_back(std::move(name));
  Tensor t(std::move(shape));
  t.set_requires_grad(true);
  params_.push_back(std::move(t));
}

Tensor& SegNetwork::parameter(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).parameter(name));
}

const Tensor& SegNetwork::parameter(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw UsageError("no parameter named " + std::string(name));
  return params_[static_cast<std::size_t>(it - names_.begin())];
}

template <typename ParamFn>
Var SegNetwork::run(Var images, ParamFn&& param) const {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != config_.input_channels) {
    throw DimensionError("network expects [B," + std::to_string(config_.input_channels) + ",H,W] input, got " +
                         shape_str(s));
  }
  const int m = config_.size_multiple();
  if (s[2] % m != 0 || s[3] % m != 0 || s[2] == 0 || s[3] == 0) {
    throw DimensionError("input size " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                         " is not a positive multiple of " + std::to_string(m));
  }
  std::size_t idx = 0;
  auto next = [&]() { return param(idx++); };
  Var x = images;
  for (int i = 0; i < config_.depth; ++i) {
    const Var w = next(), b = next();
    x = relu(conv2d(x, w, b, 2, 1));
  }
  {
    const Var w = next(), b = next();
    x = relu(conv2d(x, w, b, 1, 1));
  }
  for (int i = 0; i < config_.depth; ++i) {
    const Var w = next(), b = next();
    x = relu(conv2d(upsample_nearest2x(x), w, b, 1, 1));
  }
  const Var w = next(), b = next();
  return conv2d(x, w, b, 1, 0);
}

Var SegNetwork::forward(Tape& tape, Var images) {
  return run(images, [&](std::size_t i) { return tape.leaf(params_[i]); });
}

Var SegNetwork::forward_inference(Tape& tape, Var images) const {
  return run(images, [&](std::size_t i) { return tape.constant_ref(params_[i]); });
}

Tensor SegNetwork::infer(const Tensor& images) const {
  Tape tape;
  return forward_inference(tape, tape.constant_ref(images)).value();
}

void SegNetwork::freeze() {
  for (Tensor& p : params_) p.set_requires_grad(false);
}

void SegNetwork::zero_grad() {
  for (Tensor& p : params_) {
    if (p.requires_grad()) p.zero_grad();
  }
}

SegNetwork build_network(const NetworkConfig& config, std::uint64_t seed, Role role) {
  SegNetwork net(config, role);
  Rng rng = Rng::derive(seed, "init");
  const auto& names = net.parameter_names();
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (names[i].ends_with(".bias")) continue;
    const Shape& s = p.shape();
    const double fan_in = static_cast<double>(s[1]) * s[2] * s[3];
    const double bound = std::sqrt(6.0 / fan_in);
    for (Scalar& v : p.data()) v = static_cast<Scalar>(rng.uniform(-bound, bound));
  }
  return net;
}

std::size_t count_parameters(const SegNetwork& net) {
  std::size_t n = 0;
  for (const Tensor& p : net.parameters()) n += p.size();
  return n;
}

std::size_t count_parameters(const NetworkConfig& config) {
  const std::size_t c = static_cast<std::size_t>(config.channels());
  const std::size_t cin = static_cast<std::size_t>(config.input_channels);
  const std::size_t n = static_cast<std::size_t>(config.num_classes);
  // depth-1 further encoder blocks, the context block, depth decoder blocks.
  const std::size_t blocks = 2 * static_cast<std::size_t>(config.depth);
  return (cin * 9 * c + c) + blocks * (c * 9 * c + c) + (c * n + n);
}

KDSEG_END_NAMESPACE
