#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdseg/tensor.hpp"

KDSEG_BEGIN_NAMESPACE

enum class Role { kTeacher, kStudent };

const char* role_name(Role role);

/// Shape of an encoder-decoder segmentation network. Every hidden layer has
/// channels() feature maps; capacity is set by depth, base width and the
/// width multiplier.
struct NetworkConfig {
  int num_classes = 4;
  int depth = 3;
  int base_channels = 16;
  double width_multiplier = 1.0;
  int input_channels = 3;

  int channels() const;
  /// Throws ConfigError on out-of-range fields.
  void validate() const;
  /// Input height/width must be a multiple of this.
  int size_multiple() const { return 1 << depth; }

  bool operator==(const NetworkConfig&) const = default;
};

/// depth 3, base 36, width 1.0.
NetworkConfig teacher_preset(int num_classes = 4);
/// depth 3, base 16, given width multiplier.
NetworkConfig student_preset(int num_classes = 4, double width_multiplier = 1.0);

/// Encoder: `depth` stride-2 3x3 conv+relu blocks. Context: one 3x3 conv+relu.
/// Decoder: `depth` blocks of nearest 2x upsample then 3x3 conv+relu.
/// Head: 1x1 conv to num_classes logits.
class SegNetwork {
 public:
  /// Allocates zero-filled parameters.
  SegNetwork(NetworkConfig config, Role role);

  const NetworkConfig& config() const noexcept { return config_; }
  Role role() const noexcept { return role_; }
  void set_role(Role role) noexcept { role_ = role; }

  const std::vector<std::string>& parameter_names() const noexcept { return names_; }
  std::span<Tensor> parameters() noexcept { return params_; }
  std::span<const Tensor> parameters() const noexcept { return params_; }
  Tensor& parameter(std::string_view name);
  const Tensor& parameter(std::string_view name) const;

  /// Logits [B, n, H, W] recorded on `tape`; parameters that require grad
  /// receive gradients on backward.
  Var forward(Tape& tape, Var images);
  /// Inference without gradient tracking.
  Var forward_inference(Tape& tape, Var images) const;
  Tensor infer(const Tensor& images) const;

  /// Stops gradient tracking on every parameter.
  void freeze();
  void zero_grad();

 private:
  template <typename ParamFn>
  Var run(Var images, ParamFn&& param) const;

  void add_parameter(std::string name, Shape shape);

  NetworkConfig config_;
  Role role_;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
};

/// Builds a network with He-style uniform weights (bound sqrt(6/fan_in)) and
/// zero biases, drawn from `seed`.
SegNetwork build_network(const NetworkConfig& config, std::uint64_t seed, Role role = Role::kStudent);

std::size_t count_parameters(const SegNetwork& net);

/// Closed-form parameter count for a config, without allocating.
std::size_t count_parameters(const NetworkConfig& config);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const SegNetwork& net, const std::filesystem::path& path);
/// Throws CheckpointError (bad magic, version, truncation, shape) or IoError.
SegNetwork load_checkpoint(const std::filesystem::path& path, Role role = Role::kStudent);
/// Reads only the header.
NetworkConfig read_checkpoint_config(const std::filesystem::path& path);

KDSEG_END_NAMESPACE
