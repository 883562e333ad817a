#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "kdseg/models.hpp"

KDSEG_BEGIN_NAMESPACE

namespace {

constexpr char kMagic[5] = {'K', 'D', 'S', 'E', 'G'};

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  bool at_end() const { return pos_ == bytes_.size(); }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointFault::kTruncated, std::string("checkpoint truncated while reading ") + what);
    }
  }

  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

NetworkConfig read_header(Reader& r) {
  const std::string magic = r.str(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(CheckpointFault::kBadMagic, "not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointFault::kVersionMismatch,
                          "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
  }
  NetworkConfig cfg;
  cfg.num_classes = static_cast<int>(r.u32("num_classes"));
  cfg.depth = static_cast<int>(r.u32("depth"));
  cfg.base_channels = static_cast<int>(r.u32("base_channels"));
  cfg.width_multiplier = r.u32("width_multiplier") / 1000.0;
  cfg.input_channels = static_cast<int>(r.u32("input_channels"));
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointFault::kShapeMismatch, std::string("checkpoint config invalid: ") + e.what());
  }
  return cfg;
}

}  // namespace

void save_checkpoint(const SegNetwork& net, const std::filesystem::path& path) {
  const NetworkConfig& cfg = net.config();
  std::vector<char> out(kMagic, kMagic + sizeof(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(cfg.num_classes));
  put_u32(out, static_cast<std::uint32_t>(cfg.depth));
  put_u32(out, static_cast<std::uint32_t>(cfg.base_channels));
  put_u32(out, static_cast<std::uint32_t>(std::lround(cfg.width_multiplier * 1000.0)));
  put_u32(out, static_cast<std::uint32_t>(cfg.input_channels));
  const auto& names = net.parameter_names();
  const auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    put_u32(out, static_cast<std::uint32_t>(names[i].size()));
    out.insert(out.end(), names[i].begin(), names[i].end());
    const Shape& s = params[i].shape();
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    for (int d : s) put_u32(out, static_cast<std::uint32_t>(d));
    for (Scalar v : params[i].data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

NetworkConfig read_checkpoint_config(const std::filesystem::path& path) {
  Reader r(read_file(path));
  return read_header(r);
}

SegNetwork load_checkpoint(const std::filesystem::path& path, Role role) {
  Reader r(read_file(path));
  SegNetwork net(read_header(r), role);
  const auto& names = net.parameter_names();
  std::vector<bool> seen(names.size(), false);
  while (!r.at_end()) {
    const std::uint32_t name_len = r.u32("name length");
    if (name_len > 4096) throw CheckpointError(CheckpointFault::kShapeMismatch, "implausible tensor name length");
    const std::string name = r.str(name_len, "tensor name");
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
      throw CheckpointError(CheckpointFault::kShapeMismatch, "unexpected tensor '" + name + "' for this config");
    }
    const std::size_t idx = static_cast<std::size_t>(it - names.begin());
    Tensor& p = net.parameters()[idx];
    const std::uint32_t ndim = r.u32("ndim");
    if (ndim > 8) throw CheckpointError(CheckpointFault::kShapeMismatch, "implausible rank for " + name);
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(r.u32("dims")));
    if (shape != p.shape()) {
      throw CheckpointError(CheckpointFault::kShapeMismatch, "tensor '" + name + "' has shape " + shape_str(shape) +
                                                                 ", expected " + shape_str(p.shape()));
    }
    for (Scalar& v : p.data()) v = static_cast<Scalar>(std::bit_cast<float>(r.u32("tensor data")));
    seen[idx] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) {
      throw CheckpointError(CheckpointFault::kTruncated, "checkpoint ends before tensor '" + names[i] + "'");
    }
  }
  return net;
}

KDSEG_END_NAMESPACE
