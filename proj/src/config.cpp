#include "kdseg/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

KDSEG_BEGIN_NAMESPACE

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double_impl(const std::string& key, const std::string& text) {
  double v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("'" + key + "' expects a number, got '" + text + "'");
  }
  return v;
}

long long parse_integer(const std::string& key, const std::string& text) {
  long long v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("'" + key + "' expects an integer, got '" + text + "'");
  }
  return v;
}

int parse_int_impl(const std::string& key, const std::string& text) {
  const long long v = parse_integer(key, text);
  if (v < -2147483647LL || v > 2147483647LL) throw ConfigError("'" + key + "' is out of range");
  return static_cast<int>(v);
}

bool parse_bool_impl(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  if (trim(text).empty() || trim(text) == "none") return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int_impl(key, trim(item)));
  return out;
}

const char* const kTrainKeys[] = {"batch_size", "epochs", "lr_initial", "lr_drop_epochs", "lr_drop_factor",
                                  "momentum", "warmup_epochs", "clip_norm", "alpha", "beta", "lambda", "seed", "augment",
                                  "flip_probability", "scale_min", "scale_max", "target_size"};

std::string digest_hex(const EVP_MD* md, std::string_view a, std::string_view b) {
  unsigned char out[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw IoError("cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, md, nullptr) == 1 && EVP_DigestUpdate(ctx, a.data(), a.size()) == 1 &&
                  EVP_DigestUpdate(ctx, b.data(), b.size()) == 1 && EVP_DigestFinal_ex(ctx, out, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw IoError("digest computation failed");
  static const char* hex = "0123456789abcdef";
  std::string s;
  s.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    s.push_back(hex[out[i] >> 4]);
    s.push_back(hex[out[i] & 15]);
  }
  return s;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

double parse_config_double(const std::string& key, const std::string& text) { return parse_double_impl(key, text); }
int parse_config_int(const std::string& key, const std::string& text) { return parse_int_impl(key, text); }
bool parse_config_bool(const std::string& key, const std::string& text) { return parse_bool_impl(key, text); }
std::string format_config_double(double v) { return format_double(v); }

KeyValues parse_key_values(std::string_view text, const std::string& origin) {
  KeyValues out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw FormatError(where + ": expected key = value");
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw FormatError(where + ": empty key");
    if (out.count(key)) throw FormatError(where + ": duplicate key '" + key + "'");
    out.emplace(std::move(key), trim(std::string_view(line).substr(eq + 1)));
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

bool is_train_key(std::string_view key) {
  return std::find(std::begin(kTrainKeys), std::end(kTrainKeys), key) != std::end(kTrainKeys);
}

KeyValues train_config_values(const TrainConfig& cfg) {
  std::string drops;
  for (std::size_t i = 0; i < cfg.lr_drop_epochs.size(); ++i) {
    if (i) drops += ',';
    drops += std::to_string(cfg.lr_drop_epochs[i]);
  }
  return {
      {"batch_size", std::to_string(cfg.batch_size)},
      {"epochs", std::to_string(cfg.epochs)},
      {"lr_initial", format_double(cfg.lr_initial)},
      {"lr_drop_epochs", drops.empty() ? "none" : drops},
      {"lr_drop_factor", format_double(cfg.lr_drop_factor)},
      {"momentum", format_double(cfg.momentum)},
      {"warmup_epochs", std::to_string(cfg.warmup_epochs)},
      {"clip_norm", format_double(cfg.clip_norm)},
      {"alpha", format_double(cfg.weights.alpha)},
      {"beta", format_double(cfg.weights.beta)},
      {"lambda", format_double(cfg.weights.lambda)},
      {"seed", std::to_string(cfg.seed)},
      {"augment", cfg.augment ? "true" : "false"},
      {"flip_probability", format_double(cfg.augmentation.flip_probability)},
      {"scale_min", format_double(cfg.augmentation.scale_min)},
      {"scale_max", format_double(cfg.augmentation.scale_max)},
      {"target_size", std::to_string(cfg.augmentation.target_size)},
  };
}

void apply_train_values(const KeyValues& values, TrainConfig& cfg) {
  for (const auto& [key, v] : values) {
    if (key == "batch_size") cfg.batch_size = parse_int_impl(key, v);
    else if (key == "epochs") cfg.epochs = parse_int_impl(key, v);
    else if (key == "lr_initial") cfg.lr_initial = parse_double_impl(key, v);
    else if (key == "lr_drop_epochs") cfg.lr_drop_epochs = parse_int_list(key, v);
    else if (key == "lr_drop_factor") cfg.lr_drop_factor = parse_double_impl(key, v);
    else if (key == "momentum") cfg.momentum = parse_double_impl(key, v);
    else if (key == "warmup_epochs") cfg.warmup_epochs = parse_int_impl(key, v);
    else if (key == "clip_norm") cfg.clip_norm = parse_double_impl(key, v);
    else if (key == "alpha") cfg.weights.alpha = parse_double_impl(key, v);
    else if (key == "beta") cfg.weights.beta = parse_double_impl(key, v);
    else if (key == "lambda") cfg.weights.lambda = parse_double_impl(key, v);
    else if (key == "seed") {
      const long long s = parse_integer(key, v);
      if (s < 0) throw ConfigError("'seed' must be non-negative");
      cfg.seed = static_cast<std::uint64_t>(s);
    }
    else if (key == "augment") cfg.augment = parse_bool_impl(key, v);
    else if (key == "flip_probability") cfg.augmentation.flip_probability = parse_double_impl(key, v);
    else if (key == "scale_min") cfg.augmentation.scale_min = parse_double_impl(key, v);
    else if (key == "scale_max") cfg.augmentation.scale_max = parse_double_impl(key, v);
    else if (key == "target_size") cfg.augmentation.target_size = parse_int_impl(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
  }
}

const char* source_name(ValueSource source) {
  switch (source) {
    case ValueSource::kDefault: return "default";
    case ValueSource::kConfigFile: return "config";
    case ValueSource::kFlag: return "flag";
  }
  return "?";
}

void ResolvedConfig::set(const std::string& key, std::string value, ValueSource source) {
  entries_[key] = ResolvedEntry{std::move(value), source};
}

void ResolvedConfig::overlay(const KeyValues& values, ValueSource source) {
  for (const auto& [k, v] : values) set(k, v, source);
}

KeyValues ResolvedConfig::values() const {
  KeyValues out;
  for (const auto& [k, e] : entries_) out.emplace(k, e.value);
  return out;
}

const std::string& ResolvedConfig::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw UsageError("config key '" + key + "' is not set");
  return it->second.value;
}

std::string sha1_hex(std::string_view bytes) { return digest_hex(EVP_sha1(), bytes, {}); }

std::string git_blob_id(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  return digest_hex(EVP_sha1(), header, bytes);
}

std::string git_blob_id_of_file(const std::filesystem::path& path) { return git_blob_id(slurp(path)); }

std::string manifest_content_id(const std::filesystem::path& manifest_path) {
  const Manifest m = read_manifest(manifest_path);
  std::string listing = git_blob_id_of_file(manifest_path) + "\n";
  for (const ManifestEntry& e : m.entries) {
    listing += git_blob_id_of_file(m.resolve(e.image)) + " " + e.image + "\n";
    if (e.label) listing += git_blob_id_of_file(m.resolve(*e.label)) + " " + *e.label + "\n";
  }
  return sha1_hex(listing);
}

std::string RunRecord::inputs_id() const {
  std::string listing;
  for (const auto& [path, id] : inputs) listing += id + " " + path + "\n";
  return sha1_hex(listing);
}

void write_run_record(const RunRecord& record, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "config.txt", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "config.txt").string());
    for (const auto& [k, e] : record.config.entries()) out << k << " = " << e.value << '\n';
  }
  std::ofstream out(dir / "run.txt", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "run.txt").string());
  out << "command = " << record.command << '\n';
  out << "seed = " << record.seed << '\n';
  out << "inputs_id = " << record.inputs_id() << '\n';
  for (const auto& [path, id] : record.inputs) out << "input " << id << ' ' << path << '\n';
  for (const auto& [k, e] : record.config.entries()) {
    out << "config " << k << " = " << e.value << "  [" << source_name(e.source) << "]\n";
  }
  if (!out) throw IoError("failed writing " + (dir / "run.txt").string());
}

KDSEG_END_NAMESPACE
