#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "kdseg/trainer.hpp"

KDSEG_BEGIN_NAMESPACE

using KeyValues = std::map<std::string, std::string>;

/// Flat `key = value` file. '#' starts a comment; blank lines are skipped.
/// Duplicate keys and lines without '=' are format errors.
KeyValues read_key_values(const std::filesystem::path& path);
KeyValues parse_key_values(std::string_view text, const std::string& origin = "<text>");

/// Typed value parsers; failures raise ConfigError naming the key.
double parse_config_double(const std::string& key, const std::string& text);
int parse_config_int(const std::string& key, const std::string& text);
bool parse_config_bool(const std::string& key, const std::string& text);
/// Shortest text that parses back to the same double.
std::string format_config_double(double v);

/// Canonical text form of every TrainConfig field.
KeyValues train_config_values(const TrainConfig& cfg);
/// Sets the TrainConfig fields named in `values`. Unknown keys and
/// unparsable values raise ConfigError.
void apply_train_values(const KeyValues& values, TrainConfig& cfg);
bool is_train_key(std::string_view key);

enum class ValueSource { kDefault, kConfigFile, kFlag };
const char* source_name(ValueSource source);

struct ResolvedEntry {
  std::string value;
  ValueSource source = ValueSource::kDefault;
};

/// Layers defaults < config file < flags.
class ResolvedConfig {
 public:
  void set(const std::string& key, std::string value, ValueSource source);
  void overlay(const KeyValues& values, ValueSource source);
  KeyValues values() const;
  const std::map<std::string, ResolvedEntry>& entries() const { return entries_; }
  const std::string& get(const std::string& key) const;
  bool contains(const std::string& key) const { return entries_.count(key) != 0; }

 private:
  std::map<std::string, ResolvedEntry> entries_;
};

/// SHA-1 of `bytes`, lowercase hex.
std::string sha1_hex(std::string_view bytes);
/// Git blob id: SHA-1 over "blob <size>\0" followed by the content.
std::string git_blob_id(std::string_view bytes);
std::string git_blob_id_of_file(const std::filesystem::path& path);

/// Hashes a manifest file plus every file it references.
std::string manifest_content_id(const std::filesystem::path& manifest_path);

struct RunRecord {
  std::string command;
  std::uint64_t seed = 0;
  ResolvedConfig config;
  std::vector<std::pair<std::string, std::string>> inputs;  // (path, content id)

  /// Combined id over all input ids, in order.
  std::string inputs_id() const;
};

/// Writes run.txt (provenance, sources, hashes) and config.txt (resolved
/// key=value, loadable with read_key_values) into `dir`.
void write_run_record(const RunRecord& record, const std::filesystem::path& dir);

KDSEG_END_NAMESPACE
