#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ddfpose::harness {

// Flat `key = value` configuration with `#` comments. Subcommands read a file
// and apply command-line overrides; the fully resolved config is written back
// into every run directory.
class KvConfig {
 public:
  KvConfig() = default;
  static KvConfig from_file(const std::filesystem::path& path);
  void apply_override(const std::string& key_eq_value);  // "key=value"

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_str(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::string resolved_text() const;
  void write_resolved(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ddfpose::harness
