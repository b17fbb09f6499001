#pragma once

#include <map>
#include <set>
#include <string>

namespace ecopinn {

/// Flat key=value run configuration: file values first, flag overrides win.
/// Unknown keys are rejected against the subcommand's allowed set.
class KvConfig {
 public:
  /// `key=value` lines; blank lines and `#` comments ignored.
  static KvConfig load_file(const std::string& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Throws std::invalid_argument when a key is outside `allowed`.
  void restrict_to(const std::set<std::string>& allowed) const;

  /// Sorted `key=value` lines; what gets echoed into the run directory.
  std::string canonical() const;
  /// FNV-1a 64-bit hash of the canonical form, 16 hex chars; names run dirs.
  std::string hash() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ecopinn
