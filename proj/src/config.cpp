#include "ecopinn/config.hpp"

#include <cstdint>
#include <stdexcept>

#include "ecopinn/textio.hpp"

namespace ecopinn {

KvConfig KvConfig::load_file(const std::string& path) {
  KvConfig cfg;
  for (const auto& raw : read_lines(path)) {
    std::string line = raw;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.pop_back();
    std::size_t b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    line = line.substr(b);
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ": expected key=value, got: " + line);
    cfg.values_[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return cfg;
}

std::string KvConfig::get_str(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return parse_double(it->second, "config key " + key);
  } catch (const std::exception& e) {  // a bad value is a config error
    throw std::invalid_argument(e.what());
  }
}

long KvConfig::get_int(const std::string& key, long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return parse_int(it->second, "config key " + key);
  } catch (const std::exception& e) {
    throw std::invalid_argument(e.what());
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::invalid_argument("config key " + key + ": expected a boolean, got " + v);
}

void KvConfig::restrict_to(const std::set<std::string>& allowed) const {
  for (const auto& [k, v] : values_)
    if (!allowed.count(k)) throw std::invalid_argument("unknown config key: " + k);
}

std::string KvConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string KvConfig::hash() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : canonical()) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = hex[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace ecopinn
