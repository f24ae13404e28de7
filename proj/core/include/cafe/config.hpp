#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cafe {

// Flat "section.key" -> raw value text, parsed from a TOML-like file:
//   # comment
//   [section]
//   key = 1.5 | true | "text" | [a, b, c]
class KvConfig {
 public:
  static KvConfig parse(const std::string& text, const std::string& origin = "<config>");
  static KvConfig load(const std::string& path);

  // Later values win.
  void merge(const KvConfig& other);
  void set(const std::string& key, const std::string& raw) { values_[key] = raw; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string str(const std::string& key, const std::string& def) const;
  double num(const std::string& key, double def) const;
  std::size_t count(const std::string& key, std::size_t def) const;
  std::uint64_t u64(const std::string& key, std::uint64_t def) const;
  bool flag(const std::string& key, bool def) const;
  std::vector<std::string> list(const std::string& key) const;

  // Canonical "key = value" dump, sorted by key.
  std::string canonical() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string hash_hex(const std::string& text);

}  // namespace cafe
