#include "cafe/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cafe/error.hpp"
#include "cafe/rng.hpp"

#include "toml.hpp"

namespace cafe {

namespace {
std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

std::string trim(const std::string& s) {
  auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Scalars and arrays back to the raw text the typed accessors parse.
std::string render(const toml::node& n, const std::string& key) {
  if (auto v = n.as_string()) return "\"" + v->get() + "\"";
  if (auto v = n.as_integer()) return std::to_string(v->get());
  if (auto v = n.as_floating_point()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v->get());
    return buf;
  }
  if (auto v = n.as_boolean()) return v->get() ? "true" : "false";
  if (auto a = n.as_array()) {
    std::string out = "[";
    for (std::size_t i = 0; i < a->size(); ++i) {
      require(!(*a)[i].is_array() && !(*a)[i].is_table(), ErrorCode::config,
              "config key '" + key + "': nested arrays and tables are not supported");
      out += (i ? ", " : "") + render((*a)[i], key);
    }
    return out + "]";
  }
  fail(ErrorCode::config, "config key '" + key + "' has an unsupported value type");
}

void flatten(const toml::table& t, const std::string& prefix, std::map<std::string, std::string>& out) {
  for (const auto& [k, v] : t) {
    std::string key = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
    if (auto sub = v.as_table())
      flatten(*sub, key, out);
    else
      out[key] = render(v, key);
  }
}
}  // namespace

KvConfig KvConfig::parse(const std::string& text, const std::string& origin) {
  KvConfig c;
  try {
    auto tbl = toml::parse(text, origin);
    flatten(tbl, "", c.values_);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << origin << ":" << e.source().begin.line << ": " << e.description();
    fail(ErrorCode::config, msg.str());
  }
  return c;
}

KvConfig KvConfig::load(const std::string& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorCode::io, "cannot read config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

void KvConfig::merge(const KvConfig& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string KvConfig::str(const std::string& key, const std::string& def) const {
  auto it = values_.find(key);
  return it == values_.end() ? def : unquote(it->second);
}

double KvConfig::num(const std::string& key, double def) const {
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  const std::string& s = it->second;
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(s.c_str(), &end);
  require(end && *end == '\0' && errno == 0 && !s.empty(), ErrorCode::config,
          "config key '" + key + "' expects a number, got '" + s + "'");
  return v;
}

std::size_t KvConfig::count(const std::string& key, std::size_t def) const {
  double v = num(key, static_cast<double>(def));
  require(v >= 0 && v == static_cast<double>(static_cast<std::size_t>(v)), ErrorCode::config,
          "config key '" + key + "' expects a non-negative integer");
  return static_cast<std::size_t>(v);
}

std::uint64_t KvConfig::u64(const std::string& key, std::uint64_t def) const {
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  char* end = nullptr;
  errno = 0;
  unsigned long long v = std::strtoull(it->second.c_str(), &end, 10);
  require(end && *end == '\0' && errno == 0 && it->second.front() != '-', ErrorCode::config,
          "config key '" + key + "' expects an unsigned integer");
  return v;
}

bool KvConfig::flag(const std::string& key, bool def) const {
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  if (it->second == "true") return true;
  if (it->second == "false") return false;
  fail(ErrorCode::config, "config key '" + key + "' expects true or false");
}

std::vector<std::string> KvConfig::list(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return {};
  std::string v = it->second;
  if (v.front() != '[') return {unquote(v)};
  std::vector<std::string> out;
  std::string inner = v.substr(1, v.size() - 2), item;
  std::istringstream ss(inner);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(unquote(item));
  }
  return out;
}

std::string KvConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string hash_hex(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

}  // namespace cafe
