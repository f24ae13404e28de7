#include "cafe/error.hpp"

#include <algorithm>
#include <iostream>
#include <mutex>

namespace cafe {

std::string_view code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::ok: return "ok";
    case ErrorCode::usage: return "usage";
    case ErrorCode::config: return "config";
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::format: return "format";
    case ErrorCode::io: return "io";
    case ErrorCode::enumeration_cap: return "enumeration_cap";
    case ErrorCode::defense_exhausted: return "defense_exhausted";
    case ErrorCode::phase_failure: return "phase_failure";
    case ErrorCode::internal: return "internal";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

namespace {
std::mutex g_mu;
std::vector<Warning> g_warnings;
bool g_echo = false;
}  // namespace

void warn(std::string_view code, std::string message) {
  std::lock_guard<std::mutex> lock(g_mu);
  if (g_echo) std::cerr << "warning[" << code << "]: " << message << '\n';
  g_warnings.push_back({std::string(code), std::move(message)});
}

std::vector<Warning> drain_warnings() {
  std::lock_guard<std::mutex> lock(g_mu);
  std::vector<Warning> out;
  out.swap(g_warnings);
  return out;
}

std::vector<Warning> peek_warnings() {
  std::lock_guard<std::mutex> lock(g_mu);
  return g_warnings;
}

bool has_warning(std::string_view code) {
  std::lock_guard<std::mutex> lock(g_mu);
  return std::any_of(g_warnings.begin(), g_warnings.end(),
                     [&](const Warning& w) { return w.code == code; });
}

void set_warning_echo(bool on) {
  std::lock_guard<std::mutex> lock(g_mu);
  g_echo = on;
}

}  // namespace cafe
