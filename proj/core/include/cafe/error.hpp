#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cafe {

// Exit codes of the command line tool are taken from this enum.
enum class ErrorCode : int {
  ok = 0,
  usage = 2,
  config = 3,
  dimension = 4,
  invalid_argument = 5,
  format = 6,
  io = 7,
  enumeration_cap = 8,
  defense_exhausted = 9,
  phase_failure = 10,
  internal = 70,
};

std::string_view code_name(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& msg);

inline void require(bool ok, ErrorCode code, const std::string& msg) {
  if (!ok) fail(code, msg);
}

struct Warning {
  std::string code;
  std::string message;
};

// Process-wide warning log. Thread safe.
void warn(std::string_view code, std::string message);
std::vector<Warning> drain_warnings();
std::vector<Warning> peek_warnings();
bool has_warning(std::string_view code);
void set_warning_echo(bool on);

}  // namespace cafe
