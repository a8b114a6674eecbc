#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

namespace maskforest {

// Matrix / vector dimension mismatch.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Ciphertext outside the valid residue group of its public key.
struct InvalidCiphertext : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A protocol phase could not complete; carries the phase name.
struct ProtocolAbort : std::runtime_error {
  std::string round;
  ProtocolAbort(std::string round_name, const std::string& what)
      : std::runtime_error(round_name + ": " + what), round(std::move(round_name)) {}
};

// CSV / transcript ingestion failure; line is 1-based.
struct ParseError : std::runtime_error {
  std::size_t line;
  ParseError(std::size_t line_no, const std::string& what)
      : std::runtime_error("line " + std::to_string(line_no) + ": " + what), line(line_no) {}
};

enum class LogLevel : int { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel log_threshold() {
  static const LogLevel lvl = [] {
    const char* env = std::getenv("MASKFOREST_LOG");
    if (env == nullptr) return LogLevel::warn;
    if (std::strcmp(env, "error") == 0) return LogLevel::error;
    if (std::strcmp(env, "warn") == 0) return LogLevel::warn;
    if (std::strcmp(env, "info") == 0) return LogLevel::info;
    if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
    return LogLevel::warn;
  }();
  return lvl;
}

inline void vlogf(LogLevel lvl, const char* fmt, std::va_list args) {
  if (static_cast<int>(lvl) > static_cast<int>(log_threshold())) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::fprintf(stderr, "[maskforest %s] ", names[static_cast<int>(lvl)]);
  std::vfprintf(stderr, fmt, args);
  std::fputc('\n', stderr);
}

inline void log_error(const char* fmt, ...) {
  std::va_list args;
  va_start(args, fmt);
  vlogf(LogLevel::error, fmt, args);
  va_end(args);
}

inline void log_warn(const char* fmt, ...) {
  std::va_list args;
  va_start(args, fmt);
  vlogf(LogLevel::warn, fmt, args);
  va_end(args);
}

inline void log_info(const char* fmt, ...) {
  std::va_list args;
  va_start(args, fmt);
  vlogf(LogLevel::info, fmt, args);
  va_end(args);
}

inline void log_debug(const char* fmt, ...) {
  std::va_list args;
  va_start(args, fmt);
  vlogf(LogLevel::debug, fmt, args);
  va_end(args);
}

}  // namespace maskforest
