#pragma once

#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>

namespace friendly {

inline constexpr const char* kVersion = "0.1.0";

/// Base error type for the whole library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a training loss turns non-finite.
class Diverged : public Error {
 public:
  using Error::Error;
};

/// FRIENDLY_DEBUG_CHECKS=1 enables NaN and batch-partition assertions.
inline bool debug_checks_enabled() {
  static const bool on = [] {
    const char* v = std::getenv("FRIENDLY_DEBUG_CHECKS");
    return v != nullptr && v[0] == '1';
  }();
  return on;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace friendly
