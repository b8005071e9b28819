#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dgrpc {

/// All timestamps are nanoseconds since the owning clock's epoch. The
/// simulator's epoch is t = 0; the real clock uses steady_clock's epoch.
using Duration = std::chrono::nanoseconds;
using Timestamp = std::chrono::nanoseconds;

inline constexpr Timestamp kNever = Timestamp::max();

inline constexpr size_t kHeaderSize = 16;
inline constexpr size_t kMaxMsgSize = size_t{8} << 20;  // 8 MiB
inline constexpr size_t kDefaultMtuData = 1408;
inline constexpr size_t kDefaultRxQueueSize = 4096;
inline constexpr uint32_t kDefaultCredits = 8;
inline constexpr uint32_t kDefaultNumSlots = 8;
inline constexpr Duration kDefaultRto = std::chrono::milliseconds(5);

inline double to_usec(Duration d) { return static_cast<double>(d.count()) / 1e3; }

class SizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SessionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when the application touches a msgbuf the endpoint currently owns.
class OwnershipError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace dgrpc
