#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

#include "dgrpc/common.h"

namespace dgrpc {

enum class PktType : uint8_t {
  kReqData = 0,
  kRespData = 1,
  kCreditReturn = 2,
  kRequestForResponse = 3,
};

std::string_view to_string(PktType t);

inline constexpr uint8_t kWireVersion = 1;
inline constexpr uint16_t kFlagErrorResponse = 0x1;

/// Header carried at the front of every datagram.
///
/// Wire layout (16 bytes, little-endian):
///
///   byte 0      : version (bits 0-3) | pkt_type (bits 4-7)
///   byte 1      : req_type
///   bytes 2-3   : session_num (receiver's session index)
///   bytes 4-5   : pkt_num
///   bytes 6-7   : flags
///   bytes 8-11  : req_num
///   bytes 12-15 : msg_size
///
/// For a credit return pkt_num is the request packet being credited; for a
/// request-for-response it is the response packet being asked for.
struct PacketHeader {
  uint8_t version = 0;
  PktType pkt_type = PktType::kReqData;
  uint8_t req_type = 0;
  uint16_t session_num = 0;
  uint16_t pkt_num = 0;
  uint16_t flags = 0;
  uint32_t req_num = 0;
  uint32_t msg_size = 0;

  bool operator==(const PacketHeader&) const = default;
};

using HeaderBytes = std::array<std::byte, kHeaderSize>;

/// Throws CodecError if version does not fit in 4 bits or msg_size exceeds
/// kMaxMsgSize.
void pack_header(const PacketHeader& h, std::span<std::byte, kHeaderSize> out);
HeaderBytes pack_header(const PacketHeader& h);

/// Throws CodecError on wrong length, unknown pkt_type or oversized msg_size.
PacketHeader unpack_header(std::span<const std::byte> bytes);

}  // namespace dgrpc
