#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dgrpc/common.h"

namespace dgrpc {

/// Session-management messages, carried on the transport's control channel.
///
/// Frame: [version u8][type u8][reserved u16][payload_len u32][payload]
/// Payload (16 bytes, little-endian):
///   client_session u16, server_session u16, credits u16, num_slots u16,
///   mtu_data u32, status u8, 3 reserved bytes.
enum class MgmtType : uint8_t {
  kConnectReq = 1,
  kConnectResp = 2,
  kHeartbeat = 3,
  kDisconnect = 4,
};

enum class MgmtStatus : uint8_t {
  kOk = 0,
  kNoRxBudget = 1,
  kBadConfig = 2,
};

inline constexpr uint8_t kMgmtVersion = 1;
inline constexpr size_t kMgmtFrameHeader = 8;
inline constexpr size_t kMgmtPayload = 16;

struct MgmtMsg {
  MgmtType type = MgmtType::kHeartbeat;
  uint16_t client_session = 0;
  uint16_t server_session = 0;
  uint16_t credits = 0;
  uint16_t num_slots = 0;
  uint32_t mtu_data = 0;
  MgmtStatus status = MgmtStatus::kOk;

  bool operator==(const MgmtMsg&) const = default;
};

std::vector<std::byte> encode_mgmt(const MgmtMsg& m);
/// Throws CodecError on a bad version, unknown type or length mismatch.
MgmtMsg decode_mgmt(std::span<const std::byte> bytes);

}  // namespace dgrpc
