#include "dgrpc/mgmt.h"

#include <string>

namespace dgrpc {

namespace {

void put16(std::byte* p, uint16_t v) {
  p[0] = std::byte(v & 0xff);
  p[1] = std::byte(v >> 8);
}

void put32(std::byte* p, uint32_t v) {
  for (int i = 0; i < 4; i++) p[i] = std::byte((v >> (8 * i)) & 0xff);
}

uint16_t get16(const std::byte* p) {
  return static_cast<uint16_t>(std::to_integer<uint16_t>(p[0]) |
                               (std::to_integer<uint16_t>(p[1]) << 8));
}

uint32_t get32(const std::byte* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; i++) v |= std::to_integer<uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::byte> encode_mgmt(const MgmtMsg& m) {
  std::vector<std::byte> out(kMgmtFrameHeader + kMgmtPayload);
  std::byte* p = out.data();
  p[0] = std::byte{kMgmtVersion};
  p[1] = std::byte(static_cast<uint8_t>(m.type));
  put32(p + 4, kMgmtPayload);
  std::byte* q = p + kMgmtFrameHeader;
  put16(q + 0, m.client_session);
  put16(q + 2, m.server_session);
  put16(q + 4, m.credits);
  put16(q + 6, m.num_slots);
  put32(q + 8, m.mtu_data);
  q[12] = std::byte(static_cast<uint8_t>(m.status));
  return out;
}

MgmtMsg decode_mgmt(std::span<const std::byte> bytes) {
  if (bytes.size() < kMgmtFrameHeader) throw CodecError("management frame too short");
  const std::byte* p = bytes.data();
  if (std::to_integer<uint8_t>(p[0]) != kMgmtVersion) {
    throw CodecError("unsupported management version " +
                     std::to_string(std::to_integer<int>(p[0])));
  }
  const auto type = std::to_integer<uint8_t>(p[1]);
  if (type < 1 || type > 4) throw CodecError("unknown management message type");
  const uint32_t len = get32(p + 4);
  if (len != kMgmtPayload || bytes.size() != kMgmtFrameHeader + len) {
    throw CodecError("management payload length mismatch");
  }
  const std::byte* q = p + kMgmtFrameHeader;
  MgmtMsg m;
  m.type = static_cast<MgmtType>(type);
  m.client_session = get16(q + 0);
  m.server_session = get16(q + 2);
  m.credits = get16(q + 4);
  m.num_slots = get16(q + 6);
  m.mtu_data = get32(q + 8);
  const auto st = std::to_integer<uint8_t>(q[12]);
  if (st > 2) throw CodecError("unknown management status");
  m.status = static_cast<MgmtStatus>(st);
  return m;
}

}  // namespace dgrpc
