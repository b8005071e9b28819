#include "dgrpc/packet_header.h"

#include <string>

namespace dgrpc {

namespace {

template <typename T>
void put_le(std::byte* p, T v) {
  for (size_t i = 0; i < sizeof(T); i++) {
    p[i] = static_cast<std::byte>((v >> (8 * i)) & 0xff);
  }
}

template <typename T>
T get_le(const std::byte* p) {
  T v = 0;
  for (size_t i = 0; i < sizeof(T); i++) {
    v |= static_cast<T>(static_cast<T>(std::to_integer<uint8_t>(p[i])) << (8 * i));
  }
  return v;
}

}  // namespace

std::string_view to_string(PktType t) {
  switch (t) {
    case PktType::kReqData: return "REQ";
    case PktType::kRespData: return "RESP";
    case PktType::kCreditReturn: return "CR";
    case PktType::kRequestForResponse: return "RFR";
  }
  return "?";
}

void pack_header(const PacketHeader& h, std::span<std::byte, kHeaderSize> out) {
  if (h.version > 0xf) throw CodecError("header version does not fit in 4 bits");
  if (static_cast<uint8_t>(h.pkt_type) > 3) throw CodecError("unknown packet type");
  if (h.msg_size > kMaxMsgSize) throw CodecError("msg_size exceeds maximum message size");

  std::byte* p = out.data();
  p[0] = static_cast<std::byte>((h.version & 0xf) | (static_cast<uint8_t>(h.pkt_type) << 4));
  p[1] = static_cast<std::byte>(h.req_type);
  put_le<uint16_t>(p + 2, h.session_num);
  put_le<uint16_t>(p + 4, h.pkt_num);
  put_le<uint16_t>(p + 6, h.flags);
  put_le<uint32_t>(p + 8, h.req_num);
  put_le<uint32_t>(p + 12, h.msg_size);
}

HeaderBytes pack_header(const PacketHeader& h) {
  HeaderBytes out{};
  pack_header(h, std::span<std::byte, kHeaderSize>(out));
  return out;
}

PacketHeader unpack_header(std::span<const std::byte> bytes) {
  if (bytes.size() != kHeaderSize) {
    throw CodecError("header must be exactly 16 bytes, got " + std::to_string(bytes.size()));
  }
  const std::byte* p = bytes.data();
  const auto b0 = std::to_integer<uint8_t>(p[0]);
  const uint8_t type = b0 >> 4;
  if (type > 3) throw CodecError("unknown packet type " + std::to_string(type));

  PacketHeader h;
  h.version = b0 & 0xf;
  h.pkt_type = static_cast<PktType>(type);
  h.req_type = std::to_integer<uint8_t>(p[1]);
  h.session_num = get_le<uint16_t>(p + 2);
  h.pkt_num = get_le<uint16_t>(p + 4);
  h.flags = get_le<uint16_t>(p + 6);
  h.req_num = get_le<uint32_t>(p + 8);
  h.msg_size = get_le<uint32_t>(p + 12);
  if (h.msg_size > kMaxMsgSize) throw CodecError("msg_size exceeds maximum message size");
  return h;
}

}  // namespace dgrpc
