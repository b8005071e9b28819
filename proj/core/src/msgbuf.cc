#include "dgrpc/msgbuf.h"

#include <stdexcept>
#include <string>

namespace dgrpc {

MsgBuf MsgBuf::alloc(size_t data_capacity, size_t mtu_data) {
  if (data_capacity < 1 || data_capacity > kMaxMsgSize) {
    throw SizeError("msgbuf capacity " + std::to_string(data_capacity) + " outside [1, 8 MiB]");
  }
  if (mtu_data < 1) throw SizeError("mtu_data must be at least 1");

  MsgBuf m;
  m.capacity_ = data_capacity;
  m.data_size_ = data_capacity;
  m.mtu_data_ = mtu_data;
  m.max_pkts_ = num_pkts_for(data_capacity, mtu_data);
  // calloc keeps large buffers lazily zeroed by the kernel.
  auto* raw = static_cast<std::byte*>(std::calloc(m.backing_size(), 1));
  if (raw == nullptr) throw std::bad_alloc();
  m.backing_.reset(raw);
  return m;
}

void MsgBuf::resize(size_t new_size) {
  if (new_size > capacity_) {
    throw SizeError("resize to " + std::to_string(new_size) + " exceeds capacity " +
                    std::to_string(capacity_));
  }
  data_size_ = new_size;
}

std::span<std::byte> MsgBuf::mutable_data() {
  if (locked_) throw OwnershipError("msgbuf is owned by the endpoint until its continuation runs");
  return {backing_.get() + kHeaderSize, data_size_};
}

size_t MsgBuf::header_offset(size_t pkt_idx) const {
  if (pkt_idx >= max_pkts_) throw std::out_of_range("header index out of range");
  if (pkt_idx == 0) return 0;
  return kHeaderSize + capacity_ + (pkt_idx - 1) * kHeaderSize;
}

std::span<std::byte, kHeaderSize> MsgBuf::header_region(size_t pkt_idx) {
  return std::span<std::byte, kHeaderSize>(backing_.get() + header_offset(pkt_idx), kHeaderSize);
}

std::span<const std::byte, kHeaderSize> MsgBuf::header_region(size_t pkt_idx) const {
  return std::span<const std::byte, kHeaderSize>(backing_.get() + header_offset(pkt_idx),
                                                 kHeaderSize);
}

PktRange MsgBuf::pkt_data_range(size_t pkt_idx) const {
  const size_t n = num_pkts();
  if (pkt_idx >= n) {
    throw std::out_of_range("packet index " + std::to_string(pkt_idx) + " >= " + std::to_string(n));
  }
  const size_t offset = pkt_idx * mtu_data_;
  const size_t length = (pkt_idx + 1 == n) ? data_size_ - offset : mtu_data_;
  return {offset, length};
}

std::span<const std::byte> MsgBuf::pkt_data(size_t pkt_idx) const {
  const PktRange r = pkt_data_range(pkt_idx);
  return data().subspan(r.offset, r.length);
}

}  // namespace dgrpc
