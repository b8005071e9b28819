#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <span>

#include "dgrpc/common.h"
#include "dgrpc/packet_header.h"

namespace dgrpc {

struct PktRange {
  size_t offset = 0;
  size_t length = 0;
  bool operator==(const PktRange&) const = default;
};

/// Number of packets needed for `data_size` bytes at `mtu_data` bytes of
/// payload per packet. An empty message still takes one packet.
constexpr size_t num_pkts_for(size_t data_size, size_t mtu_data) {
  return data_size == 0 ? 1 : (data_size + mtu_data - 1) / mtu_data;
}

/// A message buffer: one contiguous data region plus one header slot per
/// packet. The backing region is laid out as
///
///   [hdr 0][data ........................][hdr 1][hdr 2]...[hdr N-1]
///
/// so the first packet (header and data) is a single contiguous range and
/// the application sees an opaque contiguous payload. N is fixed by the
/// allocation capacity; shrinking the message never moves the data region.
///
/// While an endpoint owns the buffer (between enqueue_request and the
/// continuation) mutable access throws OwnershipError.
class MsgBuf {
 public:
  MsgBuf() = default;
  MsgBuf(MsgBuf&&) noexcept = default;
  MsgBuf& operator=(MsgBuf&&) noexcept = default;
  MsgBuf(const MsgBuf&) = delete;
  MsgBuf& operator=(const MsgBuf&) = delete;

  /// Requires 1 <= data_capacity <= kMaxMsgSize and mtu_data >= 1; throws
  /// SizeError otherwise. data_size starts at data_capacity.
  static MsgBuf alloc(size_t data_capacity, size_t mtu_data = kDefaultMtuData);

  bool valid() const { return backing_ != nullptr; }
  size_t capacity() const { return capacity_; }
  size_t data_size() const { return data_size_; }
  size_t mtu_data() const { return mtu_data_; }
  size_t num_pkts() const { return num_pkts_for(data_size_, mtu_data_); }
  size_t max_pkts() const { return max_pkts_; }
  size_t backing_size() const { return kHeaderSize * max_pkts_ + capacity_; }

  /// Shrinks or grows data_size within capacity. Throws SizeError past it.
  void resize(size_t new_size);

  std::span<const std::byte> data() const { return {backing_.get() + kHeaderSize, data_size_}; }
  /// Throws OwnershipError while the endpoint owns this buffer.
  std::span<std::byte> mutable_data();

  /// Offsets into the backing region, exposed for layout checks.
  size_t data_offset() const { return kHeaderSize; }
  size_t header_offset(size_t pkt_idx) const;

  std::span<std::byte, kHeaderSize> header_region(size_t pkt_idx);
  std::span<const std::byte, kHeaderSize> header_region(size_t pkt_idx) const;

  /// Payload range of packet `pkt_idx` relative to the start of data.
  /// Throws std::out_of_range if pkt_idx >= num_pkts().
  PktRange pkt_data_range(size_t pkt_idx) const;
  std::span<const std::byte> pkt_data(size_t pkt_idx) const;

  /// Raw backing access for the endpoint's reassembly path.
  std::byte* backing() { return backing_.get(); }
  const std::byte* backing() const { return backing_.get(); }

  // Ownership tracking. The endpoint locks application buffers it has taken
  // over; transmit queues count the references they hold.
  bool locked() const { return locked_; }
  void lock() { locked_ = true; }
  void unlock() { locked_ = false; }

  int tx_refs() const { return tx_refs_; }
  void retain_tx() const { tx_refs_++; }
  void release_tx() const { tx_refs_--; }

 private:
  struct FreeDeleter {
    void operator()(std::byte* p) const { std::free(p); }
  };

  std::unique_ptr<std::byte[], FreeDeleter> backing_;
  size_t capacity_ = 0;
  size_t data_size_ = 0;
  size_t mtu_data_ = kDefaultMtuData;
  size_t max_pkts_ = 0;
  bool locked_ = false;
  mutable int tx_refs_ = 0;
};

}  // namespace dgrpc
