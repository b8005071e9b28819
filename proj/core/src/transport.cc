#include "dgrpc/transport.h"

#include <cstring>
#include <stdexcept>

namespace dgrpc {

RxQueue::RxQueue(size_t capacity, size_t buf_size)
    : capacity_(capacity), buf_size_(buf_size), slots_(capacity) {
  if (capacity == 0) throw ConfigError("receive queue capacity must be positive");
  mem_.reset(static_cast<std::byte*>(std::calloc(capacity * buf_size, 1)));
  if (!mem_) throw std::bad_alloc();
  free_.reserve(capacity);
  // Hand out low descriptors first.
  for (size_t i = capacity; i > 0; i--) free_.push_back(static_cast<uint32_t>(i - 1));
}

bool RxQueue::deliver(EndpointAddr src, std::span<const std::byte> bytes) {
  if (free_.empty() || bytes.size() > buf_size_) {
    drops_++;
    return false;
  }
  const uint32_t d = free_.back();
  free_.pop_back();
  std::memcpy(mem_.get() + size_t{d} * buf_size_, bytes.data(), bytes.size());
  slots_[d].src = src;
  slots_[d].len = static_cast<uint32_t>(bytes.size());
  ready_.push_back(d);
  delivered_++;
  return true;
}

size_t RxQueue::take(size_t max, std::vector<RxPacket>& out) {
  size_t n = 0;
  while (n < max && !ready_.empty()) {
    const uint32_t d = ready_.front();
    ready_.pop_front();
    Slot& s = slots_[d];
    s.lent = true;
    out.push_back(RxPacket{s.src, {mem_.get() + size_t{d} * buf_size_, s.len}, d});
    n++;
  }
  return n;
}

void RxQueue::release(uint32_t desc) {
  if (desc >= capacity_ || !slots_[desc].lent) {
    throw std::logic_error("release_rx of a descriptor that is not lent out");
  }
  slots_[desc].lent = false;
  free_.push_back(desc);
}

std::vector<std::byte> materialize(const TxPacket& p) {
  std::vector<std::byte> out(kHeaderSize + p.payload.size());
  std::memcpy(out.data(), p.header.data(), kHeaderSize);
  if (!p.payload.empty()) std::memcpy(out.data() + kHeaderSize, p.payload.data(), p.payload.size());
  return out;
}

}  // namespace dgrpc
