#pragma once

#include <deque>
#include <string>
#include <vector>

#include "dgrpc/transport.h"

namespace dgrpc {

/// Datagram transport over a non-blocking UDP socket: one datagram per
/// packet, header first, then payload. Management messages share the socket
/// and are told apart by a leading 0xC0 byte, which no data header can start
/// with (the packet-type nibble is at most 3).
///
/// Meant for end-to-end sanity runs; the simulator is used for anything
/// quantitative.
class UdpTransport final : public Transport {
 public:
  struct Options {
    std::string bind_ip = "127.0.0.1";
    uint16_t port = 0;  // 0 picks an ephemeral port
    size_t mtu_data = kDefaultMtuData;
    size_t rx_queue_size = kDefaultRxQueueSize;
  };

  explicit UdpTransport(const Options& opts);
  ~UdpTransport() override;
  UdpTransport(const UdpTransport&) = delete;
  UdpTransport& operator=(const UdpTransport&) = delete;

  EndpointAddr local_addr() const override { return local_; }
  size_t mtu_data() const override { return mtu_data_; }
  size_t rx_queue_size() const override { return rxq_.capacity(); }

  size_t tx_burst(std::span<const TxPacket> pkts) override;
  size_t rx_burst(size_t max, std::vector<RxPacket>& out) override;
  void release_rx(uint32_t desc) override { rxq_.release(desc); }
  /// sendmsg() copies synchronously, so nothing is ever left queued.
  void flush_tx() override {}

  void send_control(EndpointAddr dest, std::span<const std::byte> bytes) override;
  bool poll_control(ControlMsg& out) override;

  uint64_t rx_drops() const override { return rxq_.drops(); }

  static uint32_t parse_ipv4(const std::string& ip);

 private:
  void drain_socket(size_t max_data);

  int fd_ = -1;
  EndpointAddr local_;
  size_t mtu_data_;
  RxQueue rxq_;
  std::deque<ControlMsg> control_;
  std::vector<std::byte> scratch_;
};

}  // namespace dgrpc
