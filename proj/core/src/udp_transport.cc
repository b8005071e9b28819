#include "dgrpc/udp_transport.h"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/uio.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <system_error>

namespace dgrpc {

namespace {

constexpr std::byte kControlTag{0xC0};

sockaddr_in to_sockaddr(EndpointAddr a) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_addr.s_addr = htonl(a.host);
  sa.sin_port = htons(a.port);
  return sa;
}

}  // namespace

uint32_t UdpTransport::parse_ipv4(const std::string& ip) {
  in_addr a{};
  if (inet_pton(AF_INET, ip.c_str(), &a) != 1) throw ConfigError("bad IPv4 address: " + ip);
  return ntohl(a.s_addr);
}

UdpTransport::UdpTransport(const Options& opts)
    : mtu_data_(opts.mtu_data),
      rxq_(opts.rx_queue_size, kHeaderSize + opts.mtu_data),
      scratch_(kHeaderSize + opts.mtu_data + 64) {
  fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd_ < 0) throw std::system_error(errno, std::generic_category(), "socket");
  ::fcntl(fd_, F_SETFL, ::fcntl(fd_, F_GETFL) | O_NONBLOCK);
  int buf = 8 << 20;
  ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &buf, sizeof(buf));
  ::setsockopt(fd_, SOL_SOCKET, SO_SNDBUF, &buf, sizeof(buf));

  sockaddr_in sa = to_sockaddr({parse_ipv4(opts.bind_ip), opts.port});
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
    const int err = errno;
    ::close(fd_);
    throw std::system_error(err, std::generic_category(), "bind");
  }
  socklen_t len = sizeof(sa);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len);
  local_ = {ntohl(sa.sin_addr.s_addr), ntohs(sa.sin_port)};
}

UdpTransport::~UdpTransport() {
  if (fd_ >= 0) ::close(fd_);
}

size_t UdpTransport::tx_burst(std::span<const TxPacket> pkts) {
  size_t sent = 0;
  for (const TxPacket& p : pkts) {
    if (p.payload.size() > mtu_data_) throw SizeError("packet payload exceeds mtu_data");
    if (p.dest.port == 0) throw ConfigError("unresolvable destination (port 0)");
    sockaddr_in sa = to_sockaddr(p.dest);
    iovec iov[2];
    iov[0].iov_base = const_cast<std::byte*>(p.header.data());
    iov[0].iov_len = kHeaderSize;
    iov[1].iov_base = const_cast<std::byte*>(p.payload.data());
    iov[1].iov_len = p.payload.size();
    msghdr mh{};
    mh.msg_name = &sa;
    mh.msg_namelen = sizeof(sa);
    mh.msg_iov = iov;
    mh.msg_iovlen = p.payload.empty() ? 1 : 2;
    // A full socket buffer is just loss; the protocol recovers.
    if (::sendmsg(fd_, &mh, 0) >= 0) sent++;
  }
  return sent;
}

void UdpTransport::drain_socket(size_t max_data) {
  size_t got = 0;
  while (got < max_data) {
    sockaddr_in sa{};
    socklen_t len = sizeof(sa);
    const ssize_t n = ::recvfrom(fd_, scratch_.data(), scratch_.size(), 0,
                                 reinterpret_cast<sockaddr*>(&sa), &len);
    if (n < 0) break;
    const EndpointAddr src{ntohl(sa.sin_addr.s_addr), ntohs(sa.sin_port)};
    const auto bytes = std::span<const std::byte>(scratch_.data(), static_cast<size_t>(n));
    if (n >= 1 && bytes[0] == kControlTag) {
      control_.push_back({src, {bytes.begin() + 1, bytes.end()}});
      continue;
    }
    if (static_cast<size_t>(n) < kHeaderSize) continue;
    rxq_.deliver(src, bytes);
    got++;
  }
}

size_t UdpTransport::rx_burst(size_t max, std::vector<RxPacket>& out) {
  drain_socket(max);
  return rxq_.take(max, out);
}

void UdpTransport::send_control(EndpointAddr dest, std::span<const std::byte> bytes) {
  std::vector<std::byte> buf;
  buf.reserve(bytes.size() + 1);
  buf.push_back(kControlTag);
  buf.insert(buf.end(), bytes.begin(), bytes.end());
  sockaddr_in sa = to_sockaddr(dest);
  ::sendto(fd_, buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&sa), sizeof(sa));
}

bool UdpTransport::poll_control(ControlMsg& out) {
  // Data datagrams read along the way stay queued for the next rx_burst.
  if (control_.empty()) drain_socket(64);
  if (control_.empty()) return false;
  out = std::move(control_.front());
  control_.pop_front();
  return true;
}

}  // namespace dgrpc
