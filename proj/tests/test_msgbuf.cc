#include <gtest/gtest.h>

#include <random>

#include "dgrpc/msgbuf.h"
#include "oracles.h"

using namespace dgrpc;

TEST(MsgBuf, LayoutOracleOnRandomShapes) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 300; i++) {
    const size_t mtu = 64 + rng() % 9000;
    const size_t cap = 1 + rng() % (size_t{1} << 20);
    MsgBuf m = MsgBuf::alloc(cap, mtu);
    ASSERT_EQ(oracle::check_layout(m), "") << "cap " << cap << " mtu " << mtu;
    m.resize(rng() % (cap + 1));
    ASSERT_EQ(oracle::check_layout(m), "") << "resized to " << m.data_size();
  }
}

TEST(MsgBuf, LargestMessage) {
  for (size_t mtu : {size_t{1024}, size_t{1408}, size_t{4096}}) {
    MsgBuf m = MsgBuf::alloc(kMaxMsgSize, mtu);
    EXPECT_EQ(oracle::check_layout(m), "");
    EXPECT_EQ(m.num_pkts(), (kMaxMsgSize + mtu - 1) / mtu);
  }
}

TEST(MsgBuf, SmallCases) {
  MsgBuf m = MsgBuf::alloc(1, 1408);
  EXPECT_EQ(m.num_pkts(), 1u);
  EXPECT_EQ(m.backing_size(), 17u);
  m.resize(0);
  EXPECT_EQ(m.num_pkts(), 1u);
  EXPECT_EQ(m.pkt_data_range(0), (PktRange{0, 0}));

  MsgBuf two = MsgBuf::alloc(1409, 1408);
  EXPECT_EQ(two.num_pkts(), 2u);
  EXPECT_EQ(two.header_offset(1), 16u + 1409u);
  EXPECT_EQ(two.pkt_data_range(1), (PktRange{1408, 1}));
}

TEST(MsgBuf, ShrinkKeepsDataInPlace) {
  MsgBuf m = MsgBuf::alloc(5000, 1000);
  const auto* before = m.data().data();
  const size_t h4 = m.header_offset(4);
  m.resize(10);
  EXPECT_EQ(m.data().data(), before);
  EXPECT_EQ(m.header_offset(4), h4);
  EXPECT_EQ(m.num_pkts(), 1u);
  m.resize(5000);
  EXPECT_EQ(m.num_pkts(), 5u);
}

TEST(MsgBuf, SizeErrors) {
  EXPECT_THROW(MsgBuf::alloc(0), SizeError);
  EXPECT_THROW(MsgBuf::alloc(kMaxMsgSize + 1), SizeError);
  EXPECT_THROW(MsgBuf::alloc(10, 0), SizeError);
  MsgBuf m = MsgBuf::alloc(100);
  EXPECT_THROW(m.resize(101), SizeError);
  EXPECT_THROW(m.pkt_data_range(1), std::out_of_range);
  EXPECT_THROW(m.header_offset(1), std::out_of_range);
}

TEST(MsgBuf, LockedBufferRejectsWrites) {
  MsgBuf m = MsgBuf::alloc(64);
  m.mutable_data()[0] = std::byte{1};
  m.lock();
  EXPECT_THROW(m.mutable_data(), OwnershipError);
  EXPECT_EQ(m.data()[0], std::byte{1});  // reads stay allowed
  m.unlock();
  EXPECT_NO_THROW(m.mutable_data());
}

TEST(MsgBuf, ZeroInitialized) {
  MsgBuf m = MsgBuf::alloc(3000, 1000);
  for (std::byte b : m.data()) ASSERT_EQ(b, std::byte{0});
}
