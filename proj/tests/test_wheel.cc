#include <gtest/gtest.h>

#include "dgrpc/congestion.h"
#include "dgrpc/timing_wheel.h"

using namespace dgrpc;
using std::chrono::microseconds;
using std::chrono::milliseconds;

TEST(TimingWheel, SlotArithmetic) {
  TimingWheel<int> w(microseconds(10), milliseconds(10));
  EXPECT_EQ(w.insert(1, microseconds(15), Timestamp{0}), microseconds(20));
  EXPECT_EQ(w.insert(2, microseconds(20), Timestamp{0}), microseconds(20));
  EXPECT_EQ(w.insert(3, microseconds(0), Timestamp{0}), microseconds(0));
  EXPECT_EQ(w.insert(4, Timestamp{1}, Timestamp{0}), microseconds(10));
  EXPECT_EQ(w.size(), 4u);
  EXPECT_EQ(w.next_due(), microseconds(0));

  std::vector<int> out;
  EXPECT_EQ(w.poll(microseconds(0), out), 1u);
  EXPECT_EQ(out, std::vector<int>{3});
  out.clear();
  EXPECT_EQ(w.poll(microseconds(19), out), 1u);
  EXPECT_EQ(out, std::vector<int>{4});
  out.clear();
  EXPECT_EQ(w.poll(microseconds(20), out), 2u);
  EXPECT_EQ(out, (std::vector<int>{1, 2}));  // FIFO within a bucket
  EXPECT_TRUE(w.empty());
  EXPECT_EQ(w.next_due(), kNever);
  EXPECT_EQ(w.early_releases(), 0u);
}

TEST(TimingWheel, ClampsBeyondHorizon) {
  TimingWheel<int> w(microseconds(10), microseconds(100));
  const Timestamp b = w.insert(1, milliseconds(5), Timestamp{0});
  EXPECT_EQ(b, microseconds(90));
  EXPECT_EQ(w.clamped(), 1u);
}

TEST(TimingWheel, EmptyPollAndWrap) {
  TimingWheel<int> w(microseconds(10), microseconds(100));
  std::vector<int> out;
  EXPECT_EQ(w.poll(milliseconds(1), out), 0u);
  // Inserting far past the first lap lands in the right bucket.
  for (int lap = 0; lap < 5; lap++) {
    const Timestamp now = milliseconds(1) + microseconds(110 * lap);
    w.insert(lap, now + microseconds(33), now);
    out.clear();
    w.poll(now + microseconds(39), out);
    EXPECT_TRUE(out.empty());
    w.poll(now + microseconds(40), out);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0], lap);
  }
}

TEST(TimingWheel, CountsMatchAcrossManyInserts) {
  TimingWheel<int> w(microseconds(10), milliseconds(10));
  std::vector<int> out;
  int inserted = 0;
  for (int t = 0; t < 5000; t += 3) {
    w.insert(t, microseconds(t + (t * 7) % 900), microseconds(t));
    inserted++;
    w.poll(microseconds(t), out);
  }
  w.poll(milliseconds(20), out);
  EXPECT_EQ(static_cast<int>(out.size()), inserted);
  EXPECT_EQ(w.early_releases(), 0u);
}

TEST(TimingWheel, BadGeometry) {
  EXPECT_THROW(TimingWheel<int>(microseconds(0), milliseconds(1)), ConfigError);
  EXPECT_THROW(TimingWheel<int>(microseconds(10), microseconds(10)), ConfigError);
}

TEST(Limiter, BypassRules) {
  CongestionKnobs k;
  OptimizationFlags f;
  TimingWheel<int> w;
  PacedSession s(25e9, k);
  EXPECT_EQ(schedule_or_bypass(w, s, 1, 1000, Timestamp{0}, f).decision, TxDecision::kTransmitNow);
  f.limiter_bypass = false;
  EXPECT_EQ(schedule_or_bypass(w, s, 2, 1000, Timestamp{0}, f).decision, TxDecision::kScheduled);
  EXPECT_EQ(s.queued, 1u);
  // With a packet queued, bypass must not reorder the session.
  f.limiter_bypass = true;
  EXPECT_EQ(schedule_or_bypass(w, s, 3, 1000, Timestamp{0}, f).decision, TxDecision::kScheduled);
  f.congestion_control = false;
  EXPECT_EQ(schedule_or_bypass(w, s, 4, 1000, Timestamp{0}, f).decision, TxDecision::kTransmitNow);
}

TEST(Limiter, PacesAtSessionRate) {
  CongestionKnobs k;
  OptimizationFlags f;
  TimingWheel<int> w;
  PacedSession s(25e9, k);
  s.timely.set_rate(1e9);
  // 1000 bytes at 1 Gb/s: 8 us apart.
  Timestamp last{0};
  for (int i = 0; i < 5; i++) {
    schedule_or_bypass(w, s, i, 1000, Timestamp{0}, f);
    EXPECT_EQ(s.next_send, microseconds(8 * (i + 1)));
    last = s.next_send;
  }
  EXPECT_EQ(w.size(), 5u);
  EXPECT_EQ(last, microseconds(40));
  EXPECT_EQ(serialization_time(1000, 1e9), microseconds(8));
}

TEST(RttTimestamper, BatchedAndPerPacket) {
  VirtualClock clk;
  CostModel cost;
  RttTimestamper ts(clk, cost);
  const Timestamp b = ts.batch_timestamp();
  EXPECT_EQ(clk.used(), Duration(8));
  EXPECT_EQ(ts.stamp(), b);
  EXPECT_EQ(clk.used(), Duration(8));
  ts.set_per_packet(true);
  ts.stamp();
  EXPECT_EQ(clk.used(), Duration(16));
}
