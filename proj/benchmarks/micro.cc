#include <benchmark/benchmark.h>

#include <cstring>

#include "dgrpc/congestion.h"
#include "dgrpc/packet_header.h"
#include "dgrpc/sim/cluster.h"
#include "dgrpc/timely.h"

using namespace dgrpc;

static void BM_PackHeader(benchmark::State& state) {
  PacketHeader h{kWireVersion, PktType::kReqData, 3, 17, 5, 0, 123456, 4096};
  HeaderBytes b{};
  for (auto _ : state) {
    h.req_num++;
    pack_header(h, b);
    benchmark::DoNotOptimize(b);
  }
}
BENCHMARK(BM_PackHeader);

static void BM_UnpackHeader(benchmark::State& state) {
  const HeaderBytes b = pack_header(PacketHeader{kWireVersion, PktType::kRespData, 1, 2, 3, 0, 4, 5});
  for (auto _ : state) benchmark::DoNotOptimize(unpack_header(b));
}
BENCHMARK(BM_UnpackHeader);

static void BM_TimelyUpdate(benchmark::State& state) {
  const CongestionKnobs k;
  TimelyState t(25e9, k);
  int64_t now = 0;
  double rtt = 60;
  for (auto _ : state) {
    now += 1000;
    rtt = rtt > 400 ? 60 : rtt + 7;
    benchmark::DoNotOptimize(t.record_rtt_and_update(rtt, Timestamp{now}, false));
  }
}
BENCHMARK(BM_TimelyUpdate);

static void BM_WheelInsertPoll(benchmark::State& state) {
  TimingWheel<int> wheel(std::chrono::microseconds(10), std::chrono::milliseconds(10));
  std::vector<int> out;
  int64_t now = 0;
  const auto batch = static_cast<int>(state.range(0));
  for (auto _ : state) {
    for (int i = 0; i < batch; i++) {
      wheel.insert(i, Timestamp{now + i * 800}, Timestamp{now});
    }
    now += batch * 800;
    out.clear();
    wheel.poll(Timestamp{now}, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_WheelInsertPoll)->Arg(1)->Arg(16)->Arg(256);

static void BM_MsgBufAlloc(benchmark::State& state) {
  const auto size = static_cast<size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(MsgBuf::alloc(size));
}
BENCHMARK(BM_MsgBufAlloc)->Arg(32)->Arg(1 << 20);

// Wall-clock cost of simulating small echo RPCs end to end.
static void BM_SimEchoRpc(benchmark::State& state) {
  sim::SimCluster c(sim::SimConfig{}, EndpointConfig{});
  c.ep(1).register_handler(
      1,
      [](ReqHandle& h) {
        h.init_response(32);
        h.endpoint().enqueue_response(h);
      },
      HandlerMode::kDispatch);
  const uint16_t s = c.connect(0, 1);
  MsgBuf req = c.ep(0).alloc_msg_buffer(32);
  MsgBuf resp = c.ep(0).alloc_msg_buffer(32);
  for (auto _ : state) {
    bool done = false;
    c.at(0, c.net().now(), [&] {
      c.ep(0).enqueue_request(s, 1, req, resp, [&](RpcStatus, MsgBuf&) { done = true; });
    });
    c.net().run_while_not([&] { return done; }, c.net().now() + std::chrono::seconds(1));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_SimEchoRpc);
BENCHMARK_MAIN();
