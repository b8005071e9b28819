// bench: benchmark and demo harness.
//
//   bench latency   --transport sim|udp [--num N] [--msg-size B]
//   bench rate      [--batch B] [--hosts H] [--factor-analysis]
//   bench bandwidth [--loss 0 1e-6 ...] [--msg-size B]
//   bench incast    [--fan-in 50 ...] [--compare-cc]
//   bench kv
//
// Every report starts with '#' lines recording the configuration, seed and
// source revision, followed by CSV.

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "dgrpc/sim/scenarios.h"
#include "dgrpc/udp_transport.h"

#ifndef DGRPC_GIT_REV
#define DGRPC_GIT_REV "unknown"
#endif

namespace {

using namespace dgrpc;
using namespace dgrpc::sim;

struct BenchConfig {
  std::string cmd;
  std::string transport = "sim";
  uint32_t batch = 8;
  uint32_t in_flight = 8;
  uint32_t credits = 0;  // 0: subcommand default
  uint32_t slots = 0;
  std::vector<double> loss{0};
  std::vector<uint32_t> fan_in{50};
  bool compare_cc = false;
  bool factor_analysis = false;
  uint32_t hosts = 4;
  size_t msg_size = 0;  // 0: subcommand default
  size_t num = 0;
  double rto_ms = 5;
  bool disable_cc = false;
  bool disable_timely_bypass = false;
  bool disable_limiter_bypass = false;
  bool disable_batched_ts = false;
  bool disable_prealloc = false;
  bool disable_zerocopy_rx = false;
  uint64_t seed = 1;
  std::string config_path;
  std::string out;

  void validate() const {
    if (transport != "sim" && transport != "udp") throw ConfigError("transport must be sim or udp");
    if (transport == "udp" && cmd != "latency") {
      throw ConfigError("the udp transport only supports the latency benchmark");
    }
    if (in_flight == 0) throw ConfigError("in-flight must be positive");
    if (batch == 0) throw ConfigError("batch must be positive");
    if (slots != 0 && !std::has_single_bit(slots)) throw ConfigError("slots must be a power of two");
    if (msg_size > kMaxMsgSize) throw ConfigError("msg-size exceeds 8 MiB");
    for (double l : loss) {
      if (l < 0 || l >= 1) throw ConfigError("loss must be in [0, 1)");
    }
    for (uint32_t f : fan_in) {
      if (f < 1) throw ConfigError("fan-in must be at least 1");
    }
    if (rto_ms <= 0) throw ConfigError("rto-ms must be positive");
  }

  EndpointConfig endpoint() const {
    EndpointConfig e;
    if (credits) e.credits = credits;
    if (slots) e.num_slots = slots;
    e.rto = std::chrono::duration_cast<Duration>(std::chrono::duration<double, std::milli>(rto_ms));
    e.opt.congestion_control = !disable_cc;
    e.opt.timely_bypass = !disable_timely_bypass;
    e.opt.limiter_bypass = !disable_limiter_bypass;
    e.opt.batched_timestamps = !disable_batched_ts;
    e.opt.preallocated_responses = !disable_prealloc;
    e.opt.zero_copy_rx = !disable_zerocopy_rx;
    return e;
  }

  std::string header(const SimConfig& net) const {
    std::ostringstream o;
    o << "# bench " << cmd << "\n# revision=" << DGRPC_GIT_REV << "\n# seed=" << seed
      << "\n# transport=" << transport << " batch=" << batch << " in_flight=" << in_flight
      << " credits=" << credits << " slots=" << slots
      << " hosts=" << hosts << " msg_size=" << msg_size << " num=" << num << " rto_ms=" << rto_ms
      << "\n# cc=" << !disable_cc << " timely_bypass=" << !disable_timely_bypass
      << " limiter_bypass=" << !disable_limiter_bypass << " batched_ts=" << !disable_batched_ts
      << " prealloc=" << !disable_prealloc << " zerocopy_rx=" << !disable_zerocopy_rx << "\n";
    if (transport == "sim") {
      std::istringstream in(net.to_text());
      for (std::string line; std::getline(in, line);) o << "# net." << line << "\n";
    }
    return o.str();
  }
};

// Echo server on its own thread, client in the caller's thread.
LatencyResult udp_latency(const BenchConfig& cfg, size_t num, size_t size) {
  EndpointConfig ecfg = cfg.endpoint();
  std::atomic<bool> stop{false};
  std::promise<EndpointAddr> server_addr;
  std::jthread server([&] {
    UdpTransport t(UdpTransport::Options{});
    RealClock clk;
    Endpoint ep(t, clk, ecfg);
    ep.register_handler(
        kEchoReqType,
        [](ReqHandle& h) {
          const auto req = h.request();
          MsgBuf& r = h.init_response(req.size());
          if (!req.empty()) std::memcpy(r.mutable_data().data(), req.data(), req.size());
          h.endpoint().enqueue_response(h);
        },
        HandlerMode::kDispatch);
    server_addr.set_value(ep.addr());
    while (!stop.load(std::memory_order_relaxed)) {
      ep.run_event_loop_once();
      std::this_thread::yield();  // lets the client run on a single core
    }
  });

  UdpTransport t(UdpTransport::Options{});
  RealClock clk;
  Endpoint ep(t, clk, ecfg);
  const uint16_t sess = ep.create_session(server_addr.get_future().get());
  const Timestamp deadline = clk.now() + std::chrono::seconds(5);
  while (!ep.is_connected(sess) && clk.now() < deadline) ep.run_event_loop_once();
  if (!ep.is_connected(sess)) {
    stop = true;
    throw SessionError("could not connect to the udp echo server");
  }

  MsgBuf req = ep.alloc_msg_buffer(std::max<size_t>(size, 1));
  MsgBuf resp = ep.alloc_msg_buffer(std::max<size_t>(size, 1));
  req.resize(size);
  LatencyResult r;
  for (size_t i = 0; i < num; i++) {
    bool done = false;
    const Timestamp start = clk.now();
    ep.enqueue_request(sess, kEchoReqType, req, resp, [&](RpcStatus st, MsgBuf&) {
      if (st == RpcStatus::kOk) r.samples_us.push_back(to_usec(clk.now() - start));
      done = true;
    });
    while (!done) {
      ep.run_event_loop_once();
      std::this_thread::yield();
    }
    r.completed++;
  }
  stop = true;
  r.p50_us = percentile(r.samples_us, 50);
  r.p99_us = percentile(r.samples_us, 99);
  r.p999_us = percentile(r.samples_us, 99.9);
  r.retransmits = ep.stats().retransmit_events;
  return r;
}

Table run(const BenchConfig& cfg, SimConfig net) {
  const EndpointConfig ecfg = cfg.endpoint();
  if (cfg.cmd == "latency") {
    LatencyParams p;
    if (cfg.num) p.num_rpcs = cfg.num;
    if (cfg.msg_size) p.msg_size = cfg.msg_size;
    if (cfg.transport == "udp") return latency_table({udp_latency(cfg, p.num_rpcs, p.msg_size)});
    net.loss = cfg.loss.front();
    return latency_table({run_latency(net, ecfg, p)});
  }
  if (cfg.cmd == "rate") {
    RateParams p;
    p.hosts = cfg.hosts;
    p.batch = cfg.batch;
    p.batches_in_flight = cfg.in_flight;
    if (cfg.credits) p.credits = cfg.credits;
    if (cfg.slots) p.slots = cfg.slots;
    if (cfg.msg_size) p.msg_size = cfg.msg_size;
    if (cfg.factor_analysis) return rate_table(run_rate_factor_analysis(net, ecfg, p));
    RateResult r = run_rate(net, ecfg, p);
    r.label = "selected";
    return rate_table({r});
  }
  if (cfg.cmd == "bandwidth") {
    BandwidthParams p;
    if (cfg.credits) p.credits = cfg.credits;
    if (cfg.msg_size) p.msg_size = cfg.msg_size;
    if (cfg.num) p.num_msgs = cfg.num;
    std::vector<BandwidthResult> rows;
    for (double l : cfg.loss) {
      net.loss = l;
      rows.push_back(run_bandwidth(net, ecfg, p));
    }
    return bandwidth_table(rows);
  }
  if (cfg.cmd == "incast") {
    IncastParams p;
    if (cfg.credits) p.credits = cfg.credits;
    if (cfg.msg_size) p.msg_size = cfg.msg_size;
    std::vector<IncastResult> rows;
    for (uint32_t f : cfg.fan_in) {
      p.fan_in = f;
      if (cfg.compare_cc) {
        EndpointConfig on = ecfg;
        on.opt.congestion_control = true;
        EndpointConfig off = ecfg;
        off.opt.congestion_control = false;
        rows.push_back(run_incast(net, on, p));
        rows.push_back(run_incast(net, off, p));
      } else {
        rows.push_back(run_incast(net, ecfg, p));
      }
    }
    return incast_table(rows);
  }
  KvParams p;
  if (cfg.num) p.ops = cfg.num;
  return kv_table({run_kv(net, ecfg, p)});
}

}  // namespace

int main(int argc, char** argv) {
  BenchConfig cfg;
  CLI::App app{"RPC benchmark harness"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.add_option("--transport", cfg.transport, "sim or udp (udp: latency only)");
  app.add_option("--batch", cfg.batch, "requests per batch (rate)");
  app.add_option("--in-flight", cfg.in_flight, "batches in flight per host (rate)");
  app.add_option("--credits", cfg.credits, "session credits");
  app.add_option("--slots", cfg.slots, "concurrent requests per session (power of two)");
  app.add_option("--loss", cfg.loss, "packet loss rate(s)");
  app.add_option("--fan-in", cfg.fan_in, "incast client count(s)");
  app.add_option("--hosts", cfg.hosts, "hosts (rate)");
  app.add_option("--msg-size", cfg.msg_size, "message size in bytes");
  app.add_option("--num", cfg.num, "RPCs or messages to run");
  app.add_option("--rto-ms", cfg.rto_ms, "retransmission timeout");
  app.add_flag("--compare-cc", cfg.compare_cc, "incast: run with cc on and off");
  app.add_flag("--factor-analysis", cfg.factor_analysis, "rate: disable optimizations in turn");
  app.add_flag("--disable-cc", cfg.disable_cc);
  app.add_flag("--disable-timely-bypass", cfg.disable_timely_bypass);
  app.add_flag("--disable-limiter-bypass", cfg.disable_limiter_bypass);
  app.add_flag("--disable-batched-ts", cfg.disable_batched_ts);
  app.add_flag("--disable-prealloc", cfg.disable_prealloc);
  app.add_flag("--disable-zerocopy-rx", cfg.disable_zerocopy_rx);
  app.add_option("--seed", cfg.seed, "simulator seed");
  app.add_option("--config", cfg.config_path, "network config file (key = value)")
      ->check(CLI::ExistingFile);
  app.add_option("--out", cfg.out, "write the CSV report here");
  for (const char* c : {"latency", "rate", "bandwidth", "incast", "kv"}) {
    app.add_subcommand(c)->callback([&cfg, c] { cfg.cmd = c; });
  }
  CLI11_PARSE(app, argc, argv);

  try {
    cfg.validate();
    SimConfig net = cfg.config_path.empty() ? SimConfig{} : SimConfig::load(cfg.config_path);
    net.seed = cfg.seed;
    net.validate();

    const Table t = run(cfg, net);
    const std::string head = cfg.header(net);
    std::cout << head << t.aligned();
    if (!cfg.out.empty()) {
      std::ofstream f(cfg.out);
      if (!f) throw std::runtime_error("cannot open " + cfg.out);
      f << head << t.csv();
    } else {
      std::cout << "\n" << t.csv();
    }
  } catch (const std::exception& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
