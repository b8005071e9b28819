#include "dgrpc/sim/scenarios.h"

#include <cstring>
#include <map>
#include <random>

#include "dgrpc/sim/cluster.h"

namespace dgrpc::sim {

namespace {

constexpr uint8_t kSinkReqType = 2;
constexpr size_t kSinkRespSize = 32;
constexpr Duration kRunLimit = std::chrono::hours(1);

void register_echo(Endpoint& ep) {
  ep.register_handler(
      kEchoReqType,
      [](ReqHandle& h) {
        const auto req = h.request();
        MsgBuf& resp = h.init_response(req.size());
        if (!req.empty()) std::memcpy(resp.mutable_data().data(), req.data(), req.size());
        h.endpoint().enqueue_response(h);
      },
      HandlerMode::kDispatch);
}

// Swallows the request and answers with a short acknowledgement.
void register_sink(Endpoint& ep) {
  ep.register_handler(
      kSinkReqType,
      [](ReqHandle& h) {
        h.init_response(kSinkRespSize);
        h.endpoint().enqueue_response(h);
      },
      HandlerMode::kDispatch);
}

void fill_pattern(MsgBuf& m, uint64_t seed) {
  auto d = m.mutable_data();
  for (size_t i = 0; i < d.size(); i++) d[i] = static_cast<std::byte>((i * 131 + seed) & 0xFF);
}

struct Bufs {
  MsgBuf req;
  MsgBuf resp;
};

template <typename T>
void put(std::vector<std::byte>& out, T v) {
  const auto* p = reinterpret_cast<const std::byte*>(&v);
  out.insert(out.end(), p, p + sizeof v);
}

template <typename T>
T get(std::span<const std::byte> in, size_t off) {
  T v{};
  if (off + sizeof v <= in.size()) std::memcpy(&v, in.data() + off, sizeof v);
  return v;
}

}  // namespace

LatencyResult run_latency(const SimConfig& net, const EndpointConfig& ep, const LatencyParams& p) {
  SimConfig n = net;
  n.hosts = std::max<uint32_t>(n.hosts, 2);
  Bufs b;  // outlives the cluster, whose NIC queues may still point into it
  SimCluster c(n, ep);
  register_echo(c.ep(1));
  const uint16_t sess = c.connect(0, 1);

  Endpoint& cli = c.ep(0);
  b = Bufs{cli.alloc_msg_buffer(std::max<size_t>(p.msg_size, 1)),
           cli.alloc_msg_buffer(std::max<size_t>(p.msg_size, 1))};
  b.req.resize(p.msg_size);
  fill_pattern(b.req, 7);

  LatencyResult r;
  r.samples_us.reserve(p.num_rpcs);
  Timestamp start{0};
  VirtualClock& clk = c.net().clock(0);
  std::function<void()> issue = [&] {
    start = clk.now();
    cli.enqueue_request(sess, kEchoReqType, b.req, b.resp, [&](RpcStatus st, MsgBuf&) {
      if (st == RpcStatus::kOk) r.samples_us.push_back(to_usec(clk.now() - start));
      if (++r.completed < p.num_rpcs) issue();
    });
  };
  c.at(0, c.net().now(), issue);
  c.net().run_while_not([&] { return r.completed >= p.num_rpcs; }, c.net().now() + kRunLimit);

  r.p50_us = percentile(r.samples_us, 50);
  r.p99_us = percentile(r.samples_us, 99);
  r.p999_us = percentile(r.samples_us, 99.9);
  r.retransmits = cli.stats().retransmit_events;
  return r;
}

IncastResult run_incast(const SimConfig& net, const EndpointConfig& ep, const IncastParams& p) {
  if (p.fan_in < 1) throw ConfigError("fan_in must be at least 1");
  SimConfig n = net;
  n.hosts = p.fan_in + 1;
  EndpointConfig e = ep;
  e.record_rtt = true;
  e.credits = p.credits;
  std::vector<Bufs> bufs;
  SimCluster c(n, e);
  register_sink(c.ep(0));

  std::vector<uint16_t> sess(n.hosts);
  for (uint32_t i = 1; i < n.hosts; i++) sess[i] = c.connect(i, 0);

  bufs.reserve(n.hosts);
  for (uint32_t i = 0; i < n.hosts; i++) {
    bufs.push_back({c.ep(i).alloc_msg_buffer(p.msg_size), c.ep(i).alloc_msg_buffer(kSinkRespSize)});
  }
  std::vector<std::function<void()>> issue(n.hosts);
  for (uint32_t i = 1; i < n.hosts; i++) {
    issue[i] = [&, i] {
      c.ep(i).enqueue_request(sess[i], kSinkReqType, bufs[i].req, bufs[i].resp,
                              [&, i](RpcStatus st, MsgBuf&) {
                                if (st == RpcStatus::kOk) issue[i]();
                              });
    };
  }
  const Timestamp t0 = c.net().now();
  for (uint32_t i = 1; i < n.hosts; i++) c.at(i, t0, issue[i]);

  c.net().run_until(t0 + p.warmup);
  for (uint32_t i = 1; i < n.hosts; i++) c.ep(i).clear_rtt_samples();
  const uint64_t bytes0 = c.net().port(0).delivered_bytes;
  c.net().run_until(t0 + p.warmup + p.measure);

  IncastResult r;
  r.fan_in = p.fan_in;
  r.cc = e.opt.congestion_control;
  r.msg_size = p.msg_size;
  r.bytes = c.net().port(0).delivered_bytes - bytes0;
  r.total_gbps = static_cast<double>(r.bytes) * 8.0 / static_cast<double>(p.measure.count());
  std::vector<double> rtts;
  for (uint32_t i = 1; i < n.hosts; i++) {
    const auto& s = c.ep(i).rtt_samples_us();
    rtts.insert(rtts.end(), s.begin(), s.end());
  }
  r.p50_rtt_us = percentile(rtts, 50);
  r.p99_rtt_us = percentile(rtts, 99);
  r.drops = c.net().stats().switch_drops;
  for (uint32_t i = 0; i < n.hosts; i++) r.drops += c.net().transport(i).rx_drops();
  return r;
}

BandwidthResult run_bandwidth(const SimConfig& net, const EndpointConfig& ep,
                              const BandwidthParams& p) {
  SimConfig n = net;
  n.hosts = 2;
  EndpointConfig e = ep;
  e.credits = p.credits;
  Bufs b;
  SimCluster c(n, e);
  register_sink(c.ep(1));
  const uint16_t sess = c.connect(0, 1);

  Endpoint& cli = c.ep(0);
  b = Bufs{cli.alloc_msg_buffer(p.msg_size), cli.alloc_msg_buffer(kSinkRespSize)};
  fill_pattern(b.req, 3);

  BandwidthResult r;
  r.loss = n.loss;
  r.msg_size = p.msg_size;
  VirtualClock& clk = c.net().clock(0);
  Timestamp first{0};
  Timestamp last{0};
  std::function<void()> issue = [&] {
    cli.enqueue_request(sess, kSinkReqType, b.req, b.resp, [&](RpcStatus st, MsgBuf&) {
      if (st != RpcStatus::kOk) return;
      last = clk.now();
      if (++r.completed < p.num_msgs) issue();
    });
  };
  first = c.net().now();
  c.at(0, first, issue);
  c.net().run_while_not([&] { return r.completed >= p.num_msgs; }, first + kRunLimit);

  const double ns = static_cast<double>((last - first).count());
  r.elapsed_ms = ns / 1e6;
  r.goodput_gbps =
      ns > 0 ? static_cast<double>(r.completed) * static_cast<double>(p.msg_size) * 8.0 / ns : 0;
  r.retransmits = cli.stats().retransmit_events;
  return r;
}

RateResult run_rate(const SimConfig& net, const EndpointConfig& ep, const RateParams& p) {
  if (p.hosts < 2) throw ConfigError("rate benchmark needs at least 2 hosts");
  SimConfig n = net;
  n.hosts = p.hosts;
  struct HostState {
    std::vector<Bufs> bufs;
    std::vector<Timestamp> start;
    std::vector<uint32_t> batch_done;
    uint32_t next_peer = 0;
    uint64_t completed = 0;
  };
  std::vector<HostState> hs(n.hosts);
  SimCluster c(n, ep);
  for (uint32_t i = 0; i < n.hosts; i++) register_echo(c.ep(i));

  // sess[i][j]: session from i to j.
  std::vector<std::vector<uint16_t>> sess(n.hosts, std::vector<uint16_t>(n.hosts, 0));
  for (uint32_t i = 0; i < n.hosts; i++) {
    for (uint32_t j = 0; j < n.hosts; j++) {
      if (i != j) sess[i][j] = c.connect(i, j, p.credits, p.slots);
    }
  }

  const uint32_t window = p.batch * p.batches_in_flight;
  for (uint32_t i = 0; i < n.hosts; i++) {
    for (uint32_t k = 0; k < window; k++) {
      Bufs b{c.ep(i).alloc_msg_buffer(std::max<size_t>(p.msg_size, 1)),
             c.ep(i).alloc_msg_buffer(std::max<size_t>(p.msg_size, 1))};
      b.req.resize(p.msg_size);
      fill_pattern(b.req, k);
      hs[i].bufs.push_back(std::move(b));
    }
    hs[i].start.assign(window, Timestamp{0});
    hs[i].batch_done.assign(p.batches_in_flight, 0);
  }

  bool measuring = false;
  std::vector<double> lat;
  std::function<void(uint32_t, uint32_t)> issue_batch = [&](uint32_t host, uint32_t batch) {
    HostState& h = hs[host];
    Endpoint& e = c.ep(host);
    VirtualClock& clk = c.net().clock(host);
    h.batch_done[batch] = 0;
    for (uint32_t k = 0; k < p.batch; k++) {
      const uint32_t idx = batch * p.batch + k;
      uint32_t peer = h.next_peer++ % (n.hosts - 1);
      if (peer >= host) peer++;
      h.start[idx] = clk.now();
      e.enqueue_request(sess[host][peer], kEchoReqType, h.bufs[idx].req, h.bufs[idx].resp,
                        [&, host, batch, idx](RpcStatus st, MsgBuf&) {
                          HostState& hh = hs[host];
                          if (st != RpcStatus::kOk) return;
                          hh.completed++;
                          if (measuring) {
                            lat.push_back(to_usec(c.net().clock(host).now() - hh.start[idx]));
                          }
                          if (++hh.batch_done[batch] == p.batch) issue_batch(host, batch);
                        });
    }
  };
  const Timestamp t0 = c.net().now();
  for (uint32_t i = 0; i < n.hosts; i++) {
    for (uint32_t b = 0; b < p.batches_in_flight; b++) {
      c.at(i, t0, [&, i, b] { issue_batch(i, b); });
    }
  }
  c.net().run_until(t0 + p.warmup);
  uint64_t before = 0;
  for (const auto& h : hs) before += h.completed;
  measuring = true;
  c.net().run_until(t0 + p.warmup + p.measure);
  uint64_t after = 0;
  for (const auto& h : hs) after += h.completed;

  RateResult r;
  r.label = "rate";
  r.mrps_per_endpoint = static_cast<double>(after - before) / n.hosts /
                        (static_cast<double>(p.measure.count()) / 1e3);
  r.p50_us = percentile(lat, 50);
  for (uint32_t i = 0; i < n.hosts; i++) r.retransmits += c.ep(i).stats().retransmit_events;
  return r;
}

std::vector<RateResult> run_rate_factor_analysis(const SimConfig& net, const EndpointConfig& ep,
                                                 const RateParams& p) {
  std::vector<RateResult> out;
  EndpointConfig e = ep;
  auto run = [&](const std::string& label) {
    RateResult r = run_rate(net, e, p);
    r.label = label;
    out.push_back(r);
  };
  run("baseline");
  e.opt.batched_timestamps = false;
  run("-batched-ts");
  e.opt.timely_bypass = false;
  run("-timely-bypass");
  e.opt.limiter_bypass = false;
  run("-limiter-bypass");
  e.opt.preallocated_responses = false;
  run("-prealloc");
  e.opt.zero_copy_rx = false;
  run("-zerocopy-rx");
  return out;
}

KvResult run_kv(const SimConfig& net, const EndpointConfig& ep, const KvParams& p) {
  enum : uint8_t { kGet = 10, kPut = 11, kScan = 12 };
  SimConfig n = net;
  n.hosts = p.clients + 1;
  struct Lane {
    Bufs b;
    std::map<uint32_t, uint64_t> model;  // keys owned by this lane
    std::mt19937_64 rng;
    uint32_t op = 0;
    uint32_t key = 0;
    uint64_t val = 0;
    Timestamp start{0};
  };
  std::vector<Lane> lanes;
  SimCluster c(n, ep);
  Endpoint& srv = c.ep(0);
  std::map<uint32_t, uint64_t> store;

  // Request: key u32 [value u64]. GET reply: found u8, value u64.
  // SCAN reply: number of keys in [key, key + 100), u32.
  srv.register_handler(
      kGet,
      [&](ReqHandle& h) {
        const auto it = store.find(get<uint32_t>(h.request(), 0));
        MsgBuf& r = h.init_response(9);
        auto d = r.mutable_data();
        const uint8_t found = it != store.end();
        const uint64_t v = found ? it->second : 0;
        std::memcpy(d.data(), &found, 1);
        std::memcpy(d.data() + 1, &v, 8);
        h.endpoint().enqueue_response(h);
      },
      HandlerMode::kDispatch);
  srv.register_handler(
      kPut,
      [&](ReqHandle& h) {
        store[get<uint32_t>(h.request(), 0)] = get<uint64_t>(h.request(), 4);
        h.init_response(0);
        h.endpoint().enqueue_response(h);
      },
      HandlerMode::kDispatch);
  srv.register_handler(
      kScan,
      [&, cost = p.scan_cost](ReqHandle& h) {
        const uint32_t k = get<uint32_t>(h.request(), 0);
        const auto cnt = static_cast<uint32_t>(
            std::distance(store.lower_bound(k), store.lower_bound(k + 100)));
        h.charge(cost);
        MsgBuf& r = h.init_response(4);
        std::memcpy(r.mutable_data().data(), &cnt, 4);
        h.endpoint().enqueue_response(h);
      },
      HandlerMode::kWorker);

  const uint32_t lanes_per = p.outstanding;
  const size_t total_lanes = static_cast<size_t>(p.clients) * lanes_per;
  lanes.reserve(total_lanes);
  std::vector<uint16_t> sess(n.hosts);
  for (uint32_t i = 1; i < n.hosts; i++) {
    sess[i] = c.connect(i, 0);
    for (uint32_t l = 0; l < lanes_per; l++) {
      Lane ln{{c.ep(i).alloc_msg_buffer(12), c.ep(i).alloc_msg_buffer(16)}, {},
              std::mt19937_64(n.seed * 1000003 + lanes.size()), 0, 0, 0, Timestamp{0}};
      lanes.push_back(std::move(ln));
    }
  }

  KvResult r;
  std::vector<double> get_lat;
  std::vector<double> scan_lat;
  size_t issued = 0;
  std::function<void(size_t)> issue = [&](size_t li) {
    if (issued >= p.ops) return;
    const uint32_t host = 1 + static_cast<uint32_t>(li / lanes_per);
    Lane& ln = lanes[li];
    const size_t seqno = issued++;
    const uint32_t k = static_cast<uint32_t>(ln.rng() % p.keys);
    // Interleave keys so each lane owns a disjoint set.
    ln.key = static_cast<uint32_t>(k * total_lanes + li);
    uint8_t type;
    if (p.scan_every > 0 && seqno % p.scan_every == p.scan_every - 1) {
      type = kScan;
      ln.b.req.resize(4);
    } else if (ln.rng() % 2 == 0) {
      type = kPut;
      ln.val = ln.rng();
      ln.b.req.resize(12);
    } else {
      type = kGet;
      ln.b.req.resize(4);
    }
    ln.op = type;
    auto d = ln.b.req.mutable_data();
    std::memcpy(d.data(), &ln.key, 4);
    if (type == kPut) std::memcpy(d.data() + 4, &ln.val, 8);
    ln.start = c.net().clock(host).now();
    c.ep(host).enqueue_request(sess[host], type, ln.b.req, ln.b.resp,
                               [&, li, host](RpcStatus st, MsgBuf& resp) {
                                 Lane& l = lanes[li];
                                 const double us = to_usec(c.net().clock(host).now() - l.start);
                                 if (st != RpcStatus::kOk) {
                                   r.mismatches++;
                                 } else if (l.op == kPut) {
                                   l.model[l.key] = l.val;
                                 } else if (l.op == kGet) {
                                   get_lat.push_back(us);
                                   const auto it = l.model.find(l.key);
                                   const auto found = get<uint8_t>(resp.data(), 0);
                                   const auto v = get<uint64_t>(resp.data(), 1);
                                   const bool want = it != l.model.end();
                                   if (found != want || (want && v != it->second)) r.mismatches++;
                                 } else {
                                   scan_lat.push_back(us);
                                 }
                                 r.ops++;
                                 issue(li);
                               });
  };
  const Timestamp t0 = c.net().now();
  for (size_t li = 0; li < total_lanes; li++) {
    c.at(1 + static_cast<uint32_t>(li / lanes_per), t0, [&, li] { issue(li); });
  }
  c.net().run_while_not([&] { return r.ops >= p.ops; }, t0 + kRunLimit);
  const double secs = static_cast<double>((c.net().now() - t0).count()) / 1e9;
  r.kops_per_s = secs > 0 ? static_cast<double>(r.ops) / secs / 1e3 : 0;
  r.get_p50_us = percentile(get_lat, 50);
  r.get_p99_us = percentile(get_lat, 99);
  r.scan_p50_us = percentile(scan_lat, 50);
  return r;
}

Table incast_table(const std::vector<IncastResult>& rows) {
  Table t({"scenario", "fan_in", "cc", "bytes", "p50_rtt_us", "p99_rtt_us", "drops"});
  for (const auto& r : rows) {
    t.add_row({"incast", std::to_string(r.fan_in), r.cc ? "on" : "off", std::to_string(r.bytes),
               fmt_fixed(r.p50_rtt_us), fmt_fixed(r.p99_rtt_us), std::to_string(r.drops)});
  }
  return t;
}

Table bandwidth_table(const std::vector<BandwidthResult>& rows) {
  Table t({"scenario", "loss", "msg_size", "completed", "goodput_gbps", "elapsed_ms",
           "retransmits"});
  for (const auto& r : rows) {
    char loss[32];
    std::snprintf(loss, sizeof loss, "%.0e", r.loss);
    t.add_row({"bandwidth", r.loss == 0 ? "0" : loss, std::to_string(r.msg_size),
               std::to_string(r.completed), fmt_fixed(r.goodput_gbps), fmt_fixed(r.elapsed_ms),
               std::to_string(r.retransmits)});
  }
  return t;
}

Table latency_table(const std::vector<LatencyResult>& rows) {
  Table t({"scenario", "rpcs", "p50_us", "p99_us", "p999_us", "retransmits"});
  for (const auto& r : rows) {
    t.add_row({"latency", std::to_string(r.completed), fmt_fixed(r.p50_us), fmt_fixed(r.p99_us),
               fmt_fixed(r.p999_us), std::to_string(r.retransmits)});
  }
  return t;
}

Table rate_table(const std::vector<RateResult>& rows) {
  Table t({"scenario", "config", "mrps_per_endpoint", "p50_us", "retransmits"});
  for (const auto& r : rows) {
    t.add_row({"rate", r.label, fmt_fixed(r.mrps_per_endpoint), fmt_fixed(r.p50_us),
               std::to_string(r.retransmits)});
  }
  return t;
}

Table kv_table(const std::vector<KvResult>& rows) {
  Table t({"scenario", "ops", "kops_per_s", "get_p50_us", "get_p99_us", "scan_p50_us",
           "mismatches"});
  for (const auto& r : rows) {
    t.add_row({"kv", std::to_string(r.ops), fmt_fixed(r.kops_per_s), fmt_fixed(r.get_p50_us),
               fmt_fixed(r.get_p99_us), fmt_fixed(r.scan_p50_us), std::to_string(r.mismatches)});
  }
  return t;
}

}  // namespace dgrpc::sim
