// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <sstream>

#include "dgrpc/congestion.h"
#include "dgrpc/packet_header.h"
#include "dgrpc/sim/cluster.h"
#include "dgrpc/sim/scenarios.h"
#include "oracles.h"

using namespace dgrpc;
using namespace dgrpc::sim;
using namespace std::chrono_literals;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

bool run_sim(SimCluster& c, const std::function<bool()>& pred, Duration limit) {
  return c.net().run_while_not(pred, c.net().now() + limit);
}

template <typename T>
T load(std::span<const std::byte> s, size_t off = 0) {
  T v;
  std::memcpy(&v, s.data() + off, sizeof v);
  return v;
}

// ---------------------------------------------------------------------------

Outcome c1_codec_layout() {
  Outcome o;
  std::mt19937_64 rng(101);
  auto pick = [&rng](uint64_t lo, uint64_t hi) {
    return std::uniform_int_distribution<uint64_t>(lo, hi)(rng);
  };
  size_t mismatches = 0;
  for (int i = 0; i < 10000; i++) {
    oracle::HeaderFields f;
    f.version = static_cast<uint32_t>(pick(0, 15));
    f.pkt_type = static_cast<uint32_t>(pick(0, 3));
    f.req_type = static_cast<uint32_t>(pick(0, 255));
    f.session_num = static_cast<uint32_t>(pick(0, 0xFFFF));
    f.pkt_num = static_cast<uint32_t>(pick(0, 0xFFFF));
    f.flags = static_cast<uint32_t>(pick(0, 0xFFFF));
    f.req_num = pick(0, 0xFFFFFFFFu);
    f.msg_size = pick(0, kMaxMsgSize);
    PacketHeader h;
    h.version = static_cast<uint8_t>(f.version);
    h.pkt_type = static_cast<PktType>(f.pkt_type);
    h.req_type = static_cast<uint8_t>(f.req_type);
    h.session_num = static_cast<uint16_t>(f.session_num);
    h.pkt_num = static_cast<uint16_t>(f.pkt_num);
    h.flags = static_cast<uint16_t>(f.flags);
    h.req_num = static_cast<uint32_t>(f.req_num);
    h.msg_size = static_cast<uint32_t>(f.msg_size);

    const HeaderBytes ours = pack_header(h);
    const auto want = oracle::encode_header(f);
    std::array<uint8_t, 16> got{};
    std::memcpy(got.data(), ours.data(), 16);
    const oracle::HeaderFields back = oracle::decode_header(got);
    const bool ok = got == want && unpack_header(ours) == h && back.req_num == f.req_num &&
                    back.msg_size == f.msg_size && back.session_num == f.session_num &&
                    back.pkt_num == f.pkt_num && back.flags == f.flags &&
                    back.version == f.version && back.pkt_type == f.pkt_type &&
                    back.req_type == f.req_type;
    if (!ok) mismatches++;
  }
  o.detail << "header mismatches=" << mismatches << "/10000";
  o.require(mismatches == 0, "header round trips");

  size_t bad_layouts = 0;
  std::string first_problem;
  for (int i = 0; i < 500; i++) {
    size_t size;
    size_t mtu;
    if (i == 0) {
      size = kMaxMsgSize;
      mtu = kDefaultMtuData;
    } else if (i % 50 == 0) {
      size = kMaxMsgSize;
      mtu = pick(128, 9000);
    } else {
      size = pick(1, size_t{1} << 20);
      mtu = pick(1, 9000);
    }
    MsgBuf m = MsgBuf::alloc(size, mtu);
    std::string problem = oracle::check_layout(m);
    if (problem.empty()) {
      m.resize(pick(0, size));
      problem = oracle::check_layout(m);
    }
    if (!problem.empty()) {
      if (first_problem.empty()) first_problem = problem;
      bad_layouts++;
    }
  }
  o.detail << " layout failures=" << bad_layouts << "/500";
  o.require(bad_layouts == 0, "layout: " + first_problem);
  return o;
}

// ---------------------------------------------------------------------------

Outcome c2_packet_counts() {
  Outcome o;
  constexpr uint8_t kType = 3;
  size_t cases = 0;
  size_t wrong = 0;
  for (uint32_t credits = 1; credits <= 4; credits++) {
    SimCluster c(SimConfig{}, EndpointConfig{});
    const size_t mtu = c.ep(1).mtu_data();
    c.ep(1).register_handler(
        kType,
        [mtu](ReqHandle& h) {
          const auto ns = static_cast<size_t>(h.request()[0]);
          h.init_response(ns * mtu);
          h.endpoint().enqueue_response(h);
        },
        HandlerMode::kDispatch);
    const uint16_t s = c.connect(0, 1, credits);
    for (uint32_t nr = 1; nr <= 8; nr++) {
      for (uint32_t ns = 1; ns <= 8; ns++) {
        MsgBuf req = c.ep(0).alloc_msg_buffer(nr * mtu);
        MsgBuf resp = c.ep(0).alloc_msg_buffer(ns * mtu);
        req.mutable_data()[0] = static_cast<std::byte>(ns);
        const EndpointStats cli0 = c.ep(0).stats();
        const EndpointStats srv0 = c.ep(1).stats();
        const uint64_t sent0 = c.net().stats().pkts_sent;
        bool done = false;
        bool ok = false;
        c.at(0, c.net().now(), [&] {
          c.ep(0).enqueue_request(s, kType, req, resp, [&](RpcStatus st, MsgBuf& r) {
            ok = st == RpcStatus::kOk && r.data_size() == ns * mtu;
            done = true;
          });
        });
        run_sim(c, [&] { return done; }, 1s);
        const oracle::Exchange want = oracle::enumerate_rpc(nr, ns, credits);
        const uint64_t total = c.net().stats().pkts_sent - sent0;
        const EndpointStats& cli = c.ep(0).stats();
        const EndpointStats& srv = c.ep(1).stats();
        const bool match = done && ok && total == nr + ns + (nr - 1) + (ns - 1) &&
                           total == want.total() &&
                           cli.req_pkts_tx - cli0.req_pkts_tx == want.req_pkts &&
                           cli.rfr_tx - cli0.rfr_tx == want.rfrs &&
                           srv.cr_tx - srv0.cr_tx == want.credit_returns &&
                           srv.resp_pkts_tx - srv0.resp_pkts_tx == want.resp_pkts;
        cases++;
        if (!match) {
          if (wrong == 0) {
            o.detail << "first mismatch Nr=" << nr << " Ns=" << ns << " C=" << credits
                     << " total=" << total << " want=" << want.total() << "; ";
          }
          wrong++;
        }
      }
    }
  }
  o.detail << "cases=" << cases << " mismatches=" << wrong;
  o.require(wrong == 0, "packet counts");
  return o;
}

// ---------------------------------------------------------------------------
// Closed-loop traffic with mixed message sizes and full content checks, used
// for the loss and credit criteria.

struct LossRun {
  size_t issued = 0;
  size_t ok = 0;
  size_t bad_status = 0;
  size_t bad_content = 0;
  size_t handler_not_once = 0;
  size_t cont_not_once = 0;
  uint64_t audit = 0;
  uint64_t retransmits = 0;
  uint64_t credit_checks = 0;
  uint64_t credit_violations = 0;
  uint64_t trace = 0;
  bool finished = false;
};

constexpr uint8_t kLossType = 4;
constexpr size_t kReqSizes[] = {8, 1200, 4000, 12000};
constexpr size_t kRespSizes[] = {8, 500, 3000, 16, 7000};

std::byte pattern_byte(uint64_t id, size_t i) { return static_cast<std::byte>((id * 7 + i) & 0xFF); }

LossRun loss_run(double loss, double reorder, uint64_t seed, size_t n, bool watch_credits) {
  SimConfig net;
  net.hosts = 3;
  net.loss = loss;
  net.reorder = reorder;
  net.seed = seed;
  SimCluster c(net, EndpointConfig{});
  std::vector<uint32_t> handled(n, 0);
  std::vector<uint32_t> conts(n, 0);
  c.ep(0).register_handler(
      kLossType,
      [&handled](ReqHandle& h) {
        const auto id = load<uint64_t>(h.request());
        if (id < handled.size()) handled[id]++;
        const size_t size = kRespSizes[id % 5];
        auto out = h.init_response(size).mutable_data();
        std::memcpy(out.data(), &id, 8);
        for (size_t i = 8; i < size; i++) out[i] = pattern_byte(id, i);
        h.endpoint().enqueue_response(h);
      },
      HandlerMode::kDispatch);

  struct Lane {
    uint32_t host;
    uint16_t sess;
    MsgBuf req;
    MsgBuf resp;
  };
  std::vector<std::unique_ptr<Lane>> lanes;
  std::vector<std::pair<uint32_t, uint16_t>> sessions;
  for (uint32_t host = 1; host <= 2; host++) {
    const uint16_t s = c.connect(host, 0);
    sessions.emplace_back(host, s);
    for (int k = 0; k < 8; k++) {
      lanes.push_back(std::make_unique<Lane>(
          Lane{host, s, c.ep(host).alloc_msg_buffer(12000), c.ep(host).alloc_msg_buffer(8)}));
    }
  }

  LossRun r;
  size_t completed = 0;
  std::function<void(Lane&)> issue = [&](Lane& l) {
    if (r.issued >= n) return;
    const uint64_t id = r.issued++;
    const size_t size = kReqSizes[id % 4];
    l.req.resize(size);
    auto d = l.req.mutable_data();
    std::memcpy(d.data(), &id, 8);
    for (size_t i = 8; i < size; i++) d[i] = pattern_byte(id, i);
    c.ep(l.host).enqueue_request(l.sess, kLossType, l.req, l.resp,
                                 [&, id, lp = &l](RpcStatus st, MsgBuf& resp) {
                                   conts[id]++;
                                   completed++;
                                   if (st != RpcStatus::kOk) {
                                     r.bad_status++;
                                   } else {
                                     const size_t want = kRespSizes[id % 5];
                                     bool same = resp.data_size() == want &&
                                                 load<uint64_t>(resp.data()) == id;
                                     for (size_t i = 8; same && i < want; i++) {
                                       same = resp.data()[i] == pattern_byte(id, i);
                                     }
                                     if (same) {
                                       r.ok++;
                                     } else {
                                       r.bad_content++;
                                     }
                                   }
                                   issue(*lp);
                                 });
  };
  for (auto& l : lanes) c.at(l->host, c.net().now(), [&issue, lp = l.get()] { issue(*lp); });

  r.finished = c.net().run_while_not(
      [&] {
        if (watch_credits) {
          for (const auto& [host, num] : sessions) {
            const Session* s = c.ep(host).session(num);
            r.credit_checks++;
            const uint32_t budget = s->credits.budget();
            if (s->credits.available() > budget ||
                s->credits.available() + s->credits.in_flight() != budget ||
                !s->credits_conserved()) {
              r.credit_violations++;
            }
          }
        }
        return completed >= n;
      },
      c.net().now() + std::chrono::hours(1));
  for (size_t i = 0; i < n; i++) {
    if (handled[i] != 1) r.handler_not_once++;
    if (conts[i] != 1) r.cont_not_once++;
  }
  for (uint32_t h = 0; h < 3; h++) {
    r.audit += c.ep(h).stats().audit_violations;
    r.retransmits += c.ep(h).stats().retransmit_events;
  }
  r.trace = c.net().trace_hash();
  return r;
}

Outcome c3_at_most_once() {
  Outcome o;
  for (double loss : {1e-3, 1e-2}) {
    const LossRun r = loss_run(loss, 0.01, 7, 10000, false);
    o.detail << "loss=" << loss << ": ok=" << r.ok << " handler!=1:" << r.handler_not_once
             << " cont!=1:" << r.cont_not_once << " audit=" << r.audit
             << " retransmits=" << r.retransmits << "; ";
    o.require(r.finished, "run did not finish");
    o.require(r.ok == 10000 && r.bad_status == 0 && r.bad_content == 0, "all RPCs succeed");
    o.require(r.handler_not_once == 0, "handler exactly once");
    o.require(r.cont_not_once == 0, "continuation exactly once");
    o.require(r.audit == 0, "ownership audit");
    o.require(r.retransmits > 0, "retransmissions exercised");
  }
  return o;
}

Outcome c4_credit_conservation() {
  Outcome o;
  uint64_t checks = 0;
  uint64_t violations = 0;
  for (uint64_t seed = 1; seed <= 8; seed++) {
    const double loss = seed % 2 ? 1e-2 : 5e-2;
    const LossRun r = loss_run(loss, 0.05, seed, 600, true);
    o.require(r.finished && r.ok == 600, "trace " + std::to_string(seed) + " completes");
    checks += r.credit_checks;
    violations += r.credit_violations;
  }
  o.detail << "traces=8 checks=" << checks << " violations=" << violations;
  o.require(checks > 0 && violations == 0, "credit invariant");
  return o;
}

// ---------------------------------------------------------------------------

Outcome c5_incast() {
  Outcome o;
  IncastParams p;
  p.fan_in = 50;
  p.msg_size = size_t{8} << 20;
  EndpointConfig on;
  EndpointConfig off;
  off.opt.congestion_control = false;
  const SimConfig net;
  const IncastResult r_on = run_incast(net, on, p);
  const IncastResult r_off = run_incast(net, off, p);
  const double secs = std::chrono::duration<double>(p.measure).count();
  const double gbps_on = static_cast<double>(r_on.bytes) * 8 / secs / 1e9;
  const double ratio = r_off.p50_rtt_us / r_on.p50_rtt_us;
  o.detail << "p50 rtt on=" << r_on.p50_rtt_us << "us off=" << r_off.p50_rtt_us
           << "us ratio=" << ratio << " bw on=" << gbps_on << "Gbps ("
           << gbps_on / net.link_gbps * 100 << "% of link)";
  o.require(ratio >= 2, "median RTT ratio off/on >= 2");
  o.require(gbps_on >= 0.7 * net.link_gbps, "bandwidth >= 70% of link");
  return o;
}

Outcome c6_loss_throughput() {
  Outcome o;
  BandwidthParams p;
  p.msg_size = size_t{8} << 20;
  EndpointConfig ep;
  ep.rto = 5ms;
  const std::vector<double> rates{0, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3};
  std::vector<double> g;
  for (double l : rates) {
    SimConfig net;
    net.loss = l;
    g.push_back(run_bandwidth(net, ep, p).goodput_gbps);
    o.detail << l << ":" << g.back() << "Gbps ";
  }
  o.require(g[2] >= 0.9 * g[0], "1e-6 >= 0.9x lossless");
  o.require(g[5] <= 0.1 * g[0], "1e-3 <= 0.1x lossless");
  for (size_t i = 2; i < g.size(); i++) {
    o.require(g[i] <= g[i - 1], "non-increasing at " + std::to_string(rates[i]));
  }
  return o;
}

// ---------------------------------------------------------------------------

struct TraceRun {
  uint64_t hash = 0;
  double max_rtt_us = 0;
  uint64_t wheel_inserts = 0;
  uint64_t cc_updates = 0;
  size_t rtt_samples = 0;
  size_t completed = 0;
};

TraceRun uncongested_trace(bool cc) {
  SimConfig net;
  net.hosts = 3;
  EndpointConfig ep;
  ep.record_rtt = true;
  ep.opt.congestion_control = cc;
  SimCluster c(net, ep);
  {
    c.ep(1).register_handler(
        kEchoReqType,
        [](ReqHandle& rh) {
          const auto req = rh.request();
          MsgBuf& r = rh.init_response(req.size());
          std::memcpy(r.mutable_data().data(), req.data(), req.size());
          rh.endpoint().enqueue_response(rh);
        },
        HandlerMode::kDispatch);
  }
  const uint16_t s0 = c.connect(0, 1);
  const uint16_t s2 = c.connect(2, 1);
  const size_t sizes[] = {32, 2000, 20000, 32, 100000};
  struct Client {
    uint32_t host;
    uint16_t sess;
    MsgBuf req;
    MsgBuf resp;
    size_t done = 0;
  };
  Client a{0, s0, c.ep(0).alloc_msg_buffer(100000), c.ep(0).alloc_msg_buffer(100000)};
  Client b{2, s2, c.ep(2).alloc_msg_buffer(100000), c.ep(2).alloc_msg_buffer(100000)};
  const size_t per_client = 300;
  std::function<void(Client&)> issue = [&](Client& cl) {
    cl.req.resize(sizes[cl.done % 5]);
    c.ep(cl.host).enqueue_request(cl.sess, kEchoReqType, cl.req, cl.resp,
                                  [&, clp = &cl](RpcStatus, MsgBuf&) {
                                    if (++clp->done < per_client) issue(*clp);
                                  });
  };
  c.at(0, c.net().now(), [&] { issue(a); });
  c.at(2, c.net().now() + 3us, [&] { issue(b); });
  run_sim(c, [&] { return a.done == per_client && b.done == per_client; }, 10s);

  TraceRun t;
  t.hash = c.net().trace_hash();
  t.completed = a.done + b.done;
  for (uint32_t h : {0u, 2u}) {
    for (double v : c.ep(h).rtt_samples_us()) t.max_rtt_us = std::max(t.max_rtt_us, v);
    t.rtt_samples += c.ep(h).rtt_samples_us().size();
    t.wheel_inserts += c.ep(h).stats().wheel_inserts;
    t.cc_updates += c.ep(h).stats().cc_updates;
  }
  return t;
}

Outcome c7_bypass() {
  Outcome o;
  const TraceRun on = uncongested_trace(true);
  const TraceRun off = uncongested_trace(false);
  o.detail << "hash on=" << std::hex << on.hash << " off=" << off.hash << std::dec
           << " max rtt=" << on.max_rtt_us << "us samples=" << on.rtt_samples
           << " wheel inserts=" << on.wheel_inserts << " cc updates=" << on.cc_updates;
  o.require(on.completed == 600 && off.completed == 600, "runs complete");
  o.require(on.max_rtt_us < 50 && off.max_rtt_us < 50, "trace is uncongested");
  o.require(on.hash == off.hash, "identical traces");
  return o;
}

// ---------------------------------------------------------------------------

Outcome c8_timely() {
  Outcome o;
  using S = oracle::TimelySample;
  std::vector<std::pair<std::vector<S>, bool>> seqs;
  seqs.push_back({{{2000, 0}, {10, 100}, {10, 200}, {10, 300}}, false});            // AI
  seqs.push_back({{{1500, 0}, {3000, 5000}, {1200, 10000}}, false});               // above t_high
  seqs.push_back({{{100, 0}, {120, 200}, {150, 400}, {200, 600}}, false});         // gradient
  seqs.push_back({{{400, 0}, {350, 500}, {300, 1000}, {250, 1500}, {200, 2000},
                   {150, 2500}, {100, 3000}}, false});                             // HAI
  seqs.push_back({{{60, 0}, {900, 1000}}, false});                                 // decrease floor
  {
    std::vector<S> v;
    for (int i = 0; i < 40; i++) v.push_back({5000, i * 10000.0});
    seqs.push_back({v, false});                                                    // min rate
  }
  seqs.push_back({{{100, 0}, {140, 10}, {180, 20}, {60, 25}}, false});              // partial weight
  seqs.push_back({{{10, 0}, {20, 1}, {2000, 2}, {10, 3000}, {20, 3001}}, true});   // bypass
  {
    std::vector<S> v;
    uint64_t x = 12345;
    double t = 0;
    for (int i = 0; i < 30; i++) {
      x = x * 6364136223846793005ull + 1442695040888963407ull;
      t += static_cast<double>((x >> 33) % 400);
      v.push_back({20.0 + static_cast<double>((x >> 20) % 1500), t});
    }
    seqs.push_back({v, false});                                                    // mixed
  }
  seqs.push_back({{{300, 0}, {300, 0}, {500, 0}, {40, 0}}, false});                // zero gaps

  const CongestionKnobs k;
  const double link = 25e9;
  double worst = 0;
  for (const auto& [samples, bypass] : seqs) {
    const std::vector<double> want = oracle::timely_rates(samples, k, link, bypass);
    TimelyState st(link, k);
    for (size_t i = 0; i < samples.size(); i++) {
      const Timestamp t(std::llround(samples[i].t_us * 1e3));
      st.record_rtt_and_update(samples[i].rtt_us, t, bypass);
      worst = std::max(worst, std::abs(st.rate_bps() - want[i]) / want[i]);
    }
  }
  // Two values worked by hand from the rule.
  TimelyState hand(link, k);
  hand.record_rtt_and_update(1500, Timestamp{0}, false);
  const double h1 = 25e9 * (1 - 0.26 * (1 - 1000.0 / 1500.0));
  const double e1 = std::abs(hand.rate_bps() - h1) / h1;
  hand.record_rtt_and_update(10, Timestamp{100000}, false);
  const double h2 = h1 + 10e6;
  const double e2 = std::abs(hand.rate_bps() - h2) / h2;
  worst = std::max({worst, e1, e2});
  o.detail << "sequences=" << seqs.size() << " worst relative error=" << worst;
  o.require(worst <= 1e-9, "rates within 1e-9");
  return o;
}

Outcome c9_pacing() {
  Outcome o;
  const CongestionKnobs k;
  const size_t pkt = kDefaultMtuData + kHeaderSize;
  const Duration end = 100ms;
  for (double target : {15e6, 1e9, 5e9, 12.5e9, 20e9}) {
    TimingWheel<int64_t> wheel(10us, 10ms);
    PacedSession ps(25e9, k);
    ps.timely.set_rate(target);
    OptimizationFlags flags;
    std::vector<int64_t> out;
    uint64_t bytes = 0;
    uint64_t early = 0;
    for (Timestamp now{0}; now < end; now += 1us) {
      while (ps.next_send < now + 5ms) {
        const Timestamp send = std::max(now, ps.next_send);
        schedule_or_bypass(wheel, ps, send.count(), pkt, now, flags);
      }
      out.clear();
      wheel.poll(now, out);
      for (int64_t sched : out) {
        ps.queued--;
        bytes += pkt;
        if (now.count() < sched) early++;
      }
    }
    const double achieved = static_cast<double>(bytes) * 8 / 0.1;
    const double err = achieved / target - 1;
    o.detail << target / 1e9 << "Gbps:" << std::showpos << err * 100 << std::noshowpos << "% ";
    o.require(std::abs(err) <= 0.10, "rate within 10%");
    o.require(early == 0 && wheel.early_releases() == 0 && wheel.clamped() == 0,
              "no early release");
  }
  return o;
}

// ---------------------------------------------------------------------------

struct IsolationRun {
  double baseline_ns = 0;
  double worst_during_ns = 0;
  size_t during = 0;
  double iteration_ns = 0;
  Duration slow = Duration::zero();
};

// Host 0 runs back-to-back echo RPCs against host 1 while host 2 issues
// one 10 ms request there. The slow request comes from its own host so that
// its client-side costs (it outlives the retransmission timeout) stay off
// the echo client's thread.
IsolationRun isolation(HandlerMode slow_mode) {
  SimConfig net;
  net.hosts = 3;
  SimCluster c(net, EndpointConfig{});
  Endpoint& srv = c.ep(1);
  srv.register_handler(
      kEchoReqType,
      [](ReqHandle& h) {
        MsgBuf& r = h.init_response(h.request().size());
        std::memcpy(r.mutable_data().data(), h.request().data(), h.request().size());
        h.endpoint().enqueue_response(h);
      },
      HandlerMode::kDispatch);
  srv.register_handler(
      9,
      [](ReqHandle& h) {
        h.charge(10ms);
        h.init_response(8);
        h.endpoint().enqueue_response(h);
      },
      slow_mode);
  const uint16_t fast = c.connect(0, 1);
  const uint16_t slow = c.connect(2, 1);
  Endpoint& cli = c.ep(0);
  VirtualClock& clk = c.net().clock(0);
  MsgBuf req = cli.alloc_msg_buffer(32);
  MsgBuf resp = cli.alloc_msg_buffer(32);
  MsgBuf sreq = c.ep(2).alloc_msg_buffer(8);
  MsgBuf sresp = c.ep(2).alloc_msg_buffer(8);

  IsolationRun r;
  std::vector<double> base;
  bool slow_issued = false;
  bool slow_done = false;
  size_t remaining_base = 200;
  Timestamp start{0};
  bool echo_out = false;
  std::function<void()> echo = [&] {
    start = clk.now();
    echo_out = true;
    cli.enqueue_request(fast, kEchoReqType, req, resp, [&](RpcStatus, MsgBuf&) {
      echo_out = false;
      const double ns = static_cast<double>((clk.now() - start).count());
      if (slow_issued) {
        r.worst_during_ns = std::max(r.worst_during_ns, ns);
        r.during++;
      } else {
        base.push_back(ns);
      }
      if (remaining_base > 0 && --remaining_base == 0) {
        slow_issued = true;
        c.at(2, c.net().now(), [&] {
          const Timestamp t0 = c.net().clock(2).now();
          c.ep(2).enqueue_request(slow, 9, sreq, sresp, [&, t0](RpcStatus, MsgBuf&) {
            slow_done = true;
            r.slow = c.net().clock(2).now() - t0;
          });
        });
      }
      if (!slow_done) echo();
    });
  };
  c.at(0, c.net().now(), echo);
  run_sim(c, [&] { return slow_done && !echo_out; }, 1s);
  r.baseline_ns = percentile(base, 50);
  r.iteration_ns = static_cast<double>(c.net().cpu_time(1).count()) /
                   static_cast<double>(c.net().polls(1));
  return r;
}

Outcome c10_isolation() {
  Outcome o;
  const IsolationRun w = isolation(HandlerMode::kWorker);
  const IsolationRun d = isolation(HandlerMode::kDispatch);
  const double delta = w.worst_during_ns - w.baseline_ns;
  o.detail << "worker: baseline=" << w.baseline_ns << "ns worst during=" << w.worst_during_ns
           << "ns over " << w.during << " RPCs, delta=" << delta << "ns, iteration="
           << w.iteration_ns << "ns; same handler in dispatch mode: worst="
           << d.worst_during_ns << "ns";
  o.require(d.worst_during_ns >= 5e6, "dispatch-mode control run is blocked");
  o.require(w.slow >= 10ms, "slow handler took its time");
  o.require(w.during > 100, "RPCs overlapped the slow handler");
  o.require(delta < 2 * w.iteration_ns, "delay < 2 loop iterations");
  return o;
}

// ---------------------------------------------------------------------------

Outcome c11_node_failure() {
  Outcome o;

  // (a) Peer killed mid-flight, detected by heartbeat timeout. Two clients,
  // more requests than slots so some wait in the backlog.
  {
    SimConfig net;
    net.hosts = 3;
    SimCluster c(net, EndpointConfig{});
    c.ep(1).register_handler(
        kEchoReqType,
        [](ReqHandle& h) {
          h.init_response(h.request().size());
          h.endpoint().enqueue_response(h);
        },
        HandlerMode::kDispatch);
    struct Req {
      uint32_t host;
      MsgBuf req;
      MsgBuf resp;
      int conts = 0;
      RpcStatus status = RpcStatus::kOk;
    };
    std::vector<std::unique_ptr<Req>> reqs;
    std::map<uint32_t, uint16_t> sess{{0, c.connect(0, 1)}, {2, c.connect(2, 1)}};
    size_t issued = 0;
    bool killed = false;
    std::function<void(uint32_t)> issue = [&](uint32_t host) {
      if (killed) return;
      const size_t size = issued % 3 == 0 ? 200000 : 3000;
      reqs.push_back(std::make_unique<Req>(
          Req{host, c.ep(host).alloc_msg_buffer(size), c.ep(host).alloc_msg_buffer(8)}));
      Req* rq = reqs.back().get();
      issued++;
      c.ep(host).enqueue_request(sess[host], kEchoReqType, rq->req, rq->resp,
                                 [&, rq](RpcStatus st, MsgBuf&) {
                                   rq->conts++;
                                   rq->status = st;
                                   if (st == RpcStatus::kOk) issue(rq->host);
                                 });
    };
    for (uint32_t host : {0u, 2u}) {
      c.at(host, c.net().now(), [&, host] {
        for (int i = 0; i < 12; i++) issue(host);
      });
    }
    c.net().run_until(c.net().now() + 2ms);
    killed = true;
    c.net().kill_host(1);
    size_t pending_at_kill = 0;
    for (const auto& r : reqs) pending_at_kill += r->conts == 0 ? 1 : 0;
    run_sim(c, [&] {
      for (const auto& r : reqs) {
        if (r->conts == 0) return false;
      }
      return true;
    }, 3s);
    size_t not_once = 0;
    size_t failed = 0;
    size_t refs = 0;
    for (const auto& r : reqs) {
      if (r->conts != 1) not_once++;
      if (r->status == RpcStatus::kNodeFailure) failed++;
      refs += static_cast<size_t>(r->req.tx_refs() + r->resp.tx_refs());
    }
    const uint64_t audit = c.ep(0).stats().audit_violations + c.ep(2).stats().audit_violations;
    o.detail << "heartbeat: requests=" << reqs.size() << " pending at kill=" << pending_at_kill
             << " node-failure=" << failed << " not-once=" << not_once << " audit=" << audit
             << "; ";
    o.require(pending_at_kill > 12, "requests pending at kill");
    o.require(not_once == 0, "heartbeat: continuation exactly once");
    o.require(failed == pending_at_kill, "heartbeat: pending requests get NodeFailure");
    o.require(audit == 0 && refs == 0, "heartbeat: audit clean");
  }

  // (b) Failure while packets of the session sit in the rate limiter.
  {
    EndpointConfig ep;
    ep.cc.delta_bps = 1;
    SimCluster c(SimConfig{}, ep);
    c.ep(1).register_handler(
        kEchoReqType,
        [](ReqHandle& h) {
          h.init_response(8);
          h.endpoint().enqueue_response(h);
        },
        HandlerMode::kDispatch);
    const uint16_t s = c.connect(0, 1, 32, 8);
    auto* sess = const_cast<Session*>(c.ep(0).session(s));
    sess->cc->timely.set_rate(15e6);
    std::vector<std::unique_ptr<std::pair<MsgBuf, MsgBuf>>> bufs;
    std::vector<int> conts(12, 0);
    std::vector<RpcStatus> status(12, RpcStatus::kOk);
    uint32_t queued_at_cont = 0;
    c.at(0, c.net().now(), [&] {
      for (int i = 0; i < 12; i++) {
        bufs.push_back(std::make_unique<std::pair<MsgBuf, MsgBuf>>(
            c.ep(0).alloc_msg_buffer(50000), c.ep(0).alloc_msg_buffer(8)));
        c.ep(0).enqueue_request(s, kEchoReqType, bufs.back()->first, bufs.back()->second,
                                [&, i](RpcStatus st, MsgBuf&) {
                                  conts[static_cast<size_t>(i)]++;
                                  status[static_cast<size_t>(i)] = st;
                                  queued_at_cont += sess->cc->queued;
                                });
      }
    });
    run_sim(c, [&] { return sess->cc->queued >= 8; }, 1s);
    c.net().kill_host(1);
    c.at(0, c.net().now(), [&] { c.ep(0).handle_node_failure(SimCluster::addr(1)); });
    run_sim(c, [&] { return sess->state == SessionState::kFailing; }, 1s);
    const uint32_t queued_at_failure = sess->cc->queued;
    run_sim(c, [&] {
      return std::all_of(conts.begin(), conts.end(), [](int n) { return n > 0; });
    }, 1s);
    run_sim(c, [] { return false; }, 20ms);
    size_t not_once = 0;
    size_t failed = 0;
    size_t refs = 0;
    for (size_t i = 0; i < 12; i++) {
      not_once += conts[i] != 1;
      failed += status[i] == RpcStatus::kNodeFailure;
      refs += static_cast<size_t>(bufs[i]->first.tx_refs());
    }
    const uint64_t audit = c.ep(0).stats().audit_violations;
    o.detail << "rate-limited: queued at failure=" << queued_at_failure
             << " node-failure=" << failed << "/12 audit=" << audit << "; ";
    o.require(queued_at_failure > 0, "packets queued in the limiter at failure");
    o.require(not_once == 0 && failed == 12, "limiter: NodeFailure exactly once");
    o.require(queued_at_cont == 0, "limiter: continuations after the queue drained");
    o.require(audit == 0 && refs == 0, "limiter: audit clean");
  }

  // (c) False-positive retransmission: the first response is held past the
  // timeout, and at 20 kbit/s the retransmitted request is still waiting in
  // the limiter when that response arrives.
  {
    EndpointConfig ep;
    ep.cc.delta_bps = 1;
    ep.cc.min_rate_bps = 1e3;
    SimCluster c(SimConfig{}, ep);
    int handled = 0;
    c.ep(1).register_handler(
        kEchoReqType,
        [&](ReqHandle& h) {
          handled++;
          h.init_response(8);
          h.endpoint().enqueue_response(h);
        },
        HandlerMode::kDispatch);
    const uint16_t s = c.connect(0, 1);
    auto* sess = const_cast<Session*>(c.ep(0).session(s));
    sess->cc->timely.set_rate(2e4);
    bool delayed = false;
    c.net().set_fault_hook([&](const PacketInfo& i) {
      FaultAction a;
      if (!delayed && i.has_header && i.header.pkt_type == PktType::kRespData) {
        delayed = true;
        a.delay = 7ms;
      }
      return a;
    });
    MsgBuf req = c.ep(0).alloc_msg_buffer(8);
    MsgBuf resp = c.ep(0).alloc_msg_buffer(8);
    int conts = 0;
    RpcStatus st = RpcStatus::kTimeout;
    c.at(0, c.net().now(), [&] {
      c.ep(0).enqueue_request(s, kEchoReqType, req, resp, [&](RpcStatus x, MsgBuf&) {
        conts++;
        st = x;
      });
    });
    run_sim(c, [&] { return conts > 0; }, 2s);
    run_sim(c, [] { return false; }, 50ms);
    const EndpointStats& cs = c.ep(0).stats();
    o.detail << "false positive: retransmits=" << cs.retransmit_events
             << " responses dropped while retransmission queued=" << cs.drops_resp_retx_queued
             << " handler runs=" << handled << " continuations=" << conts;
    o.require(cs.retransmit_events > 0 && cs.drops_resp_retx_queued > 0,
              "response-drop path exercised");
    o.require(conts == 1 && st == RpcStatus::kOk && handled == 1, "completes once");
    o.require(cs.audit_violations == 0 && req.tx_refs() == 0, "false positive: audit clean");
  }
  return o;
}

// ---------------------------------------------------------------------------

std::string all_tables(uint64_t seed) {
  SimConfig net;
  net.seed = seed;
  std::string out;

  SimConfig lossy = net;
  lossy.loss = 1e-2;
  LatencyParams lp;
  lp.num_rpcs = 3000;
  out += latency_table({run_latency(lossy, EndpointConfig{}, lp)}).csv();

  BandwidthParams bp;
  bp.msg_size = 1 << 20;
  bp.num_msgs = 10;
  std::vector<BandwidthResult> bw;
  for (double l : {0.0, 1e-4, 1e-3}) {
    SimConfig n = net;
    n.loss = l;
    bw.push_back(run_bandwidth(n, EndpointConfig{}, bp));
  }
  out += bandwidth_table(bw).csv();

  IncastParams ip;
  ip.fan_in = 8;
  ip.msg_size = 1 << 20;
  ip.warmup = 2ms;
  ip.measure = 5ms;
  EndpointConfig off;
  off.opt.congestion_control = false;
  out += incast_table({run_incast(net, EndpointConfig{}, ip), run_incast(net, off, ip)}).csv();

  RateParams rp;
  rp.measure = 1ms;
  out += rate_table(run_rate_factor_analysis(net, EndpointConfig{}, rp)).csv();

  KvParams kp;
  kp.ops = 2000;
  out += kv_table({run_kv(net, EndpointConfig{}, kp)}).csv();

  out += "trace," + std::to_string(loss_run(1e-2, 0.02, seed, 500, false).trace) + "\n";
  return out;
}

Outcome c12_determinism() {
  Outcome o;
  const std::string a = all_tables(42);
  const std::string b = all_tables(42);
  const std::string other = all_tables(43);
  o.detail << "csv bytes=" << a.size() << " identical=" << (a == b)
           << " differs for another seed=" << (a != other);
  o.require(a == b, "same seed, same output");
  o.require(a != other, "seed changes the run");
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"codec and layout exactness", c1_codec_layout},
      {"packet-count exactness", c2_packet_counts},
      {"at-most-once under loss", c3_at_most_once},
      {"credit conservation", c4_credit_conservation},
      {"congestion-control effectiveness", c5_incast},
      {"loss-throughput degradation", c6_loss_throughput},
      {"bypass soundness", c7_bypass},
      {"timely update vectors", c8_timely},
      {"rate limiter pacing", c9_pacing},
      {"dispatch/worker isolation", c10_isolation},
      {"node failure", c11_node_failure},
      {"determinism", c12_determinism},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); i++) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " exception: " << e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " ("
              << criteria[i].first << "): " << o.detail.str() << " [" << std::fixed
              << std::setprecision(1) << secs << "s]" << std::defaultfloat << std::endl;
  }
  return failed;
}
