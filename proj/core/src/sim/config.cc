#include "dgrpc/sim/config.h"

#include <fstream>
#include <sstream>

namespace dgrpc::sim {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_num(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (is.fail() || !is.eof()) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

}  // namespace

void SimConfig::validate() const {
  if (hosts < 2) throw ConfigError("need at least 2 hosts");
  if (link_gbps <= 0) throw ConfigError("link_gbps must be positive");
  if (prop_us < 0 || fwd_ns < 0 || control_latency_us < 0 || reorder_delay_us < 0) {
    throw ConfigError("delays must be non-negative");
  }
  if (loss < 0 || loss >= 1) throw ConfigError("loss must be in [0, 1)");
  if (reorder < 0 || reorder >= 1) throw ConfigError("reorder must be in [0, 1)");
  if (switch_buffer_bytes < mtu_data + kHeaderSize) throw ConfigError("switch buffer too small");
  if (mtu_data < 1 || rx_queue < 1) throw ConfigError("mtu_data and rx_queue must be positive");
}

SimConfig SimConfig::parse(const std::string& text) {
  SimConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string k = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    if (k == "hosts") c.hosts = parse_num<uint32_t>(k, v);
    else if (k == "link_gbps") c.link_gbps = parse_num<double>(k, v);
    else if (k == "prop_us") c.prop_us = parse_num<double>(k, v);
    else if (k == "fwd_ns") c.fwd_ns = parse_num<double>(k, v);
    else if (k == "switch_buffer_bytes") c.switch_buffer_bytes = parse_num<uint64_t>(k, v);
    else if (k == "loss") c.loss = parse_num<double>(k, v);
    else if (k == "reorder") c.reorder = parse_num<double>(k, v);
    else if (k == "reorder_delay_us") c.reorder_delay_us = parse_num<double>(k, v);
    else if (k == "control_latency_us") c.control_latency_us = parse_num<double>(k, v);
    else if (k == "mtu_data") c.mtu_data = parse_num<size_t>(k, v);
    else if (k == "rx_queue") c.rx_queue = parse_num<size_t>(k, v);
    else if (k == "seed") c.seed = parse_num<uint64_t>(k, v);
    else throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

SimConfig SimConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string SimConfig::to_text() const {
  std::ostringstream o;
  o.precision(17);
  o << "hosts = " << hosts << "\n"
    << "link_gbps = " << link_gbps << "\n"
    << "prop_us = " << prop_us << "\n"
    << "fwd_ns = " << fwd_ns << "\n"
    << "switch_buffer_bytes = " << switch_buffer_bytes << "\n"
    << "loss = " << loss << "\n"
    << "reorder = " << reorder << "\n"
    << "reorder_delay_us = " << reorder_delay_us << "\n"
    << "control_latency_us = " << control_latency_us << "\n"
    << "mtu_data = " << mtu_data << "\n"
    << "rx_queue = " << rx_queue << "\n"
    << "seed = " << seed << "\n";
  return o.str();
}

}  // namespace dgrpc::sim
