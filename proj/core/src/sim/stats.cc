#include "dgrpc/sim/stats.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace dgrpc::sim {

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0;
  if (p <= 0) return *std::min_element(v.begin(), v.end());
  const auto rank = static_cast<size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size()) - 1e-9));
  const size_t idx = std::min(v.size(), std::max<size_t>(rank, 1)) - 1;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
  return v[idx];
}

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void Table::add_row(std::vector<std::string> row) {
  if (row.size() != cols_.size()) throw std::invalid_argument("row width differs from header");
  rows_.push_back(std::move(row));
}

std::string Table::csv() const {
  std::ostringstream o;
  auto line = [&o](const std::vector<std::string>& r) {
    for (size_t i = 0; i < r.size(); i++) o << (i ? "," : "") << r[i];
    o << "\n";
  };
  line(cols_);
  for (const auto& r : rows_) line(r);
  return o.str();
}

std::string Table::aligned() const {
  std::vector<size_t> w(cols_.size());
  for (size_t i = 0; i < cols_.size(); i++) w[i] = cols_[i].size();
  for (const auto& r : rows_) {
    for (size_t i = 0; i < r.size(); i++) w[i] = std::max(w[i], r[i].size());
  }
  std::ostringstream o;
  auto line = [&](const std::vector<std::string>& r) {
    for (size_t i = 0; i < r.size(); i++) {
      if (i) o << "  ";
      o << std::string(w[i] - r[i].size(), ' ') << r[i];
    }
    o << "\n";
  };
  line(cols_);
  for (const auto& r : rows_) line(r);
  return o.str();
}

}  // namespace dgrpc::sim
