#pragma once

#include <string>
#include <vector>

namespace dgrpc::sim {

/// Nearest-rank percentile (p in [0, 100]) of an unsorted sample; 0 for an
/// empty one.
double percentile(std::vector<double> v, double p);

/// Fixed-precision decimal, so output is identical across runs.
std::string fmt_fixed(double v, int digits = 3);

/// Minimal CSV table that renders either as CSV or as aligned text.
class Table {
 public:
  explicit Table(std::vector<std::string> columns) : cols_(std::move(columns)) {}
  void add_row(std::vector<std::string> row);
  const std::vector<std::string>& columns() const { return cols_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  std::string csv() const;
  std::string aligned() const;

 private:
  std::vector<std::string> cols_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace dgrpc::sim
