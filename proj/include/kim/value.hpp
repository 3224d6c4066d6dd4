#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace kim {

/// Dense real-valued array of rank 0, 1 or 2 (row-major). Booleans are 0.0/1.0.
struct Value {
  int rank = 0;
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::vector<double> data{0.0};

  static Value scalar(double v) { return Value{0, 1, 1, {v}}; }
  static Value vector(std::vector<double> v) {
    const auto n = v.size();
    return Value{1, n, 1, std::move(v)};
  }
  static Value matrix(std::size_t r, std::size_t c, std::vector<double> v) {
    return Value{2, r, c, std::move(v)};
  }

  std::size_t size() const { return data.size(); }
  double item() const { return data.front(); }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  /// Reshape in place, keeping the allocation when possible.
  void reshape(int new_rank, std::size_t r, std::size_t c) {
    rank = new_rank;
    rows = r;
    cols = c;
    data.resize(r * c);
  }

  bool operator==(const Value&) const = default;
};

using ValueMap = std::map<std::string, Value>;

}  // namespace kim
