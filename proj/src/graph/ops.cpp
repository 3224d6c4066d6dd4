#include "kim/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace kim::ops {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void shape_fail(OpKind op, const std::string& what) {
  throw ShapeError(std::string(op_name(op)) + ": " + what);
}

std::string dims(const Value& v) {
  if (v.rank == 0) return "scalar";
  if (v.rank == 1) return "[" + std::to_string(v.rows) + "]";
  return "[" + std::to_string(v.rows) + ", " + std::to_string(v.cols) + "]";
}

bool truthy(double x) { return x != 0.0; }

// Result shape of an elementwise op over `a` and `b` (scalar broadcasts).
const Value& broadcast_shape(OpKind op, const Value& a, const Value& b) {
  if (a.rank == 0) return b;
  if (b.rank == 0) return a;
  if (a.rank != b.rank || a.rows != b.rows || a.cols != b.cols) {
    shape_fail(op, "operand shapes " + dims(a) + " and " + dims(b) + " differ");
  }
  return a;
}

void shape_like(Value& out, const Value& like) { out.reshape(like.rank, like.rows, like.cols); }

inline std::size_t at(const Value& v, std::size_t k) { return v.rank == 0 ? 0 : k; }

template <class F>
void binary(OpKind op, const Value& a, const Value& b, Value& out, F f) {
  const Value& s = broadcast_shape(op, a, b);
  const auto n = s.size();
  const int rank = s.rank;
  const auto rows = s.rows, cols = s.cols;
  // `out` may alias neither argument (slots are distinct), so reshape is safe.
  out.reshape(rank, rows, cols);
  for (std::size_t k = 0; k < n; ++k) out.data[k] = f(a.data[at(a, k)], b.data[at(b, k)]);
}

template <class F>
void unary(const Value& a, Value& out, F f) {
  shape_like(out, a);
  for (std::size_t k = 0; k < a.size(); ++k) out.data[k] = f(a.data[k]);
}

// Adds `g` into adj at element k, summing when adj is a broadcast scalar.
inline void accum(Value* adj, std::size_t k, double g) {
  if (adj) adj->data[adj->rank == 0 ? 0 : k] += g;
}

std::size_t first_min(const Value& v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v.data[k] < v.data[best]) best = k;
  }
  return best;
}

double min_gap(const Value& v) {
  if (v.size() < 2) return kInf;
  double lo = kInf, second = kInf;
  for (double x : v.data) {
    if (x < lo) {
      second = lo;
      lo = x;
    } else if (x < second) {
      second = x;
    }
  }
  return second - lo;
}

std::size_t rounded_index(double x) {
  if (!(x > 0.0)) return 0;
  return static_cast<std::size_t>(std::llround(x));
}

struct Hasher {
  std::uint64_t h = 1469598103934665603ull;
  void add(std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  }
};

}  // namespace

bool lin_combine_is_dot(const OpCall& call) {
  return call.vector_weights && call.n_terms == 1 && call.args[0]->rank != 0;
}

void forward(const OpCall& c, Value& out) {
  const auto& a = c.args;
  switch (c.op) {
    case OpKind::add:
      binary(c.op, *a[0], *a[1], out, [](double x, double y) { return x + y; });
      return;
    case OpKind::sub:
      binary(c.op, *a[0], *a[1], out, [](double x, double y) { return x - y; });
      return;
    case OpKind::mul:
      binary(c.op, *a[0], *a[1], out, [](double x, double y) { return x * y; });
      return;
    case OpKind::min2:
      binary(c.op, *a[0], *a[1], out, [](double x, double y) { return y < x ? y : x; });
      return;
    case OpKind::max2:
      binary(c.op, *a[0], *a[1], out, [](double x, double y) { return y > x ? y : x; });
      return;
    case OpKind::nor:
      binary(c.op, *a[0], *a[1], out,
             [](double x, double y) { return (truthy(x) || truthy(y)) ? 0.0 : 1.0; });
      return;
    case OpKind::euclid_norm2:
      binary(c.op, *a[0], *a[1], out,
             [](double x, double y) { return std::sqrt(x * x + y * y); });
      return;
    case OpKind::neg:
      unary(*a[0], out, [](double x) { return -x; });
      return;
    case OpKind::abs:
      unary(*a[0], out, [](double x) { return std::fabs(x); });
      return;
    case OpKind::sqrt:
      unary(*a[0], out, [](double x) { return std::sqrt(x); });
      return;
    case OpKind::square:
      unary(*a[0], out, [](double x) { return x * x; });
      return;
    case OpKind::tanh:
      unary(*a[0], out, [](double x) { return std::tanh(x); });
      return;
    case OpKind::one_minus:
      unary(*a[0], out, [](double x) { return 1.0 - x; });
      return;
    case OpKind::logical_not:
      unary(*a[0], out, [](double x) { return truthy(x) ? 0.0 : 1.0; });
      return;
    case OpKind::lt:
    case OpKind::gt: {
      if (a[1]->rank != 0) shape_fail(c.op, "threshold must be a scalar");
      const double thr = a[1]->item();
      if (c.op == OpKind::lt) {
        unary(*a[0], out, [thr](double x) { return x < thr ? 1.0 : 0.0; });
      } else {
        unary(*a[0], out, [thr](double x) { return x > thr ? 1.0 : 0.0; });
      }
      return;
    }
    case OpKind::clip: {
      if (a[1]->rank != 0 || a[2]->rank != 0) shape_fail(c.op, "bounds must be scalars");
      const double lo = a[1]->item(), hi = a[2]->item();
      unary(*a[0], out, [lo, hi](double x) { return std::min(std::max(x, lo), hi); });
      return;
    }
    case OpKind::where: {
      const Value& s = broadcast_shape(c.op, *a[1], *a[2]);
      broadcast_shape(c.op, *a[0], s);
      const Value& cond = *a[0];
      const Value& x = *a[1];
      const Value& y = *a[2];
      const Value& shape = cond.rank != 0 && s.rank == 0 ? cond : s;
      out.reshape(shape.rank, shape.rows, shape.cols);
      for (std::size_t k = 0; k < out.size(); ++k) {
        out.data[k] = truthy(cond.data[at(cond, k)]) ? x.data[at(x, k)] : y.data[at(y, k)];
      }
      return;
    }
    case OpKind::any: {
      bool hit = false;
      for (double x : a[0]->data) hit = hit || truthy(x);
      out.reshape(0, 1, 1);
      out.data[0] = hit ? 1.0 : 0.0;
      return;
    }
    case OpKind::stack: {
      out.reshape(1, a.size(), 1);
      for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k]->rank != 0) shape_fail(c.op, "arguments must be scalars");
        out.data[k] = a[k]->item();
      }
      return;
    }
    case OpKind::col: {
      const Value& x = *a[0];
      if (x.rank == 2) {
        if (c.index >= x.cols) {
          shape_fail(c.op, "column " + std::to_string(c.index) + " out of range for " + dims(x));
        }
        out.reshape(1, x.rows, 1);
        for (std::size_t r = 0; r < x.rows; ++r) out.data[r] = x.data[r * x.cols + c.index];
      } else if (x.rank == 1) {
        if (c.index >= x.rows) {
          shape_fail(c.op, "index " + std::to_string(c.index) + " out of range for " + dims(x));
        }
        out.reshape(0, 1, 1);
        out.data[0] = x.data[c.index];
      } else {
        shape_fail(c.op, "cannot index a scalar");
      }
      return;
    }
    case OpKind::window: {
      const Value& x = *a[0];
      if (x.rank == 0) shape_fail(c.op, "cannot slice a scalar");
      const auto start = std::min(rounded_index(a[1]->item()), x.rows);
      const auto len = std::min(rounded_index(a[2]->item()), x.rows - start);
      out.reshape(x.rank, len, x.cols);
      std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(start * x.cols), len * x.cols,
                  out.data.begin());
      return;
    }
    case OpKind::reduce_min:
    case OpKind::reduce_mean:
    case OpKind::argmin_index: {
      const Value& x = *a[0];
      if (x.size() == 0 || (x.rank == 1 && x.rows == 0)) shape_fail(c.op, "empty reduction");
      double r = 0.0;
      if (c.op == OpKind::reduce_min) {
        r = x.data[first_min(x)];
      } else if (c.op == OpKind::argmin_index) {
        r = static_cast<double>(first_min(x));
      } else {
        for (double v : x.data) r += v;
        r /= static_cast<double>(x.size());
      }
      out.reshape(0, 1, 1);
      out.data[0] = r;
      return;
    }
    case OpKind::lin_combine: {
      const std::size_t nt = c.n_terms;
      if (lin_combine_is_dot(c)) {
        const Value& t = *a[0];
        const Value& w = *a[1];
        if (w.size() != t.size()) {
          shape_fail(c.op, "weight length " + std::to_string(w.size()) +
                               " does not match term length " + std::to_string(t.size()));
        }
        double s = 0.0;
        for (std::size_t k = 0; k < t.size(); ++k) s += w.data[k] * t.data[k];
        if (c.has_bias) s += a[2]->item();
        out.reshape(0, 1, 1);
        out.data[0] = s;
        return;
      }
      const Value* shape = a[0];
      for (std::size_t i = 1; i < nt; ++i) shape = &broadcast_shape(c.op, *shape, *a[i]);
      const Value* wvec = c.vector_weights ? a[nt] : nullptr;
      if (wvec && wvec->size() != nt) {
        shape_fail(c.op, "weight length " + std::to_string(wvec->size()) + " does not match " +
                             std::to_string(nt) + " terms");
      }
      const std::size_t bias_slot = c.vector_weights ? nt + 1 : 2 * nt;
      const int rank = shape->rank;
      const auto rows = shape->rows, cols = shape->cols;
      out.reshape(rank, rows, cols);
      for (std::size_t k = 0; k < out.size(); ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < nt; ++i) {
          const double w = wvec ? wvec->data[i] : a[nt + i]->item();
          s += w * a[i]->data[at(*a[i], k)];
        }
        if (c.has_bias) s += a[bias_slot]->item();
        out.data[k] = s;
      }
      return;
    }
  }
}

void backward(const OpCall& c, const Value& out, const Value& g, std::span<Value* const> adj) {
  const auto& a = c.args;
  const auto n = out.size();
  switch (c.op) {
    case OpKind::add:
      for (std::size_t k = 0; k < n; ++k) {
        accum(adj[0], k, g.data[k]);
        accum(adj[1], k, g.data[k]);
      }
      return;
    case OpKind::sub:
      for (std::size_t k = 0; k < n; ++k) {
        accum(adj[0], k, g.data[k]);
        accum(adj[1], k, -g.data[k]);
      }
      return;
    case OpKind::mul:
      for (std::size_t k = 0; k < n; ++k) {
        accum(adj[0], k, g.data[k] * a[1]->data[at(*a[1], k)]);
        accum(adj[1], k, g.data[k] * a[0]->data[at(*a[0], k)]);
      }
      return;
    case OpKind::min2:
    case OpKind::max2:
      // Ties route to the first argument.
      for (std::size_t k = 0; k < n; ++k) {
        const double x = a[0]->data[at(*a[0], k)], y = a[1]->data[at(*a[1], k)];
        const bool second = c.op == OpKind::min2 ? y < x : y > x;
        accum(adj[second ? 1 : 0], k, g.data[k]);
      }
      return;
    case OpKind::euclid_norm2:
      for (std::size_t k = 0; k < n; ++k) {
        const double r = out.data[k];
        if (r == 0.0) continue;
        accum(adj[0], k, g.data[k] * a[0]->data[at(*a[0], k)] / r);
        accum(adj[1], k, g.data[k] * a[1]->data[at(*a[1], k)] / r);
      }
      return;
    case OpKind::neg:
      for (std::size_t k = 0; k < n; ++k) accum(adj[0], k, -g.data[k]);
      return;
    case OpKind::one_minus:
      for (std::size_t k = 0; k < n; ++k) accum(adj[0], k, -g.data[k]);
      return;
    case OpKind::abs:
      for (std::size_t k = 0; k < n; ++k) {
        const double x = a[0]->data[k];
        accum(adj[0], k, x > 0.0 ? g.data[k] : (x < 0.0 ? -g.data[k] : 0.0));
      }
      return;
    case OpKind::sqrt:
      for (std::size_t k = 0; k < n; ++k) accum(adj[0], k, g.data[k] * 0.5 / out.data[k]);
      return;
    case OpKind::square:
      for (std::size_t k = 0; k < n; ++k) accum(adj[0], k, g.data[k] * 2.0 * a[0]->data[k]);
      return;
    case OpKind::tanh:
      for (std::size_t k = 0; k < n; ++k) {
        const double y = out.data[k];
        accum(adj[0], k, g.data[k] * (1.0 - y * y));
      }
      return;
    case OpKind::clip: {
      const double lo = a[1]->item(), hi = a[2]->item();
      for (std::size_t k = 0; k < n; ++k) {
        const double x = a[0]->data[k];
        if (x > lo && x < hi) {
          accum(adj[0], k, g.data[k]);
        } else {
          // Clamped: the active bound carries the adjoint.
          accum(adj[std::max(x, lo) >= hi ? 2 : 1], 0, g.data[k]);
        }
      }
      return;
    }
    case OpKind::where: {
      const Value& cond = *a[0];
      for (std::size_t k = 0; k < n; ++k) {
        accum(adj[truthy(cond.data[at(cond, k)]) ? 1 : 2], k, g.data[k]);
      }
      return;
    }
    case OpKind::stack:
      for (std::size_t k = 0; k < n; ++k) accum(adj[k], 0, g.data[k]);
      return;
    case OpKind::col: {
      Value* d = adj[0];
      if (!d) return;
      const Value& x = *a[0];
      if (x.rank == 2) {
        for (std::size_t r = 0; r < x.rows; ++r) d->data[r * x.cols + c.index] += g.data[r];
      } else {
        d->data[c.index] += g.data[0];
      }
      return;
    }
    case OpKind::window: {
      Value* d = adj[0];
      if (!d) return;
      const Value& x = *a[0];
      const auto start = std::min(rounded_index(a[1]->item()), x.rows);
      const auto off = start * x.cols;
      for (std::size_t k = 0; k < n; ++k) d->data[off + k] += g.data[k];
      return;
    }
    case OpKind::reduce_min:
      accum(adj[0], first_min(*a[0]), g.data[0]);
      return;
    case OpKind::reduce_mean: {
      const double s = g.data[0] / static_cast<double>(a[0]->size());
      if (adj[0]) {
        for (auto& v : adj[0]->data) v += s;
      }
      return;
    }
    case OpKind::lin_combine: {
      const std::size_t nt = c.n_terms;
      if (lin_combine_is_dot(c)) {
        const Value& t = *a[0];
        const Value& w = *a[1];
        const double gs = g.data[0];
        for (std::size_t k = 0; k < t.size(); ++k) {
          accum(adj[0], k, gs * w.data[k]);
          accum(adj[1], k, gs * t.data[k]);
        }
        if (c.has_bias) accum(adj[2], 0, gs);
        return;
      }
      const Value* wvec = c.vector_weights ? a[nt] : nullptr;
      const std::size_t bias_slot = c.vector_weights ? nt + 1 : 2 * nt;
      for (std::size_t k = 0; k < n; ++k) {
        const double gk = g.data[k];
        for (std::size_t i = 0; i < nt; ++i) {
          const double w = wvec ? wvec->data[i] : a[nt + i]->item();
          const double t = a[i]->data[at(*a[i], k)];
          accum(adj[i], k, gk * w);
          if (wvec) {
            if (adj[nt]) adj[nt]->data[i] += gk * t;
          } else {
            accum(adj[nt + i], 0, gk * t);
          }
        }
        if (c.has_bias) accum(adj[bias_slot], 0, gk);
      }
      return;
    }
    case OpKind::nor:
    case OpKind::logical_not:
    case OpKind::any:
    case OpKind::lt:
    case OpKind::gt:
    case OpKind::argmin_index:
      return;
  }
}

KinkInfo inspect_kinks(const OpCall& c, const Value& out) {
  KinkInfo info{kInf, 0};
  Hasher h;
  h.add(static_cast<std::uint64_t>(c.op));
  const auto& a = c.args;
  switch (c.op) {
    case OpKind::abs:
    case OpKind::sqrt:
      for (double x : a[0]->data) {
        info.margin = std::min(info.margin, std::fabs(x));
        h.add(x > 0.0 ? 1 : (x < 0.0 ? 2 : 3));
      }
      break;
    case OpKind::euclid_norm2:
      for (double r : out.data) info.margin = std::min(info.margin, r);
      break;
    case OpKind::clip: {
      const double lo = a[1]->item(), hi = a[2]->item();
      for (double x : a[0]->data) {
        info.margin = std::min({info.margin, std::fabs(x - lo), std::fabs(x - hi)});
        h.add(x <= lo ? 1 : (x >= hi ? 2 : 3));
      }
      break;
    }
    case OpKind::min2:
    case OpKind::max2: {
      const Value& s = broadcast_shape(c.op, *a[0], *a[1]);
      for (std::size_t k = 0; k < s.size(); ++k) {
        const double x = a[0]->data[at(*a[0], k)], y = a[1]->data[at(*a[1], k)];
        info.margin = std::min(info.margin, std::fabs(x - y));
        h.add(x < y ? 1 : (x > y ? 2 : 3));
      }
      break;
    }
    case OpKind::lt:
    case OpKind::gt: {
      const double thr = a[1]->item();
      for (double x : a[0]->data) info.margin = std::min(info.margin, std::fabs(x - thr));
      for (double y : out.data) h.add(y != 0.0);
      break;
    }
    case OpKind::reduce_min:
    case OpKind::argmin_index:
      info.margin = min_gap(*a[0]);
      h.add(first_min(*a[0]));
      break;
    case OpKind::window: {
      for (int i = 1; i <= 2; ++i) {
        const double x = a[static_cast<std::size_t>(i)]->item();
        info.margin = std::min(info.margin, std::fabs(std::fabs(x - std::floor(x)) - 0.5));
      }
      h.add(out.rows);
      break;
    }
    case OpKind::where:
    case OpKind::nor:
    case OpKind::logical_not:
    case OpKind::any:
      for (double y : (c.op == OpKind::where ? a[0]->data : out.data)) h.add(y != 0.0);
      break;
    default:
      break;
  }
  info.signature = h.h;
  return info;
}

std::span<const KernelRule> kernel_rules() {
  static const std::array<KernelRule, kOpKindCount> rules{{
      {OpKind::add, "a + b (scalar broadcasts)", "da += g; db += g (summed over broadcast)"},
      {OpKind::sub, "a - b", "da += g; db -= g"},
      {OpKind::mul, "a * b", "da += g*b; db += g*a"},
      {OpKind::neg, "-a", "da -= g"},
      {OpKind::lin_combine, "sum_i w_i * t_i (+ bias); vector weight on one vector term = dot",
       "dt_i += g*w_i; dw_i += sum g*t_i; dbias += sum g"},
      {OpKind::abs, "|a|", "da += g*sign(a), sign(0) = 0"},
      {OpKind::clip, "min(max(a, lo), hi)",
       "da += g strictly inside (lo, hi), else 0; the active bound receives g"},
      {OpKind::min2, "elementwise min", "adjoint to the smaller argument, ties to the first"},
      {OpKind::max2, "elementwise max", "adjoint to the larger argument, ties to the first"},
      {OpKind::where, "cond != 0 ? a : b", "adjoint to the selected branch only; cond gets 0"},
      {OpKind::nor, "!(a || b) as 0/1", "none"},
      {OpKind::logical_not, "!a as 0/1", "none"},
      {OpKind::any, "1 if any element != 0", "none"},
      {OpKind::stack, "scalars -> vector", "split the adjoint back to each scalar"},
      {OpKind::col, "column j of a matrix, element j of a vector",
       "scatter the adjoint into column j; the index is structural"},
      {OpKind::window, "rows [start, start+len) clamped to the extent",
       "scatter the adjoint into the selected rows; start and len get 0"},
      {OpKind::sqrt, "sqrt(a)", "da += g / (2 sqrt(a))"},
      {OpKind::square, "a^2", "da += 2 g a"},
      {OpKind::lt, "a < thr as 0/1", "none"},
      {OpKind::gt, "a > thr as 0/1", "none"},
      {OpKind::reduce_min, "minimum element",
       "full adjoint to the first minimal element (lowest index)"},
      {OpKind::reduce_mean, "arithmetic mean", "da_k += g / n"},
      {OpKind::argmin_index, "index of the first minimal element", "none"},
      {OpKind::euclid_norm2, "sqrt(a^2 + b^2)", "da += g a / r; db += g b / r; 0 at r = 0"},
      {OpKind::tanh, "tanh(a)", "da += g (1 - tanh(a)^2)"},
      {OpKind::one_minus, "1 - a", "da -= g"},
  }};
  return rules;
}

}  // namespace kim::ops
