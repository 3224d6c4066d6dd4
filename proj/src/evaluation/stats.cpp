#include <algorithm>
#include <cmath>
#include <limits>

#include "kim/error.hpp"
#include "kim/evaluation.hpp"

namespace kim {

namespace {

// Lentz's continued fraction for I_x(a, b); converges for x < (a + 1) / (a + b + 2).
double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) return h;
  }
  throw NumericFault("incomplete_beta", "continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ContractViolation("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw ContractViolation("incomplete beta needs x in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double lbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  const double front = std::exp(lbeta + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw ContractViolation("degrees of freedom must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = df / (df + t * t);
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
  return t > 0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw ContractViolation("quantile level must lie in (0, 1)");
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -student_t_quantile(1.0 - p, df);
  // Bracket, then bisect; the cdf is monotone so this always converges.
  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, df) < p) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e12) return hi;
  }
  for (int i = 0; i < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double mean(std::span<const double> v) {
  if (v.empty()) throw ContractViolation("mean of an empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

ConfidenceInterval confidence_interval(std::span<const double> samples, double level) {
  if (samples.size() < 2) {
    throw ContractViolation("confidence interval needs at least 2 samples, got " +
                            std::to_string(samples.size()));
  }
  if (!(level > 0.0 && level < 1.0)) throw ContractViolation("confidence level must lie in (0, 1)");
  ConfidenceInterval ci;
  ci.level = level;
  ci.mean = mean(samples);
  const auto n = static_cast<double>(samples.size());
  ci.multiplier = student_t_quantile(0.5 * (1.0 + level), n - 1.0);
  const double half = ci.multiplier * sample_std(samples) / std::sqrt(n);
  ci.lo = ci.mean - half;
  ci.hi = ci.mean + half;
  return ci;
}

PairedComparison paired_t_test(std::span<const double> a, std::span<const double> b,
                               std::span<const std::uint64_t> keys_a,
                               std::span<const std::uint64_t> keys_b, std::string condition_a,
                               std::string condition_b) {
  if (a.size() != keys_a.size() || b.size() != keys_b.size()) {
    throw ContractViolation("each sample needs exactly one pairing key");
  }
  if (a.size() != b.size()) {
    throw ContractViolation("paired samples differ in size: " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
  }
  if (!std::equal(keys_a.begin(), keys_a.end(), keys_b.begin())) {
    throw ContractViolation("paired samples use different keys");
  }
  if (a.size() < 2) throw ContractViolation("paired t-test needs at least 2 pairs");
  PairedComparison r;
  r.condition_a = std::move(condition_a);
  r.condition_b = std::move(condition_b);
  r.keys.assign(keys_a.begin(), keys_a.end());
  r.a.assign(a.begin(), a.end());
  r.b.assign(b.begin(), b.end());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  r.mean_diff = mean(d);
  r.sd_diff = sample_std(d);
  r.df = static_cast<int>(d.size()) - 1;
  if (r.sd_diff == 0.0) {
    if (r.mean_diff == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.degenerate_variance = true;
      r.t = r.mean_diff > 0 ? std::numeric_limits<double>::infinity()
                            : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = r.mean_diff / (r.sd_diff / std::sqrt(static_cast<double>(d.size())));
  const double x = r.df / (r.df + r.t * r.t);
  r.p = incomplete_beta(0.5 * r.df, 0.5, x);
  return r;
}

}  // namespace kim
