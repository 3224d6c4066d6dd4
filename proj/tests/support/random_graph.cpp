#include "random_graph.hpp"

#include <cstdio>
#include <vector>

namespace kim::testing {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::size_t pick(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace

std::string random_graph_text(std::uint64_t seed) {
  Rng rng(seed);
  std::string t = "model rand_" + std::to_string(seed % 100000) + "\n\n";
  std::vector<std::string> scalars;  // float scalars usable in expressions
  const std::size_t n_in = 2 + pick(rng, 3);
  for (std::size_t i = 0; i < n_in; ++i) {
    t += "input x" + std::to_string(i) + ": float\n";
    scalars.push_back("x" + std::to_string(i));
  }
  t += "input flag: bool\n";
  t += "input v: float[3]\n";
  t += "input m: float[L, 3]\n\n";

  std::vector<std::string> grad;
  const std::size_t n_grad = 4 + pick(rng, 4);
  for (std::size_t i = 0; i < n_grad; ++i) {
    const std::string name = "p" + std::to_string(i);
    const char* sign = pick(rng, 3) == 0 ? " sign(+)" : (pick(rng, 2) ? " sign(-)" : "");
    t += "param " + name + ": gradient = " + num(uniform(rng, -1.0, 1.0)) + sign + "\n";
    grad.push_back(name);
  }
  t += "param wv: gradient[3] = [" + num(uniform(rng, -1, 1)) + ", " + num(uniform(rng, -1, 1)) +
       ", " + num(uniform(rng, -1, 1)) + "]\n";
  t += "param fz: gradient = " + num(uniform(rng, -1, 1)) + " frozen\n";
  t += "param lo: nongradient = -1.5 grid(-2, -1.5)\n";
  t += "param hi: nongradient = 1.5\n";
  t += "param thr: nongradient = 0.2 grid(0.2, 0.4)\n";
  t += "param k: nongradient = 3 grid(2, 3)\n\n";

  auto any_scalar = [&] { return scalars[pick(rng, scalars.size())]; };
  auto any_grad = [&] { return grad[pick(rng, grad.size())]; };

  const std::size_t n_lat = 4 + pick(rng, 5);
  for (std::size_t i = 0; i < n_lat; ++i) {
    const std::string a = any_scalar(), b = any_scalar(), c = any_scalar();
    const std::string p = any_grad(), q = any_grad(), r = any_grad();
    std::string e;
    switch (pick(rng, 16)) {
      case 0: e = "lin_combine([" + a + ", " + b + "], [" + p + ", " + q + "], " + r + ")"; break;
      case 1: e = "lin_combine([" + a + ", " + b + ", " + c + "], wv, " + p + ")"; break;
      case 2: e = p + " * " + a + " + " + q + " * " + b; break;
      case 3: e = "abs(" + p + " * " + a + " - " + q + ")"; break;
      case 4: e = "tanh(" + p + " * " + a + ")"; break;
      case 5: e = "clip(" + p + " * " + a + ", lo, hi)"; break;
      case 6: e = "min2(" + p + " * " + a + ", " + q + " * " + b + ")"; break;
      case 7: e = "max2(" + p + " + " + a + ", " + q + ")"; break;
      case 8: e = "where(gt(" + a + ", thr), " + p + " * " + b + ", " + q + ")"; break;
      case 9: e = "square(" + p + " - " + a + ") * " + q; break;
      case 10: e = "sqrt(square(" + p + ") + square(" + a + ")) * fz"; break;
      case 11: e = "one_minus(" + p + " * " + a + ") * " + b; break;
      case 12: e = "lin_combine([v], wv, " + p + ") * " + a; break;
      case 13: e = "reduce_mean(lin_combine([col(m, 0), col(m, 2)], [" + p + ", " + q + "], " + r + "))"; break;
      case 14:
        e = "reduce_min(lin_combine([col(window(m, argmin_index(col(m, 1)), k), 0)], [" + p +
            "], " + q + "))";
        break;
      default: e = "-(" + p + " * " + a + ") * one_minus(flag)"; break;
    }
    const std::string name = "h" + std::to_string(i);
    t += "latent " + name + " = " + e + "\n";
    scalars.push_back(name);
  }
  // Outputs read the last latent plus one random earlier value.
  const std::string last = "h" + std::to_string(n_lat - 1);
  if (pick(rng, 2)) {
    t += "\noutput y = stack(" + last + ", " + any_grad() + " * " + any_scalar() + ")\n";
  } else {
    t += "\noutput y = lin_combine([" + last + ", " + any_scalar() + "], [" + any_grad() + ", " +
         any_grad() + "], " + any_grad() + ")\n";
  }
  if (pick(rng, 2)) t += "output z = " + any_grad() + " * " + any_scalar() + "\n";
  return t;
}

ValueMap random_inputs(const PolicyGraph& g, Rng& rng) {
  ValueMap in;
  const std::size_t L = 4 + static_cast<std::size_t>(pick(rng, 7));
  for (const auto& spec : g.inputs) {
    auto draw = [&] { return spec.boolean ? static_cast<double>(pick(rng, 2)) : uniform(rng, -2.0, 2.0); };
    if (spec.shape.rank == 0) {
      in[spec.name] = Value::scalar(draw());
    } else if (spec.shape.rank == 1) {
      const auto n = spec.shape.dims[0].runtime ? L : spec.shape.dims[0].size;
      std::vector<double> v(n);
      for (auto& x : v) x = draw();
      in[spec.name] = Value::vector(std::move(v));
    } else {
      const auto r = spec.shape.dims[0].runtime ? L : spec.shape.dims[0].size;
      const auto c = spec.shape.dims[1].size;
      std::vector<double> v(r * c);
      for (auto& x : v) x = draw();
      in[spec.name] = Value::matrix(r, c, std::move(v));
    }
  }
  return in;
}

ValueMap random_seed(const PolicyGraph& g, Rng& rng) {
  ValueMap seed;
  for (const auto& o : g.outputs) {
    if (o.shape.rank == 0) {
      seed[o.name] = Value::scalar(uniform(rng, -1.0, 1.0));
    } else {
      std::vector<double> v(o.shape.dims[0].size);
      for (auto& x : v) x = uniform(rng, -1.0, 1.0);
      seed[o.name] = Value::vector(std::move(v));
    }
  }
  return seed;
}

ParameterVector jitter_parameters(const PolicyGraph& g, ParameterVector theta, Rng& rng) {
  std::size_t off = 0;
  for (const auto& p : g.parameters) {
    if (p.trainable()) {
      for (std::size_t i = 0; i < p.length; ++i) theta.values[off + i] += uniform(rng, -0.5, 0.5);
    }
    off += p.length;
  }
  return theta;
}

}  // namespace kim::testing
