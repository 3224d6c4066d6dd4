#include <cmath>

#include "kim/random.hpp"
#include "kim/training.hpp"

namespace kim {

namespace {

Parameter dense_param(std::string name, std::size_t length, bool is_vector, Rng& rng,
                      double bound) {
  Parameter p;
  p.name = std::move(name);
  p.length = length;
  p.is_vector = is_vector;
  std::vector<double> v(length);
  for (auto& x : v) x = uniform(rng, -bound, bound);
  p.init = std::move(v);
  return p;
}

}  // namespace

PolicyGraph build_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                      std::size_t output_dim, std::uint64_t seed) {
  if (input_dim == 0 || output_dim == 0) throw ContractViolation("mlp dimensions must be positive");
  for (auto h : hidden) {
    if (h == 0) throw ContractViolation("mlp hidden widths must be positive");
  }
  PolicyGraph g;
  g.name = "mlp";
  g.inputs.push_back({"obs", ValueShape::vector(input_dim), false, {}});
  Rng rng(seed);

  // Layer l reads either the whole obs vector or the previous layer's scalars.
  std::vector<std::string> prev;
  std::size_t fan_in = input_dim;
  auto unit = [&](const std::string& w, const std::string& b) {
    std::vector<Expr> terms;
    if (prev.empty()) {
      terms.push_back(Expr::ref("obs"));
    } else {
      for (const auto& n : prev) terms.push_back(Expr::ref(n));
    }
    return Expr::call(OpKind::lin_combine,
                      {Expr::list(std::move(terms)), Expr::ref(w), Expr::ref(b)});
  };

  const std::size_t n_layers = hidden.size() + 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const bool last = l + 1 == n_layers;
    const std::size_t width = last ? output_dim : hidden[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const std::string tag = last ? "o" : "h" + std::to_string(l + 1);
    std::vector<std::string> names;
    for (std::size_t j = 0; j < width; ++j) {
      const std::string w = "w_" + tag + "_" + std::to_string(j);
      const std::string b = "b_" + tag + "_" + std::to_string(j);
      g.parameters.push_back(dense_param(w, fan_in, true, rng, bound));
      g.parameters.push_back(dense_param(b, 1, false, rng, bound));
      Expr e = unit(w, b);
      if (!last) e = Expr::call(OpKind::tanh, {std::move(e)});
      const std::string n = tag + "_" + std::to_string(j);
      g.latents.push_back({n, {}, std::move(e), {}});
      names.push_back(n);
    }
    prev = std::move(names);
    fan_in = width;
  }

  std::vector<Expr> outs;
  for (const auto& n : prev) outs.push_back(Expr::ref(n));
  g.outputs.push_back({"out", {}, Expr::call(OpKind::stack, std::move(outs)), {}});
  require_valid(g);
  infer_shapes(g);
  return g;
}

}  // namespace kim
