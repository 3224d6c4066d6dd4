#include <algorithm>
#include <cmath>
#include <numbers>

#include "kim/error.hpp"
#include "kim/training.hpp"

namespace kim {

Split split_dataset(std::span<const Episode> episodes, SplitMode mode, double fraction,
                    std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ContractViolation("validation fraction must lie in (0, 1)");
  }
  Rng rng(seed);
  Split out;
  if (mode == SplitMode::by_episode) {
    const auto n = episodes.size();
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (n_val == 0 || n_val >= n) {
      throw ContractViolation("by_episode split of " + std::to_string(n) +
                              " episodes leaves an empty split");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> is_val(n, false);
    for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
    for (std::size_t e = 0; e < n; ++e) {
      auto& dst = is_val[e] ? out.validation : out.train;
      for (std::size_t s = 0; s < episodes[e].transitions.size(); ++s) dst.push_back({e, s});
    }
    return out;
  }

  std::vector<TransitionRef> all;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    for (std::size_t s = 0; s < episodes[e].transitions.size(); ++s) all.push_back({e, s});
  }
  const auto n = all.size();
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) {
    throw ContractViolation("by_step split of " + std::to_string(n) +
                            " transitions leaves an empty split");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? out.validation : out.train).push_back(all[i]);
  return out;
}

Normalizer fit_normalizer(EnvId env, const RacingConfig& cfg) {
  Normalizer n;
  n.env = env;
  if (env == EnvId::lander) return n;
  n.identity = false;
  // Positions span the whole track: twice the largest control radius plus a margin.
  const double extent = 2.0 * cfg.radius_hi * cfg.track_radius + 12.0;
  n.tile_scale = {1.0 / extent, 1.0 / extent, 1.0 / extent, 1.0 / extent,
                  1.0 / std::numbers::pi, 1.0, 1.0, 1.0};
  n.tile_offset.assign(8, 0.0);
  // Indicators are already normalized by the simulator.
  n.indicator_scale.assign(7, 1.0);
  n.indicator_offset.assign(7, 0.0);
  return n;
}

Observation apply_normalizer(const Normalizer& n, const Observation& obs) {
  if (n.identity) return obs;
  Observation out = obs;
  const std::size_t tile_values = obs.tile_rows * 8;
  for (std::size_t i = 0; i < tile_values; ++i) {
    const auto c = i % 8;
    out.values[i] = std::clamp(obs.values[i] * n.tile_scale[c] + n.tile_offset[c], -1.0, 1.0);
  }
  for (std::size_t i = tile_values; i < obs.values.size(); ++i) {
    const auto c = i - tile_values;
    out.values[i] =
        std::clamp(obs.values[i] * n.indicator_scale[c] + n.indicator_offset[c], -1.0, 1.0);
  }
  return out;
}

std::vector<Value> graph_inputs(const PolicyGraph& g, EnvId env, const Observation& obs) {
  const auto& in = g.inputs;
  std::vector<Value> out;
  if (env == EnvId::lander) {
    if (obs.values.size() != 8) throw ShapeError("lander observation must have 8 values");
    if (in.size() == 8 && std::all_of(in.begin(), in.end(),
                                      [](const InputSpec& s) { return s.shape.rank == 0; })) {
      for (double v : obs.values) out.push_back(Value::scalar(v));
      return out;
    }
    if (in.size() == 1 && in[0].shape.rank == 1) {
      out.push_back(Value::vector(obs.values));
      return out;
    }
    throw ShapeError("graph '" + g.name + "' inputs do not match the lander observation");
  }

  const auto tiles = obs.tiles();
  const auto ind = obs.indicators();
  if (in.size() == 2 && in[0].shape.rank == 2 && in[1].shape.rank == 1) {
    out.push_back(Value::matrix(obs.tile_rows, 8, std::vector<double>(tiles.begin(), tiles.end())));
    out.push_back(Value::vector(std::vector<double>(ind.begin(), ind.end())));
    return out;
  }
  if (in.size() == 1 && in[0].shape.rank == 1 && !in[0].shape.dims[0].runtime) {
    const auto len = in[0].shape.dims[0].size;
    if (len < ind.size() || (len - ind.size()) % 8 != 0) {
      throw ShapeError("flat racing input length " + std::to_string(len) + " is not 7 + 8k");
    }
    const auto k = (len - ind.size()) / 8;
    if (k > obs.tile_rows) {
      throw ShapeError("track has " + std::to_string(obs.tile_rows) + " tiles, model reads " +
                       std::to_string(k));
    }
    std::vector<double> flat(ind.begin(), ind.end());
    flat.insert(flat.end(), tiles.begin(), tiles.begin() + static_cast<std::ptrdiff_t>(k * 8));
    out.push_back(Value::vector(std::move(flat)));
    return out;
  }
  throw ShapeError("graph '" + g.name + "' inputs do not match the racing observation");
}

std::vector<Sample> make_samples(const PolicyGraph& g, EnvId env, std::span<const Episode> episodes,
                                 std::span<const TransitionRef> refs, const Normalizer& norm) {
  std::vector<Sample> out;
  out.reserve(refs.size());
  for (const auto& r : refs) {
    const Transition& t = episodes[r.episode].transitions[r.step];
    Sample s;
    s.inputs = graph_inputs(g, env, apply_normalizer(norm, t.obs));
    if (env == EnvId::lander) {
      s.target.label = static_cast<int>(t.action.at(0));
    } else {
      s.target.values = t.action;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace kim
