#include "kim/dsl.hpp"
#include "kim/training.hpp"

namespace kim::embedded {
extern const std::string_view kLanderKim;
extern const std::string_view kRacingKim;
}  // namespace kim::embedded

namespace kim::dsl {

std::vector<std::string> fixture_names() { return {"lander_kim", "racing_kim", "mlp_template"}; }

namespace {
// The template is the small lander baseline: 8 -> 1 -> 4.
PolicyGraph mlp_template() { return build_mlp(8, {1}, 4, 0); }
}  // namespace

std::string fixture_text(std::string_view name) {
  if (name == "lander_kim") return std::string(embedded::kLanderKim);
  if (name == "racing_kim") return std::string(embedded::kRacingKim);
  if (name == "mlp_template") return serialize(mlp_template());
  throw ConfigError("unknown fixture '" + std::string(name) +
                    "' (expected lander_kim, racing_kim or mlp_template)");
}

PolicyGraph load_fixture(std::string_view name) {
  if (name == "mlp_template") return mlp_template();
  return parse(fixture_text(name));
}

}  // namespace kim::dsl
