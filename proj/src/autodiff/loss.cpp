#include <algorithm>
#include <cmath>
#include <string>

#include "kim/autodiff.hpp"

namespace kim {

std::vector<double> balanced_class_weights(std::span<const SampleTarget> targets,
                                           std::size_t n_classes) {
  std::vector<std::size_t> counts(n_classes, 0);
  for (const auto& t : targets) {
    if (t.label < 0 || static_cast<std::size_t>(t.label) >= n_classes) {
      throw ContractViolation("label " + std::to_string(t.label) + " outside [0, " +
                              std::to_string(n_classes) + ")");
    }
    ++counts[static_cast<std::size_t>(t.label)];
  }
  std::vector<double> w(n_classes);
  const double n = static_cast<double>(targets.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (counts[c] == 0) {
      throw ContractViolation("class " + std::to_string(c) + " has no samples; balanced weight undefined");
    }
    w[c] = n / (static_cast<double>(n_classes) * static_cast<double>(counts[c]));
  }
  return w;
}

double sample_loss(LossKind kind, std::span<const double> pred, const SampleTarget& target,
                   std::span<const double> class_weights, std::span<double> grad) {
  if (kind == LossKind::mse) {
    if (target.values.size() != pred.size()) {
      throw ShapeError("mse target has " + std::to_string(target.values.size()) +
                       " values, prediction has " + std::to_string(pred.size()));
    }
    const double inv = 1.0 / static_cast<double>(pred.size());
    double loss = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
      const double d = pred[k] - target.values[k];
      loss += d * d;
      grad[k] = 2.0 * d * inv;
    }
    return loss * inv;
  }
  const auto c = static_cast<std::size_t>(target.label);
  if (target.label < 0 || c >= pred.size()) {
    throw ContractViolation("label " + std::to_string(target.label) + " outside the logits");
  }
  const double w = class_weights.empty() ? 1.0 : class_weights[c];
  const double m = *std::max_element(pred.begin(), pred.end());
  double z = 0.0;
  for (double p : pred) z += std::exp(p - m);
  const double lse = m + std::log(z);
  for (std::size_t k = 0; k < pred.size(); ++k) {
    grad[k] = w * (std::exp(pred[k] - lse) - (k == c ? 1.0 : 0.0));
  }
  return w * (lse - pred[c]);
}

LossResult compute_loss(LossKind kind, std::span<const std::vector<double>> predictions,
                        std::span<const SampleTarget> targets,
                        std::span<const double> class_weights) {
  if (predictions.size() != targets.size()) {
    throw ShapeError("predictions and targets differ in length");
  }
  if (predictions.empty()) throw ContractViolation("empty batch");
  std::vector<double> derived;
  if (kind == LossKind::cross_entropy_balanced && class_weights.empty()) {
    derived = balanced_class_weights(targets, predictions.front().size());
    class_weights = derived;
  }
  LossResult r;
  r.grad.resize(predictions.size());
  const double inv = 1.0 / static_cast<double>(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    r.grad[i].assign(predictions[i].size(), 0.0);
    r.loss += sample_loss(kind, predictions[i], targets[i], class_weights, r.grad[i]);
    for (double& g : r.grad[i]) g *= inv;
  }
  r.loss *= inv;
  return r;
}

}  // namespace kim
