#include "revar/metanet.hpp"

#include <cmath>

namespace revar {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

MetaNet MetaNet::make(std::size_t input, const std::vector<int>& hidden,
                      MetaConditioning cond, Rng& rng) {
  MetaNet m;
  m.net = NetParams::make_mlp(input, hidden, 1, OutputKind::linear, 0.0, rng);
  // Zero the scalar head so g starts uniform at 0.5: a randomly initialised
  // head bakes per-instance scatter into the weights that decays far slower
  // than the learned signal accumulates.
  auto& head = m.net.weights.back();
  for (std::size_t i = 0; i < head.rows; ++i)
    for (std::size_t j = 0; j < head.cols; ++j) head.at(i, j) = 0.0;
  for (auto& b : m.net.biases.back()) b = 0.0;
  m.conditioning = cond;
  return m;
}

double weight_of(const MetaNet& meta, std::span<const double> input) {
  return sigmoid(forward(meta.net, input)[0]);
}

std::vector<double> grad_weight(const MetaNet& meta,
                                std::span<const double> input) {
  Trace t = forward_trace(meta.net, input);
  const double s = sigmoid(t.output[0]);
  const std::vector<double> cot{s * (1.0 - s)};
  return backward(meta.net, t, cot);
}

}  // namespace revar
