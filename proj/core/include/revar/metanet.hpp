#pragma once

#include <span>
#include <vector>

#include "revar/nets.hpp"

namespace revar {

enum class MetaConditioning { instance, loss_scalar };

// Instance-conditional weight network: sigmoid scalar head over a plain MLP.
// conditioning == loss_scalar is the loss-conditioned baseline variant.
struct MetaNet {
  NetParams net;  // linear scalar head; sigmoid applied by weight_of
  MetaConditioning conditioning = MetaConditioning::instance;

  std::size_t input_dim() const { return net.input_dim(); }

  static MetaNet make(std::size_t input, const std::vector<int>& hidden,
                      MetaConditioning cond, Rng& rng);
};

// g(input) in (0,1). Deterministic, no dropout.
double weight_of(const MetaNet& meta, std::span<const double> input);

// Exact gradient of weight_of w.r.t. the flattened meta parameters.
std::vector<double> grad_weight(const MetaNet& meta,
                                std::span<const double> input);

double sigmoid(double z);

}  // namespace revar
