#pragma once

#include <span>
#include <vector>

#include "revar/nets.hpp"

namespace revar {

struct McConfig {
  int k_samples = 10;
  double dropout_rate = 0.2;
  double reg_weight = 1.0;  // gamma on the variance term of the meta-loss

  void validate() const;
};

using MaskSet = std::vector<DropoutMask>;

// Labeled batch usable for either task; exactly one target vector is used
// depending on the net's head.
struct Batch {
  Matrix x;
  std::vector<double> y_real;
  std::vector<int> y_class;

  std::size_t size() const { return x.rows; }
  bool is_classification() const { return !y_class.empty(); }
};

double example_loss(const NetParams& net, const Batch& batch, std::size_t i);
std::vector<double> example_grad(const NetParams& net, const Batch& batch,
                                 std::size_t i, double scale);

// K masks at cfg.dropout_rate (the net's own rate is ignored here; K and
// p_drop live in the config).
MaskSet sample_masks(const NetParams& net, const McConfig& cfg, Rng& rng);

std::vector<std::vector<double>> mc_outputs(const NetParams& net,
                                            std::span<const double> x,
                                            const McConfig& cfg, Rng& rng);

// (1/K) sum_k ||o_k - mean(o)||^2 over output coordinates; softmax heads use
// probabilities, linear heads the raw output.
double dropout_variance_with(const NetParams& net, std::span<const double> x,
                             const MaskSet& masks);
double dropout_variance(const NetParams& net, std::span<const double> x,
                        const McConfig& cfg, Rng& rng);
// d/d(theta) of dropout_variance_with, masks held fixed.
std::vector<double> dropout_variance_grad(const NetParams& net,
                                          std::span<const double> x,
                                          const MaskSet& masks);

// Mean over the batch of loss + reg_weight * dropout variance.
double meta_loss_with(const NetParams& net, const Batch& val,
                      double reg_weight, const MaskSet& masks);
double meta_loss(const NetParams& net, const Batch& val, const McConfig& cfg,
                 Rng& rng);
std::vector<double> meta_loss_grad(const NetParams& net, const Batch& val,
                                   double reg_weight, const MaskSet& masks);

// Pooled objective: meta_loss on the labeled set plus the variance-only mean
// over unlabeled shift inputs, equal weight. Labeled set must be nonempty.
double meta_loss_pv_with(const NetParams& net, const Batch& labeled,
                         const Matrix& unlabeled, double reg_weight,
                         const MaskSet& masks);
double meta_loss_pv(const NetParams& net, const Batch& labeled,
                    const Matrix& unlabeled, const McConfig& cfg, Rng& rng);
std::vector<double> meta_loss_pv_grad(const NetParams& net,
                                      const Batch& labeled,
                                      const Matrix& unlabeled,
                                      double reg_weight, const MaskSet& masks);

// Predictive entropy of the K-averaged softmax; classifier nets only.
double mcd_score(const NetParams& net, std::span<const double> x,
                 const McConfig& cfg, Rng& rng);

}  // namespace revar
