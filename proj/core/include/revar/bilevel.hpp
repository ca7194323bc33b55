#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "revar/mcvar.hpp"
#include "revar/metanet.hpp"
#include "revar/synthgen.hpp"

namespace revar {

enum class Method { revar, revar_pv, ibr, mwn, erm, vr, mbr };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct TrainConfig {
  double lr_classifier = 0.05;
  double lr_meta = 2e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double meta_weight_decay = 1e-4;
  int epochs = 60;
  int warm_start_epochs = 5;
  int meta_interval = 15;
  int batch_train = 128;
  int batch_val = 128;
  McConfig mc;
  std::uint64_t seed = 0;
  Method method = Method::revar;
  std::vector<int> classifier_hidden{32};
  std::vector<int> meta_hidden{32, 32};
  double mbr_temperature = 1.0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double meta_loss = 0.0;
  double weight_mean = 0.0;
  double weight_sd = 0.0;
};

struct TrainedPair {
  NetParams classifier;
  MetaNet meta;
  std::vector<EpochRecord> history;
};

struct DataSplits {
  Batch train;
  Batch val;
  Matrix unlabeled;  // optional shift-domain inputs (revar_pv)
};

// Splits with observed features as inputs; regression targets.
DataSplits splits_from_bundle(const SyntheticBundle& bundle);

// One plain weighted SGD step on a copy of theta (no momentum, no weight
// decay): theta_hat = theta - (lr/n) sum_i w_i grad l_i.
NetParams inner_step(const NetParams& theta, const Batch& batch,
                     const MetaNet& meta, double lr);

// Explicit one-step-unrolled hypergradient of the meta objective w.r.t. the
// meta parameters, dropout masks held fixed:
//   -(lr/n) sum_i <grad meta_loss(theta_hat), grad l_i(theta)> grad w_i.
std::vector<double> meta_gradient(const NetParams& theta,
                                  const Batch& batch_train,
                                  const Batch& batch_val, const MetaNet& meta,
                                  double lr_inner, double reg_weight,
                                  const MaskSet& masks,
                                  const Matrix* unlabeled = nullptr);

// Central-difference oracle for the same objective.
std::vector<double> meta_gradient_fd(const NetParams& theta,
                                     const Batch& batch_train,
                                     const Batch& batch_val,
                                     const MetaNet& meta, double lr_inner,
                                     double reg_weight, const MaskSet& masks,
                                     double step,
                                     const Matrix* unlabeled = nullptr);

// Full training loop (warm start + alternating updates); handles every
// Method tag, baselines included. init, when given, replaces the fresh
// parameter initialization (checkpoint resume).
TrainedPair train(const DataSplits& data, const TrainConfig& cfg,
                  const TrainedPair* init = nullptr);
TrainedPair train(const SyntheticBundle& bundle, const TrainConfig& cfg);

// Same loop restricted to the baseline method tags.
TrainedPair train_baseline(const DataSplits& data, const TrainConfig& cfg);

// Meta-net input for one training example under the given conditioning.
std::vector<double> meta_input(const MetaNet& meta, const NetParams& theta,
                               const Batch& batch, std::size_t i);

// Per-feature/target affine normalization computed on the training split.
struct Standardizer {
  std::vector<double> x_mean, x_std;
  double y_mean = 0.0, y_std = 1.0;

  static Standardizer fit(const Batch& train);
  void apply(Batch& batch) const;
  void apply_inputs(Matrix& x) const;
};

}  // namespace revar
