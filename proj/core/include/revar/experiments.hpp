#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "revar/seleval.hpp"

namespace revar {

// Meta-net weights over the bundle's training rows, with the same input
// standardization the trainer used.
std::vector<double> train_set_weights(const SyntheticBundle& bundle,
                                      const TrainedPair& pair);

// Deterministic world + bundle for (scenario, seed).
SyntheticBundle make_scenario_bundle(Scenario scenario, std::uint64_t seed,
                                     std::size_t n_train, std::size_t n_val,
                                     std::size_t n_test,
                                     double s_override = -1.0,
                                     std::uint64_t world_index = 0);

struct Table1Config {
  std::vector<std::uint64_t> seeds;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  // Worlds per seed for the S3/S4 cross-world fit; these use smaller sets.
  int n_worlds = 8;
  std::size_t n_train_world = 1000;
  std::size_t n_val_world = 400;
  // Optional shorter schedule for the per-world runs (0 = same as base);
  // the cross-world fit only needs each world's mean weight, which settles
  // well before the per-example structure does.
  int epochs_world = 0;
  TrainConfig base;
};

struct Table1Row {
  Scenario scenario = Scenario::S1;
  std::uint64_t seed = 0;
  double r2_mwn = 0.0;
  double r2_ibr = 0.0;
  double r2_revar = 0.0;
  double spearman_revar = 0.0;
  double cv_revar = 0.0;  // weight coefficient of variation (S5 uniformity)
  bool ordering_ok = false;  // revar > ibr > mwn
};

// Full Table-1 analog: MWN/IBR/ReVar across Scenarios 1-5 per seed.
// Fans out across REVAR_THREADS workers; results merged in fixed order.
std::vector<Table1Row> run_table1(const Table1Config& cfg);

// Reference R^2 per scenario row reported for MWN / IBR / ReVar.
struct Table1Reference { double mwn, ibr, revar; };
Table1Reference table1_reference(Scenario s);

// 3-class task with instance-dependent label flips: flip probability
// proportional to |G^T x|, clipped to [0, max_flip]. Test labels are clean.
struct FlipTaskConfig {
  std::uint64_t seed = 0;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 1000;
  int n_classes = 3;
  double max_flip = 0.4;
  double mean_flip = 0.2;  // proportionality constant targets this mean
};

struct FlipTask {
  DataSplits splits;       // standardized inputs, noisy train/val labels
  Batch test;              // standardized inputs, clean labels
  std::vector<double> flip_prob_train;
};

FlipTask make_flip_task(const FlipTaskConfig& cfg);

struct SelectiveComparison {
  double auarc_g = 0.0;    // ReVar meta-net score, uncertainty = 1 - g(x)
  double auarc_sr = 0.0;   // softmax response on the ERM classifier
  double auarc_mcd = 0.0;  // MC-dropout predictive entropy on ERM
  double accuracy_erm = 0.0;
};

SelectiveComparison run_selective_comparison(const FlipTaskConfig& task_cfg,
                                             const TrainConfig& base);

// Index-parallel map; worker count capped by REVAR_THREADS (default: hardware
// concurrency). Each job must be independent and internally deterministic.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace revar
