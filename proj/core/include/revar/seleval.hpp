#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "revar/bilevel.hpp"
#include "revar/synthgen.hpp"

namespace revar {

struct RejectionCurve {
  std::vector<double> coverages;   // ascending, in (0,1]
  std::vector<double> accuracies;  // in [0,1]
  std::string score_kind;
};

// Default 20-point coverage grid {0.05, 0.10, ..., 1.00}.
std::vector<double> default_coverage_grid();

// At coverage c keep the ceil(c*N) lowest-uncertainty items, ties broken by
// ascending original index; accuracy is mean correctness among kept.
RejectionCurve rejection_curve(std::span<const double> uncertainty,
                               const std::vector<std::uint8_t>& correct,
                               std::span<const double> grid,
                               std::string score_kind = "");

// Mean of accuracies over the curve's grid.
double auarc(const RejectionCurve& curve);

// Equal-width-bin expected calibration error; empty bins contribute 0.
double ece(std::span<const double> confidences,
           const std::vector<std::uint8_t>& correct, int n_bins = 15);

// ECE over the kept subset at a coverage level.
double selective_ece(std::span<const double> uncertainty,
                     std::span<const double> confidences,
                     const std::vector<std::uint8_t>& correct, double coverage,
                     int n_bins = 15);

struct ScenarioFit {
  double r2 = 0.0;
  std::vector<double> coefficients;
  double intercept = 0.0;
  double spearman = 0.0;  // weights vs. leading feature
};

// Within-world fit of weights on the scenario's target features (S1/S2/S5).
ScenarioFit scenario_fit(const SyntheticBundle& bundle,
                         std::span<const double> weights);

// Cross-world fit of per-world mean weight on per-world mean features
// (S3/S4, where the target is constant inside one world).
struct WorldSummary {
  double mean_weight = 0.0;
  std::vector<double> mean_features;
};
WorldSummary summarize_world(const SyntheticBundle& bundle,
                             std::span<const double> weights);
ScenarioFit scenario_fit_multiworld(const std::vector<WorldSummary>& worlds);

struct SweepPoint {
  double s = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double hardness_share = 0.0;
};

// Trains the configured method for each shift magnitude and fits the
// two-term target; share = l2*mean(h) / (l1*mean(t) + l2*mean(h)).
std::vector<SweepPoint> shift_sweep(Scenario scenario,
                                    std::span<const double> s_values,
                                    const TrainConfig& cfg,
                                    std::size_t n_train, std::size_t n_val,
                                    std::size_t n_test);

struct MetricsReport {
  double auarc = 0.0;
  double ece = 0.0;
  std::map<double, double> selective_ece;
  std::map<std::string, double> r2_by_scenario;
  std::map<std::string, double> spearman_by_scenario;
  std::uint64_t seed = 0;
  std::string config_digest;
};

}  // namespace revar
