#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "revar/numkit.hpp"

namespace revar {

enum class Scenario { S1, S2, S3, S4, S5 };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& name);

struct Dims {
  std::size_t core = 48;
  std::size_t latent = 24;
  std::size_t total() const { return core + latent; }
};

// All symbols of the generative model for one synthetic world.
struct GeneratorParams {
  Dims dims;
  std::vector<double> w_core;            // W_c
  std::vector<double> w_latent;          // W_e
  std::vector<double> g_noise;           // G, length dims.total()
  double c = 0.0;                        // constant noise scale
  double s = 0.0;                        // shift magnitude
  std::vector<double> mu;                // train mean
  std::vector<double> sigma_diag;        // diag std of Sigma, > 0
  std::vector<double> shift_mu;          // mu_s
  std::vector<double> shift_sigma_diag;  // diag std of Sigma_s, > 0
};

struct ScenarioSpec {
  Scenario id = Scenario::S1;
  double c = 0.0;
  double s = 0.0;
  bool g_active = true;
  bool observe_latent = true;   // false for S3/S4
  bool latent_shift_only = false;  // S5
  bool w_latent_zero = false;      // S5

  // Canonical parameter pattern for each scenario; s_override replaces the
  // default shift magnitude (S2: 25, S4: 50, S5: 25).
  static ScenarioSpec standard(Scenario id, double s_override = -1.0);
};

struct LabeledSet {
  Matrix x_full;
  Matrix x_observed;
  std::vector<double> y;
  std::vector<double> noise_std;  // |c + G^T x|
  std::vector<double> hardness;   // ||x - mu||^2

  std::size_t size() const { return x_full.rows; }
};

struct SyntheticBundle {
  LabeledSet train;
  LabeledSet val;
  LabeledSet test;
  GeneratorParams params;
  ScenarioSpec spec;
};

// Fresh world parameters: W ~ N(5,10), G ~ N(12,18), mu ~ N(1,10),
// sigma_diag = |N(5,10)| floored at 0.1, shift direction ~ N(0, I).
GeneratorParams sample_generator_params(Rng& rng, Dims dims);

// sample_generator_params followed by the scenario's zeroing/flag pattern.
GeneratorParams make_world(const ScenarioSpec& spec, Dims dims, Rng& rng);

SyntheticBundle generate_scenario(const ScenarioSpec& spec,
                                  const GeneratorParams& params,
                                  std::size_t n_train, std::size_t n_val,
                                  std::size_t n_test, Rng& rng);

// Per-instance regression features for the scenario's ideal-weight fit.
Matrix target_weight_features(const ScenarioSpec& spec,
                              const GeneratorParams& params,
                              const Matrix& x_batch);

// Denominator floor for the 1/|G^T x|^2 feature.
inline constexpr double kNoiseFeatureFloor = 1e-6;

double dot_g(const GeneratorParams& params, std::span<const double> x);
// W_e^T Sigma_ee W_e for a diagonal Sigma; constant within one world.
double latent_noise_power(const GeneratorParams& params);

}  // namespace revar
