#include "revar/synthgen.hpp"

#include <cmath>

namespace revar {

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::S1: return "S1";
    case Scenario::S2: return "S2";
    case Scenario::S3: return "S3";
    case Scenario::S4: return "S4";
    case Scenario::S5: return "S5";
  }
  return "?";
}

Scenario scenario_from_string(const std::string& name) {
  if (name == "S1") return Scenario::S1;
  if (name == "S2") return Scenario::S2;
  if (name == "S3") return Scenario::S3;
  if (name == "S4") return Scenario::S4;
  if (name == "S5") return Scenario::S5;
  throw ParamError("unknown scenario: " + name);
}

ScenarioSpec ScenarioSpec::standard(Scenario id, double s_override) {
  ScenarioSpec sp;
  sp.id = id;
  switch (id) {
    case Scenario::S1:
      sp.c = 0.0; sp.s = 0.0; sp.g_active = true;
      break;
    case Scenario::S2:
      sp.c = 0.0; sp.s = 25.0; sp.g_active = true;
      break;
    case Scenario::S3:
      sp.c = 1.0; sp.s = 0.0; sp.g_active = false; sp.observe_latent = false;
      break;
    case Scenario::S4:
      sp.c = 1.0; sp.s = 50.0; sp.g_active = false; sp.observe_latent = false;
      break;
    case Scenario::S5:
      sp.c = 1.0; sp.s = 25.0; sp.g_active = false;
      sp.latent_shift_only = true; sp.w_latent_zero = true;
      break;
  }
  if (s_override >= 0.0) sp.s = s_override;
  return sp;
}

GeneratorParams sample_generator_params(Rng& rng, Dims dims) {
  if (dims.core == 0 || dims.latent == 0)
    throw ParamError("sample_generator_params: dims must be positive");
  GeneratorParams p;
  p.dims = dims;
  const std::size_t d = dims.total();
  // Second moments below are variances (N(mean, var) convention).
  const double sd_w = std::sqrt(10.0), sd_g = std::sqrt(18.0),
               sd_mu = std::sqrt(10.0), sd_sigma = std::sqrt(10.0);
  p.w_core = gaussian_sample(rng, 5.0, sd_w, dims.core);
  p.w_latent = gaussian_sample(rng, 5.0, sd_w, dims.latent);
  p.g_noise = gaussian_sample(rng, 12.0, sd_g, d);
  p.mu = gaussian_sample(rng, 1.0, sd_mu, d);
  // Sigma's diagonal holds variances; rectify and floor before taking roots.
  p.sigma_diag = gaussian_sample(rng, 5.0, sd_sigma, d);
  for (auto& v : p.sigma_diag) v = std::sqrt(std::max(std::abs(v), 0.1));
  p.shift_mu.assign(d, 0.0);
  p.shift_sigma_diag.assign(d, 1.0);
  return p;
}

GeneratorParams make_world(const ScenarioSpec& spec, Dims dims, Rng& rng) {
  GeneratorParams p = sample_generator_params(rng, dims);
  p.c = spec.c;
  p.s = spec.s;
  if (!spec.g_active) p.g_noise.assign(dims.total(), 0.0);
  if (spec.w_latent_zero) p.w_latent.assign(dims.latent, 0.0);
  return p;
}

double dot_g(const GeneratorParams& params, std::span<const double> x) {
  double acc = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) acc += params.g_noise[j] * x[j];
  return acc;
}

double latent_noise_power(const GeneratorParams& params) {
  double acc = 0.0;
  for (std::size_t j = 0; j < params.dims.latent; ++j) {
    const double sd = params.sigma_diag[params.dims.core + j];
    acc += params.w_latent[j] * params.w_latent[j] * sd * sd;
  }
  return acc;
}

namespace {

void validate(const ScenarioSpec& spec, const GeneratorParams& params) {
  if (params.w_core.size() != params.dims.core ||
      params.w_latent.size() != params.dims.latent ||
      params.g_noise.size() != params.dims.total() ||
      params.mu.size() != params.dims.total() ||
      params.sigma_diag.size() != params.dims.total())
    throw ParamError("generate_scenario: params dimension mismatch");
  for (double v : params.sigma_diag)
    if (v <= 0.0) throw ParamError("generate_scenario: sigma_diag must be > 0");
  if (params.c != spec.c || params.s != spec.s)
    throw ParamError("generate_scenario: spec/params (c,s) mismatch");
  if (!spec.g_active)
    for (double v : params.g_noise)
      if (v != 0.0)
        throw ParamError("generate_scenario: spec disables G but params.g_noise != 0");
  if (spec.w_latent_zero)
    for (double v : params.w_latent)
      if (v != 0.0)
        throw ParamError("generate_scenario: spec forces W_e = 0 but params.w_latent != 0");
}

LabeledSet draw_set(const ScenarioSpec& spec, const GeneratorParams& params,
                    const std::vector<double>& mean, std::size_t n, Rng& rng) {
  const std::size_t d = params.dims.total();
  const std::size_t d_obs = spec.observe_latent ? d : params.dims.core;
  LabeledSet set;
  set.x_full = Matrix(n, d);
  set.x_observed = Matrix(n, d_obs);
  set.y.resize(n);
  set.noise_std.resize(n);
  set.hardness.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double signal = 0.0, gdot = 0.0, hard = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double x = mean[j] + params.sigma_diag[j] * rng.normal();
      set.x_full.at(i, j) = x;
      const double w = j < params.dims.core
                           ? params.w_core[j]
                           : params.w_latent[j - params.dims.core];
      signal += w * x;
      gdot += params.g_noise[j] * x;
      // hardness is against the train mean parameter, not the set's mean
      const double dmu = x - params.mu[j];
      hard += dmu * dmu;
    }
    const double eps = rng.normal();
    const double scale = params.c + gdot;
    set.y[i] = signal + eps * scale;
    set.noise_std[i] = std::abs(scale);
    set.hardness[i] = hard;
    for (std::size_t j = 0; j < d_obs; ++j)
      set.x_observed.at(i, j) = set.x_full.at(i, j);
  }
  return set;
}

}  // namespace

SyntheticBundle generate_scenario(const ScenarioSpec& spec,
                                  const GeneratorParams& params,
                                  std::size_t n_train, std::size_t n_val,
                                  std::size_t n_test, Rng& rng) {
  if (n_train == 0 || n_val == 0 || n_test == 0)
    throw ParamError("generate_scenario: split sizes must be >= 1");
  validate(spec, params);
  const std::size_t d = params.dims.total();

  // One shared mu' draw for val and test.
  std::vector<double> shifted_mean = params.mu;
  if (params.s != 0.0) {
    for (std::size_t j = 0; j < d; ++j) {
      double dir = params.shift_mu[j] + params.shift_sigma_diag[j] * rng.normal();
      if (spec.latent_shift_only && j < params.dims.core) dir = 0.0;
      shifted_mean[j] += params.s * dir;
    }
  }

  SyntheticBundle b;
  b.spec = spec;
  b.params = params;
  b.train = draw_set(spec, params, params.mu, n_train, rng);
  b.val = draw_set(spec, params, shifted_mean, n_val, rng);
  b.test = draw_set(spec, params, shifted_mean, n_test, rng);
  return b;
}

Matrix target_weight_features(const ScenarioSpec& spec,
                              const GeneratorParams& params,
                              const Matrix& x_batch) {
  const std::size_t n = x_batch.rows;
  auto noise_feature = [&](std::size_t i) {
    const double g = dot_g(params, x_batch.row(i));
    return 1.0 / std::max(g * g, kNoiseFeatureFloor);
  };
  auto hardness_of = [&](std::size_t i) {
    double h = 0.0;
    for (std::size_t j = 0; j < x_batch.cols; ++j) {
      const double dmu = x_batch.at(i, j) - params.mu[j];
      h += dmu * dmu;
    }
    return h;
  };
  switch (spec.id) {
    case Scenario::S1: {
      Matrix f(n, 1);
      for (std::size_t i = 0; i < n; ++i) f.at(i, 0) = noise_feature(i);
      return f;
    }
    case Scenario::S2: {
      Matrix f(n, 2);
      for (std::size_t i = 0; i < n; ++i) {
        f.at(i, 0) = noise_feature(i);
        f.at(i, 1) = hardness_of(i);
      }
      return f;
    }
    case Scenario::S3: {
      Matrix f(n, 1);
      const double v = 1.0 / std::max(latent_noise_power(params),
                                      kNoiseFeatureFloor);
      for (std::size_t i = 0; i < n; ++i) f.at(i, 0) = v;
      return f;
    }
    case Scenario::S4: {
      Matrix f(n, 2);
      const double v = 1.0 / std::max(latent_noise_power(params),
                                      kNoiseFeatureFloor);
      for (std::size_t i = 0; i < n; ++i) {
        f.at(i, 0) = v;
        f.at(i, 1) = hardness_of(i);
      }
      return f;
    }
    case Scenario::S5: {
      Matrix f(n, 1);
      for (std::size_t i = 0; i < n; ++i) f.at(i, 0) = 1.0;
      return f;
    }
  }
  throw ParamError("target_weight_features: bad scenario");
}

}  // namespace revar
