#include "revar/seleval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace revar {

std::vector<double> default_coverage_grid() {
  std::vector<double> grid(20);
  for (int i = 0; i < 20; ++i) grid[i] = 0.05 * (i + 1);
  grid.back() = 1.0;
  return grid;
}

RejectionCurve rejection_curve(std::span<const double> uncertainty,
                               const std::vector<std::uint8_t>& correct,
                               std::span<const double> grid,
                               std::string score_kind) {
  const std::size_t n = uncertainty.size();
  if (n == 0 || correct.size() != n)
    throw ParamError("rejection_curve: empty or mismatched inputs");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return uncertainty[a] < uncertainty[b];
  });
  RejectionCurve curve;
  curve.score_kind = std::move(score_kind);
  for (double c : grid) {
    if (c <= 0.0 || c > 1.0)
      throw ParamError("rejection_curve: coverage outside (0,1]");
    const std::size_t keep = static_cast<std::size_t>(
        std::ceil(c * static_cast<double>(n) - 1e-12));
    double acc = 0.0;
    for (std::size_t k = 0; k < keep; ++k) acc += correct[order[k]] ? 1.0 : 0.0;
    curve.coverages.push_back(c);
    curve.accuracies.push_back(acc / static_cast<double>(keep));
  }
  return curve;
}

double auarc(const RejectionCurve& curve) {
  if (curve.accuracies.empty()) throw ParamError("auarc: empty curve");
  return mean_of(curve.accuracies);
}

double ece(std::span<const double> confidences,
           const std::vector<std::uint8_t>& correct, int n_bins) {
  const std::size_t n = confidences.size();
  if (n == 0 || correct.size() != n || n_bins < 1)
    throw ParamError("ece: bad inputs");
  std::vector<double> conf_sum(n_bins, 0.0), acc_sum(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = confidences[i];
    if (c < 0.0 || c > 1.0) throw ParamError("ece: confidence outside [0,1]");
    int b = static_cast<int>(c * n_bins);
    if (b == n_bins) b = n_bins - 1;  // confidence exactly 1.0
    conf_sum[b] += c;
    acc_sum[b] += correct[i] ? 1.0 : 0.0;
    ++count[b];
  }
  double total = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    total += nb / static_cast<double>(n) *
             std::abs(acc_sum[b] / nb - conf_sum[b] / nb);
  }
  return total;
}

double selective_ece(std::span<const double> uncertainty,
                     std::span<const double> confidences,
                     const std::vector<std::uint8_t>& correct, double coverage,
                     int n_bins) {
  const std::size_t n = uncertainty.size();
  if (coverage <= 0.0 || coverage > 1.0)
    throw ParamError("selective_ece: coverage outside (0,1]");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return uncertainty[a] < uncertainty[b];
  });
  const std::size_t keep = static_cast<std::size_t>(
      std::ceil(coverage * static_cast<double>(n) - 1e-12));
  std::vector<double> kept_conf(keep);
  std::vector<std::uint8_t> kept_correct(keep);
  for (std::size_t k = 0; k < keep; ++k) {
    kept_conf[k] = confidences[order[k]];
    kept_correct[k] = correct[order[k]];
  }
  return ece(kept_conf, kept_correct, n_bins);
}

ScenarioFit scenario_fit(const SyntheticBundle& bundle,
                         std::span<const double> weights) {
  if (bundle.spec.id == Scenario::S3 || bundle.spec.id == Scenario::S4)
    throw ParamError("scenario_fit: S3/S4 need the multi-world fit");
  if (weights.size() != bundle.train.size())
    throw ParamError("scenario_fit: weight/train size mismatch");
  const Matrix feats =
      target_weight_features(bundle.spec, bundle.params, bundle.train.x_full);
  ScenarioFit out;
  if (bundle.spec.id == Scenario::S5) {
    // The all-ones target collapses into the intercept; nothing to regress.
    out.r2 = 0.0;
    out.coefficients = {0.0};
    out.intercept = mean_of(weights);
    out.spearman = 0.0;
    return out;
  }
  // Near-constant weights carry no signal; the OLS residual arithmetic on
  // them is catastrophic cancellation, so report a plain zero fit instead.
  if (stddev_of(weights) <= 1e-9 * (1.0 + std::abs(mean_of(weights)))) {
    out.r2 = 0.0;
    out.coefficients.assign(feats.cols, 0.0);
    out.intercept = mean_of(weights);
    out.spearman = 0.0;
    return out;
  }
  const OlsFit fit = ols_fit(feats, weights);
  out.r2 = fit.r_squared;
  out.coefficients = fit.coefficients;
  out.intercept = fit.intercept;
  std::vector<double> lead(feats.rows);
  for (std::size_t i = 0; i < feats.rows; ++i) lead[i] = feats.at(i, 0);
  out.spearman = spearman(weights, lead);
  return out;
}

WorldSummary summarize_world(const SyntheticBundle& bundle,
                             std::span<const double> weights) {
  if (weights.size() != bundle.train.size())
    throw ParamError("summarize_world: weight/train size mismatch");
  const Matrix feats =
      target_weight_features(bundle.spec, bundle.params, bundle.train.x_full);
  WorldSummary w;
  w.mean_weight = mean_of(weights);
  w.mean_features.assign(feats.cols, 0.0);
  for (std::size_t i = 0; i < feats.rows; ++i)
    for (std::size_t j = 0; j < feats.cols; ++j)
      w.mean_features[j] += feats.at(i, j);
  for (auto& v : w.mean_features) v /= static_cast<double>(feats.rows);
  return w;
}

ScenarioFit scenario_fit_multiworld(const std::vector<WorldSummary>& worlds) {
  if (worlds.size() < 3)
    throw ParamError("scenario_fit_multiworld: need at least 3 worlds");
  const std::size_t p = worlds.front().mean_features.size();
  Matrix feats(worlds.size(), p);
  std::vector<double> targets(worlds.size());
  for (std::size_t i = 0; i < worlds.size(); ++i) {
    targets[i] = worlds[i].mean_weight;
    for (std::size_t j = 0; j < p; ++j)
      feats.at(i, j) = worlds[i].mean_features[j];
  }
  const OlsFit fit = ols_fit(feats, targets);
  ScenarioFit out;
  out.r2 = fit.r_squared;
  out.coefficients = fit.coefficients;
  out.intercept = fit.intercept;
  std::vector<double> lead(worlds.size());
  for (std::size_t i = 0; i < worlds.size(); ++i)
    lead[i] = worlds[i].mean_features[0];
  out.spearman = spearman(targets, lead);
  return out;
}

std::vector<double> train_set_weights(const SyntheticBundle& bundle,
                                      const TrainedPair& pair);

std::vector<SweepPoint> shift_sweep(Scenario scenario,
                                    std::span<const double> s_values,
                                    const TrainConfig& cfg,
                                    std::size_t n_train, std::size_t n_val,
                                    std::size_t n_test) {
  if (scenario != Scenario::S2 && scenario != Scenario::S4)
    throw ParamError("shift_sweep: only S2 and S4 sweep over shift");
  std::vector<SweepPoint> points;
  for (double s : s_values) {
    const ScenarioSpec spec = ScenarioSpec::standard(scenario, s);
    // Stream keyed by the shift value so repeated s values reproduce.
    Rng rng(cfg.seed, 0x5345454Bu ^ std::bit_cast<std::uint64_t>(s));
    const GeneratorParams params = make_world(spec, Dims{}, rng);
    const SyntheticBundle bundle =
        generate_scenario(spec, params, n_train, n_val, n_test, rng);
    const TrainedPair pair = train(bundle, cfg);
    const std::vector<double> weights = train_set_weights(bundle, pair);

    const Matrix feats =
        target_weight_features(spec, params, bundle.train.x_full);
    std::vector<double> t_col(feats.rows), h_col(feats.rows);
    for (std::size_t i = 0; i < feats.rows; ++i) {
      t_col[i] = feats.at(i, 0);
      h_col[i] = feats.at(i, 1);
    }
    const bool t_constant =
        std::all_of(t_col.begin(), t_col.end(),
                    [&](double v) { return v == t_col.front(); });
    SweepPoint pt;
    pt.s = s;
    if (t_constant) {
      // Within one world the noise feature is a single value (latent noise),
      // collinear with the intercept; fit hardness alone and read the noise
      // coefficient off the intercept.
      Matrix h_only(feats.rows, 1);
      for (std::size_t i = 0; i < feats.rows; ++i) h_only.at(i, 0) = h_col[i];
      const OlsFit fit = ols_fit(h_only, weights);
      pt.lambda1 = fit.intercept / t_col.front();
      pt.lambda2 = fit.coefficients[0];
    } else {
      const OlsFit fit = ols_fit(feats, weights);
      pt.lambda1 = fit.coefficients[0];
      pt.lambda2 = fit.coefficients[1];
    }
    const double noise_part = pt.lambda1 * mean_of(t_col);
    const double hard_part = pt.lambda2 * mean_of(h_col);
    const double denom = noise_part + hard_part;
    pt.hardness_share = denom == 0.0 ? 0.0 : hard_part / denom;
    points.push_back(pt);
  }
  return points;
}

}  // namespace revar
