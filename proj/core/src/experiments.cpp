#include "revar/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace revar {

std::vector<double> train_set_weights(const SyntheticBundle& bundle,
                                      const TrainedPair& pair) {
  DataSplits d = splits_from_bundle(bundle);
  const Standardizer s = Standardizer::fit(d.train);
  s.apply(d.train);
  std::vector<double> w(d.train.size());
  for (std::size_t i = 0; i < d.train.size(); ++i)
    w[i] = weight_of(pair.meta,
                     meta_input(pair.meta, pair.classifier, d.train, i));
  return w;
}

SyntheticBundle make_scenario_bundle(Scenario scenario, std::uint64_t seed,
                                     std::size_t n_train, std::size_t n_val,
                                     std::size_t n_test, double s_override,
                                     std::uint64_t world_index) {
  const ScenarioSpec spec = ScenarioSpec::standard(scenario, s_override);
  const std::uint64_t stream =
      0x574F524C44ULL + static_cast<std::uint64_t>(scenario) * 1000 +
      world_index;
  Rng rng(seed, stream);
  const GeneratorParams params = make_world(spec, Dims{}, rng);
  return generate_scenario(spec, params, n_train, n_val, n_test, rng);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  std::size_t workers = std::thread::hardware_concurrency();
  if (const char* env = std::getenv("REVAR_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) workers = static_cast<std::size_t>(v);
  }
  workers = std::min(std::max<std::size_t>(workers, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failed.load()) std::rethrow_exception(error);
}

Table1Reference table1_reference(Scenario s) {
  switch (s) {
    case Scenario::S1: return {0.77, 0.78, 0.84};
    case Scenario::S2: return {0.58, 0.62, 0.80};
    case Scenario::S3: return {0.46, 0.52, 0.81};
    case Scenario::S4: return {0.51, 0.57, 0.82};
    case Scenario::S5: return {0.44, 0.58, 0.84};
  }
  return {0, 0, 0};
}

namespace {

constexpr Scenario kAllScenarios[] = {Scenario::S1, Scenario::S2, Scenario::S3,
                                      Scenario::S4, Scenario::S5};
constexpr Method kTable1Methods[] = {Method::mwn, Method::ibr, Method::revar};

struct MethodOutcome {
  double r2 = 0.0;
  double spearman = 0.0;
  double cv = 0.0;
};

MethodOutcome evaluate_single_world(const Table1Config& cfg, Scenario sc,
                                    std::uint64_t seed, Method method) {
  const SyntheticBundle bundle =
      make_scenario_bundle(sc, seed, cfg.n_train, cfg.n_val, cfg.n_test);
  TrainConfig tc = cfg.base;
  tc.method = method;
  tc.seed = seed;
  const TrainedPair pair = train(bundle, tc);
  const std::vector<double> w = train_set_weights(bundle, pair);
  const ScenarioFit fit = scenario_fit(bundle, w);
  MethodOutcome out;
  out.r2 = fit.r2;
  out.spearman = fit.spearman;
  const double m = mean_of(w);
  out.cv = m == 0.0 ? 0.0 : stddev_of(w) / m;
  return out;
}

MethodOutcome evaluate_multi_world(const Table1Config& cfg, Scenario sc,
                                   std::uint64_t seed, Method method) {
  std::vector<WorldSummary> worlds(static_cast<std::size_t>(cfg.n_worlds));
  std::vector<double> all_w_cv;
  for (int w = 0; w < cfg.n_worlds; ++w) {
    const SyntheticBundle bundle = make_scenario_bundle(
        sc, seed, cfg.n_train_world, cfg.n_val_world, cfg.n_val_world, -1.0,
        static_cast<std::uint64_t>(w + 1));
    TrainConfig tc = cfg.base;
    tc.method = method;
    if (cfg.epochs_world > 0) tc.epochs = cfg.epochs_world;
    tc.seed = seed + static_cast<std::uint64_t>(w) * 7919;
    const TrainedPair pair = train(bundle, tc);
    worlds[static_cast<std::size_t>(w)] =
        summarize_world(bundle, train_set_weights(bundle, pair));
  }
  const ScenarioFit fit = scenario_fit_multiworld(worlds);
  MethodOutcome out;
  out.r2 = fit.r2;
  out.spearman = fit.spearman;
  std::vector<double> mean_w(worlds.size());
  for (std::size_t i = 0; i < worlds.size(); ++i)
    mean_w[i] = worlds[i].mean_weight;
  const double m = mean_of(mean_w);
  out.cv = m == 0.0 ? 0.0 : stddev_of(mean_w) / m;
  return out;
}

}  // namespace

std::vector<Table1Row> run_table1(const Table1Config& cfg) {
  if (cfg.seeds.empty()) throw ParamError("run_table1: need at least 1 seed");
  struct Job {
    std::size_t row;
    Scenario scenario;
    std::uint64_t seed;
    Method method;
  };
  std::vector<Table1Row> rows;
  std::vector<Job> jobs;
  for (std::uint64_t seed : cfg.seeds)
    for (Scenario sc : kAllScenarios) {
      Table1Row row;
      row.scenario = sc;
      row.seed = seed;
      const std::size_t r = rows.size();
      rows.push_back(row);
      for (Method m : kTable1Methods) jobs.push_back({r, sc, seed, m});
    }

  std::vector<MethodOutcome> outcomes(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    const Job& job = jobs[j];
    const bool multi =
        job.scenario == Scenario::S3 || job.scenario == Scenario::S4;
    outcomes[j] = multi
                      ? evaluate_multi_world(cfg, job.scenario, job.seed,
                                             job.method)
                      : evaluate_single_world(cfg, job.scenario, job.seed,
                                              job.method);
  });

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    Table1Row& row = rows[jobs[j].row];
    switch (jobs[j].method) {
      case Method::mwn: row.r2_mwn = outcomes[j].r2; break;
      case Method::ibr: row.r2_ibr = outcomes[j].r2; break;
      case Method::revar:
        row.r2_revar = outcomes[j].r2;
        row.spearman_revar = outcomes[j].spearman;
        row.cv_revar = outcomes[j].cv;
        break;
      default: break;
    }
  }
  for (auto& row : rows)
    row.ordering_ok = row.r2_revar > row.r2_ibr && row.r2_ibr > row.r2_mwn;
  return rows;
}

FlipTask make_flip_task(const FlipTaskConfig& cfg) {
  if (cfg.n_classes < 2) throw ParamError("make_flip_task: need >= 2 classes");
  Rng rng(cfg.seed, 0xF11Bu);
  const Dims dims{};
  const GeneratorParams params = sample_generator_params(rng, dims);
  const std::size_t d = dims.total();

  // Class scores come from a random linear map over standardized inputs.
  Matrix class_w(static_cast<std::size_t>(cfg.n_classes), d);
  for (auto& v : class_w.data) v = rng.normal();

  auto draw_inputs = [&](std::size_t n) {
    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        x.at(i, j) = params.mu[j] + params.sigma_diag[j] * rng.normal();
    return x;
  };
  Matrix x_train = draw_inputs(cfg.n_train);
  Matrix x_val = draw_inputs(cfg.n_val);
  Matrix x_test = draw_inputs(cfg.n_test);

  // Flip scale calibrated so the median-|G^T x| instance flips at mean_flip.
  std::vector<double> gmag(cfg.n_train);
  for (std::size_t i = 0; i < cfg.n_train; ++i)
    gmag[i] = std::abs(dot_g(params, x_train.row(i)));
  std::vector<double> sorted = gmag;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                   sorted.end());
  const double median = std::max(sorted[sorted.size() / 2], 1e-12);
  const double kappa = cfg.mean_flip / median;

  Batch std_probe;
  std_probe.x = x_train;
  std_probe.y_real.assign(cfg.n_train, 0.0);
  const Standardizer st = Standardizer::fit(std_probe);

  auto clean_label = [&](std::span<const double> x_raw) {
    int best = 0;
    double best_score = -1e300;
    for (int c = 0; c < cfg.n_classes; ++c) {
      double score = 0.0;
      for (std::size_t j = 0; j < d; ++j)
        score += class_w.at(static_cast<std::size_t>(c), j) *
                 (x_raw[j] - st.x_mean[j]) / st.x_std[j];
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    return best;
  };

  auto label_set = [&](const Matrix& x, bool noisy,
                       std::vector<double>* probs_out) {
    std::vector<int> y(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
      int label = clean_label(x.row(i));
      if (noisy) {
        const double p = std::clamp(
            kappa * std::abs(dot_g(params, x.row(i))), 0.0, cfg.max_flip);
        if (probs_out) (*probs_out)[i] = p;
        if (rng.uniform() < p) {
          int other = static_cast<int>(rng.uniform() * (cfg.n_classes - 1));
          if (other >= label) ++other;
          label = other;
        }
      }
      y[i] = label;
    }
    return y;
  };

  FlipTask task;
  task.flip_prob_train.resize(cfg.n_train);
  task.splits.train.x = x_train;
  task.splits.train.y_class = label_set(x_train, true, &task.flip_prob_train);
  task.splits.val.x = x_val;
  task.splits.val.y_class = label_set(x_val, true, nullptr);
  task.test.x = x_test;
  task.test.y_class = label_set(x_test, false, nullptr);

  st.apply_inputs(task.splits.train.x);
  st.apply_inputs(task.splits.val.x);
  st.apply_inputs(task.test.x);
  return task;
}

SelectiveComparison run_selective_comparison(const FlipTaskConfig& task_cfg,
                                             const TrainConfig& base) {
  const FlipTask task = make_flip_task(task_cfg);

  TrainConfig revar_cfg = base;
  revar_cfg.method = Method::revar;
  revar_cfg.seed = task_cfg.seed;
  TrainConfig erm_cfg = base;
  erm_cfg.method = Method::erm;
  erm_cfg.seed = task_cfg.seed;

  const TrainedPair revar_pair = train(task.splits, revar_cfg);
  const TrainedPair erm_pair = train(task.splits, erm_cfg);

  const std::size_t n = task.test.size();
  std::vector<double> unc_g(n), unc_sr(n), unc_mcd(n);
  std::vector<std::uint8_t> correct_revar(n), correct_erm(n);
  Rng rng_mcd(task_cfg.seed, 0x3CD5u);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = task.test.x.row(i);
    const auto p_revar = forward(revar_pair.classifier, x);
    const auto p_erm = forward(erm_pair.classifier, x);
    const auto argmax = [](const std::vector<double>& p) {
      return static_cast<int>(std::max_element(p.begin(), p.end()) -
                              p.begin());
    };
    correct_revar[i] = argmax(p_revar) == task.test.y_class[i];
    correct_erm[i] = argmax(p_erm) == task.test.y_class[i];
    // Low meta-weight means noisy/uncertain under label noise.
    unc_g[i] = 1.0 - weight_of(revar_pair.meta, x);
    unc_sr[i] = 1.0 - *std::max_element(p_erm.begin(), p_erm.end());
    unc_mcd[i] = mcd_score(erm_pair.classifier, x, base.mc, rng_mcd);
  }
  const auto grid = default_coverage_grid();
  SelectiveComparison out;
  out.auarc_g = auarc(rejection_curve(unc_g, correct_revar, grid, "g"));
  out.auarc_sr = auarc(rejection_curve(unc_sr, correct_erm, grid, "sr"));
  out.auarc_mcd = auarc(rejection_curve(unc_mcd, correct_erm, grid, "mcd"));
  double acc = 0.0;
  for (auto c : correct_erm) acc += c;
  out.accuracy_erm = acc / static_cast<double>(n);
  return out;
}

}  // namespace revar
