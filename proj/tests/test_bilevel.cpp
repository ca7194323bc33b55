#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "revar/bilevel.hpp"

using namespace revar;

namespace {

Batch random_regression(std::size_t n, std::size_t d, Rng& rng) {
  Batch b;
  b.x = Matrix(n, d);
  for (auto& v : b.x.data) v = rng.normal();
  b.y_real.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += b.x.at(i, j);
    b.y_real[i] = 0.5 * s + 0.1 * rng.normal();
  }
  return b;
}

Batch random_classification(std::size_t n, std::size_t d, int classes,
                            Rng& rng) {
  Batch b;
  b.x = Matrix(n, d);
  for (auto& v : b.x.data) v = rng.normal();
  b.y_class.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    b.y_class[i] = static_cast<int>(rng.uniform() * classes);
  return b;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

// Mirrors the trainer's seeded Fisher-Yates so the reference loop below can
// reproduce its batch order exactly.
void reference_shuffle(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j =
        static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
  }
}

}  // namespace

TEST_CASE("method names round trip") {
  for (Method m : {Method::revar, Method::revar_pv, Method::ibr, Method::mwn,
                   Method::erm, Method::vr, Method::mbr})
    CHECK(method_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(method_from_string("sgd"), ParamError);
}

TEST_CASE("config validation") {
  TrainConfig ok;
  CHECK_NOTHROW(ok.validate());
  TrainConfig bad = ok;
  bad.lr_classifier = 0.0;
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad = ok;
  bad.warm_start_epochs = bad.epochs;
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad = ok;
  bad.meta_interval = 0;
  CHECK_THROWS_AS(bad.validate(), ParamError);
  bad = ok;
  bad.batch_train = 0;
  CHECK_THROWS_AS(bad.validate(), ParamError);
}

TEST_CASE("meta_input depends on the conditioning") {
  Rng rng(1);
  const MetaNet inst = MetaNet::make(3, {2}, MetaConditioning::instance, rng);
  const MetaNet lossc = MetaNet::make(1, {2}, MetaConditioning::loss_scalar, rng);
  const NetParams theta =
      NetParams::make_mlp(3, {2}, 1, OutputKind::linear, 0.1, rng);
  Batch b = random_regression(2, 3, rng);

  const auto xi = meta_input(inst, theta, b, 1);
  CHECK(xi == std::vector<double>(b.x.row(1).begin(), b.x.row(1).end()));
  const auto li = meta_input(lossc, theta, b, 1);
  REQUIRE(li.size() == 1);
  CHECK(li[0] == doctest::Approx(example_loss(theta, b, 1)).epsilon(1e-15));
}

TEST_CASE("inner_step is one plain weighted SGD step") {
  Rng rng(2);
  const NetParams theta =
      NetParams::make_mlp(3, {3}, 1, OutputKind::linear, 0.2, rng);
  const MetaNet meta = MetaNet::make(3, {2}, MetaConditioning::instance, rng);
  Batch b = random_regression(4, 3, rng);
  const double lr = 0.1;

  std::vector<double> expected = theta.flatten();
  std::vector<double> step(theta.param_count(), 0.0);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double w = weight_of(meta, b.x.row(i));
    const auto g = example_grad(theta, b, i, w / 4.0);
    for (std::size_t j = 0; j < step.size(); ++j) step[j] += g[j];
  }
  for (std::size_t j = 0; j < expected.size(); ++j)
    expected[j] -= lr * step[j];

  const NetParams theta_hat = inner_step(theta, b, meta, lr);
  CHECK(theta_hat.flatten() == expected);

  Batch empty;
  CHECK_THROWS_AS(inner_step(theta, empty, meta, lr), ParamError);
}

TEST_CASE("hypergradient matches finite differences on 20 random instances") {
  Rng rng(7);
  double worst = 0.0;
  for (int c = 0; c < 20; ++c) {
    const bool classify = c % 2 == 0;
    const bool pooled = c % 5 == 0;
    NetParams theta = NetParams::make_mlp(
        3, {3}, classify ? 2 : 1,
        classify ? OutputKind::softmax : OutputKind::linear, 0.25, rng);
    REQUIRE(theta.param_count() <= 50);
    MetaNet meta = MetaNet::make(3, {3}, MetaConditioning::instance, rng);
    Batch tr = classify ? random_classification(5, 3, 2, rng)
                        : random_regression(5, 3, rng);
    Batch va = classify ? random_classification(4, 3, 2, rng)
                        : random_regression(4, 3, rng);
    McConfig mc;
    mc.k_samples = 3;
    const MaskSet masks = sample_masks(theta, mc, rng);
    const double lr = 0.05 + 0.1 * rng.uniform();
    const double gamma = rng.uniform();
    Matrix pool(2, 3);
    for (auto& v : pool.data) v = rng.normal();
    const Matrix* up = pooled ? &pool : nullptr;

    const auto analytic =
        meta_gradient(theta, tr, va, meta, lr, gamma, masks, up);
    const auto numeric =
        meta_gradient_fd(theta, tr, va, meta, lr, gamma, masks, 1e-5, up);
    worst = std::max(worst, max_rel_err(analytic, numeric));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("loss-conditioned hypergradient also checks out") {
  Rng rng(1);
  NetParams theta = NetParams::make_mlp(3, {3}, 1, OutputKind::linear, 0.25, rng);
  MetaNet meta = MetaNet::make(1, {3}, MetaConditioning::loss_scalar, rng);
  Batch tr = random_regression(5, 3, rng);
  Batch va = random_regression(4, 3, rng);
  McConfig mc;
  mc.k_samples = 3;
  const MaskSet masks = sample_masks(theta, mc, rng);
  const auto analytic = meta_gradient(theta, tr, va, meta, 0.05, 0.5, masks);
  const auto numeric =
      meta_gradient_fd(theta, tr, va, meta, 0.05, 0.5, masks, 1e-5);
  CHECK(max_rel_err(analytic, numeric) <= 1e-4);

  CHECK_THROWS_AS(
      meta_gradient_fd(theta, tr, va, meta, 0.05, 0.5, masks, 0.0),
      ParamError);
}

TEST_CASE("erm training matches a standalone SGD reference loop bit-for-bit") {
  Rng data_rng(23);
  DataSplits d;
  d.train = random_regression(37, 4, data_rng);  // odd size: ragged last batch
  d.val = random_regression(10, 4, data_rng);

  TrainConfig cfg;
  cfg.method = Method::erm;
  cfg.epochs = 6;
  cfg.warm_start_epochs = 2;
  cfg.batch_train = 8;
  cfg.seed = 99;

  const TrainedPair pair = train(d, cfg);

  // Independent reference: init from stream 1, shuffle from stream 3,
  // SGD with momentum and weight decay over the same batch partitions.
  Rng rng_init(cfg.seed, 1);
  NetParams theta = NetParams::make_mlp(4, cfg.classifier_hidden, 1,
                                        OutputKind::linear,
                                        cfg.mc.dropout_rate, rng_init);
  Rng rng_shuffle(cfg.seed, 3);
  std::vector<double> v(theta.param_count(), 0.0);
  std::vector<std::size_t> idx(d.train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    reference_shuffle(idx, rng_shuffle);
    for (std::size_t begin = 0; begin < idx.size();
         begin += static_cast<std::size_t>(cfg.batch_train)) {
      const std::size_t count =
          std::min<std::size_t>(cfg.batch_train, idx.size() - begin);
      Batch batch;
      batch.x = Matrix(count, 4);
      batch.y_real.resize(count);
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t i = idx[begin + k];
        std::copy(d.train.x.row(i).begin(), d.train.x.row(i).end(),
                  batch.x.row(k).begin());
        batch.y_real[k] = d.train.y_real[i];
      }
      std::vector<double> g(theta.param_count(), 0.0);
      for (std::size_t i = 0; i < count; ++i) {
        const auto gi =
            example_grad(theta, batch, i, 1.0 / static_cast<double>(count));
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += gi[j];
      }
      const std::vector<double> flat = theta.flatten();
      for (std::size_t j = 0; j < g.size(); ++j)
        v[j] = cfg.momentum * v[j] + (g[j] + cfg.weight_decay * flat[j]);
      theta.axpy(-cfg.lr_classifier, v);
    }
  }

  CHECK(pair.classifier.flatten() == theta.flatten());
  REQUIRE(pair.history.size() == static_cast<std::size_t>(cfg.epochs));
  for (const auto& rec : pair.history) {
    CHECK(rec.weight_mean == 1.0);  // erm never reweights
    CHECK(rec.weight_sd == 0.0);
  }
}

TEST_CASE("ibr equals revar with the variance term switched off") {
  Rng data_rng(31);
  DataSplits d;
  d.train = random_regression(40, 4, data_rng);
  d.val = random_regression(16, 4, data_rng);

  TrainConfig ibr;
  ibr.method = Method::ibr;
  ibr.epochs = 6;
  ibr.warm_start_epochs = 1;
  ibr.meta_interval = 2;
  ibr.batch_train = 10;
  ibr.seed = 5;

  TrainConfig revar0 = ibr;
  revar0.method = Method::revar;
  revar0.mc.reg_weight = 0.0;

  const TrainedPair a = train(d, ibr);
  const TrainedPair b = train(d, revar0);
  CHECK(a.classifier.flatten() == b.classifier.flatten());
  CHECK(a.meta.net.flatten() == b.meta.net.flatten());

  // With the default gamma the variance term changes the trajectory.
  TrainConfig revar1 = ibr;
  revar1.method = Method::revar;
  const TrainedPair c = train(d, revar1);
  CHECK(c.classifier.flatten() != a.classifier.flatten());
}

TEST_CASE("training is deterministic and descends on easy data") {
  Rng data_rng(41);
  DataSplits d;
  d.train = random_regression(100, 4, data_rng);
  d.val = random_regression(30, 4, data_rng);

  TrainConfig cfg;
  cfg.method = Method::erm;
  cfg.epochs = 12;
  cfg.warm_start_epochs = 1;
  cfg.seed = 11;

  const TrainedPair a = train(d, cfg);
  const TrainedPair b = train(d, cfg);
  CHECK(a.classifier.flatten() == b.classifier.flatten());
  CHECK(a.history.back().train_loss < 0.5 * a.history.front().train_loss);
}

TEST_CASE("revar produces spread-out instance weights after warm start") {
  Rng data_rng(43);
  DataSplits d;
  d.train = random_regression(60, 4, data_rng);
  d.val = random_regression(20, 4, data_rng);

  TrainConfig cfg;
  cfg.method = Method::revar;
  cfg.epochs = 5;
  cfg.warm_start_epochs = 2;
  cfg.meta_interval = 2;
  cfg.seed = 13;

  const TrainedPair pair = train(d, cfg);
  for (int e = 0; e < 2; ++e) {
    CHECK(pair.history[e].weight_mean == 1.0);
    CHECK(pair.history[e].weight_sd == 0.0);
  }
  bool spread = false;
  for (std::size_t e = 2; e < pair.history.size(); ++e)
    spread |= pair.history[e].weight_sd > 0.0;
  CHECK(spread);
}

TEST_CASE("epochs=0 and checkpoint resume return the inputs unchanged") {
  Rng data_rng(47);
  DataSplits d;
  d.train = random_regression(20, 3, data_rng);
  d.val = random_regression(8, 3, data_rng);

  TrainConfig cfg;
  cfg.method = Method::revar;
  cfg.epochs = 0;
  cfg.seed = 3;

  const TrainedPair fresh = train(d, cfg);
  Rng rng_init(cfg.seed, 1);
  const NetParams expected = NetParams::make_mlp(
      3, cfg.classifier_hidden, 1, OutputKind::linear, cfg.mc.dropout_rate,
      rng_init);
  CHECK(fresh.classifier.flatten() == expected.flatten());
  CHECK(fresh.history.empty());

  TrainConfig warm = cfg;
  warm.epochs = 3;
  warm.warm_start_epochs = 1;
  const TrainedPair trained = train(d, warm);
  const TrainedPair resumed = train(d, cfg, &trained);
  CHECK(resumed.classifier.flatten() == trained.classifier.flatten());
  CHECK(resumed.meta.net.flatten() == trained.meta.net.flatten());
}

TEST_CASE("mwn conditions the meta net on the loss scalar") {
  Rng data_rng(53);
  DataSplits d;
  d.train = random_regression(30, 4, data_rng);
  d.val = random_regression(10, 4, data_rng);

  TrainConfig cfg;
  cfg.method = Method::mwn;
  cfg.epochs = 3;
  cfg.warm_start_epochs = 1;
  cfg.meta_interval = 2;
  cfg.seed = 7;
  const TrainedPair pair = train(d, cfg);
  CHECK(pair.meta.conditioning == MetaConditioning::loss_scalar);
  CHECK(pair.meta.input_dim() == 1);
}

TEST_CASE("rejected method/task combinations") {
  Rng data_rng(59);
  DataSplits reg;
  reg.train = random_regression(12, 3, data_rng);
  reg.val = random_regression(6, 3, data_rng);

  TrainConfig mbr;
  mbr.method = Method::mbr;
  mbr.epochs = 2;
  mbr.warm_start_epochs = 1;
  mbr.seed = 1;
  CHECK_THROWS_AS(train(reg, mbr), ParamError);  // margins need a classifier

  TrainConfig revar;
  revar.method = Method::revar;
  CHECK_THROWS_AS(train_baseline(reg, revar), ParamError);

  DataSplits empty;
  TrainConfig erm;
  erm.method = Method::erm;
  CHECK_THROWS_AS(train(empty, erm), ParamError);
}

TEST_CASE("mbr reweights classifier batches to mean one") {
  Rng data_rng(61);
  DataSplits d;
  d.train = random_classification(24, 3, 3, data_rng);
  d.val = random_classification(12, 3, 3, data_rng);

  TrainConfig cfg;
  cfg.method = Method::mbr;
  cfg.epochs = 4;
  cfg.warm_start_epochs = 1;
  cfg.seed = 2;
  const TrainedPair pair = train(d, cfg);
  REQUIRE(pair.history.size() == 4);
  // Per-batch normalization keeps the epoch mean at one while spreading sd.
  for (std::size_t e = 1; e < pair.history.size(); ++e) {
    CHECK(pair.history[e].weight_mean == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(pair.history[e].weight_sd > 0.0);
  }
}

TEST_CASE("standardizer zeroes means and scales variance to one") {
  Batch b;
  b.x = Matrix(4, 2);
  const double xs[4][2] = {{1, 10}, {3, 10}, {5, 10}, {7, 10}};
  for (int i = 0; i < 4; ++i) {
    b.x.at(i, 0) = xs[i][0];
    b.x.at(i, 1) = xs[i][1];
  }
  b.y_real = {2.0, 4.0, 6.0, 8.0};

  const Standardizer s = Standardizer::fit(b);
  CHECK(s.x_mean[0] == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(s.x_std[0] == doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));
  CHECK(s.x_std[1] == 1.0);  // constant column floors to unit scale
  CHECK(s.y_mean == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(s.y_std == doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));

  Batch c = b;
  s.apply(c);
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < 4; ++i) {
    mx += c.x.at(i, 0);
    my += c.y_real[i];
  }
  CHECK(std::abs(mx) < 1e-12);
  CHECK(std::abs(my) < 1e-12);
  CHECK(c.x.at(0, 1) == 0.0);
}

TEST_CASE("splits_from_bundle exposes observed features and shift inputs") {
  const ScenarioSpec spec = ScenarioSpec::standard(Scenario::S3);
  Rng rng(67);
  const GeneratorParams p = make_world(spec, Dims{}, rng);
  const SyntheticBundle b = generate_scenario(spec, p, 10, 6, 8, rng);
  const DataSplits d = splits_from_bundle(b);
  CHECK(d.train.x.cols == 48);
  CHECK(d.train.y_real == b.train.y);
  CHECK(d.val.x.rows == 6);
  CHECK(d.unlabeled.rows == 8);
  CHECK(d.unlabeled.cols == 48);
}
