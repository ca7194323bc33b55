#include <doctest.h>

#include <cmath>

#include "revar/mcvar.hpp"

using namespace revar;

namespace {

// Scalar chain x -> relu(theta*x) -> identity, dropout on the single hidden
// unit. With keep probability q and theta*x > 0 the output is Bernoulli(q)
// scaled by theta*x, so the mask variance is exactly q(1-q)(theta*x)^2.
NetParams bernoulli_net(double theta) {
  NetParams net;
  net.output_kind = OutputKind::linear;
  net.dropout_rate = 0.2;
  net.weights.emplace_back(1, 1);
  net.weights[0].at(0, 0) = theta;
  net.biases.push_back({0.0});
  net.weights.emplace_back(1, 1);
  net.weights[1].at(0, 0) = 1.0;
  net.biases.push_back({0.0});
  return net;
}

template <typename F>
std::vector<double> fd_grad(NetParams net, F objective, double h = 1e-6) {
  std::vector<double> flat = net.flatten();
  std::vector<double> g(flat.size());
  for (std::size_t j = 0; j < flat.size(); ++j) {
    const double orig = flat[j];
    flat[j] = orig + h;
    net.unflatten(flat);
    const double fp = objective(net);
    flat[j] = orig - h;
    net.unflatten(flat);
    const double fm = objective(net);
    flat[j] = orig;
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

Batch tiny_regression() {
  Batch b;
  b.x = Matrix(3, 2);
  b.x.at(0, 0) = 1.0;
  b.x.at(0, 1) = -0.5;
  b.x.at(1, 0) = 0.2;
  b.x.at(1, 1) = 2.0;
  b.x.at(2, 0) = -1.0;
  b.x.at(2, 1) = 0.3;
  b.y_real = {0.5, -1.0, 2.0};
  return b;
}

}  // namespace

TEST_CASE("config validation") {
  McConfig ok;
  CHECK_NOTHROW(ok.validate());
  McConfig bad_k;
  bad_k.k_samples = 1;
  CHECK_THROWS_AS(bad_k.validate(), ParamError);
  McConfig bad_rate;
  bad_rate.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad_rate.validate(), ParamError);
  bad_rate.dropout_rate = 0.0;
  CHECK_THROWS_AS(bad_rate.validate(), ParamError);
  McConfig bad_gamma;
  bad_gamma.reg_weight = -0.1;
  CHECK_THROWS_AS(bad_gamma.validate(), ParamError);
}

TEST_CASE("example loss and grad dispatch on the task kind") {
  Rng rng(1);
  const NetParams reg = NetParams::make_mlp(2, {3}, 1, OutputKind::linear, 0.1, rng);
  const Batch b = tiny_regression();
  CHECK(example_loss(reg, b, 1) ==
        doctest::Approx(loss(reg, b.x.row(1), b.y_real[1])).epsilon(1e-15));
  CHECK(example_grad(reg, b, 1, 2.0) == grad(reg, b.x.row(1), b.y_real[1], 2.0));

  const NetParams cls = NetParams::make_mlp(2, {3}, 3, OutputKind::softmax, 0.1, rng);
  Batch c = b;
  c.y_real.clear();
  c.y_class = {0, 2, 1};
  CHECK(c.is_classification());
  CHECK(example_loss(cls, c, 2) ==
        doctest::Approx(loss(cls, c.x.row(2), 1)).epsilon(1e-15));
}

TEST_CASE("sample_masks honors the config's K and rate") {
  Rng rng(2);
  NetParams net = NetParams::make_mlp(2, {200}, 1, OutputKind::linear, 0.5, rng);
  McConfig cfg;
  cfg.k_samples = 7;
  cfg.dropout_rate = 0.1;  // overrides the net's own rate
  const MaskSet masks = sample_masks(net, cfg, rng);
  REQUIRE(masks.size() == 7);
  int kept = 0, total = 0;
  for (const auto& m : masks) {
    CHECK(m.keep_prob == doctest::Approx(0.9));
    for (auto v : m.hidden[0]) {
      kept += v;
      ++total;
    }
  }
  CHECK(static_cast<double>(kept) / total > 0.85);
  CHECK(static_cast<double>(kept) / total < 0.95);
}

TEST_CASE("dropout variance converges to the Bernoulli closed form") {
  const double theta = 0.8, x = 2.5;
  const NetParams net = bernoulli_net(theta);
  McConfig cfg;
  cfg.k_samples = 10000;
  cfg.dropout_rate = 0.2;
  Rng rng(1);
  const double v = dropout_variance(net, std::vector<double>{x}, cfg, rng);
  const double q = 1.0 - cfg.dropout_rate;
  const double expected = q * (1.0 - q) * (theta * x) * (theta * x);
  CHECK(std::abs(v - expected) / expected < 0.02);
}

TEST_CASE("identical masks give exactly zero variance") {
  Rng rng(3);
  const NetParams net = NetParams::make_mlp(3, {5}, 2, OutputKind::softmax, 0.3, rng);
  const DropoutMask one = sample_mask(net, rng);
  const MaskSet repeated(10, one);
  CHECK(dropout_variance_with(net, std::vector<double>{0.1, -0.4, 1.2},
                              repeated) == 0.0);
}

TEST_CASE("dropout variance hand arithmetic on fixed masks") {
  // Outputs under the two masks: theta*x and 0. Mean = theta*x/2;
  // variance = 2 * (theta*x/2)^2 / 2 = (theta*x)^2 / 4.
  const NetParams net = bernoulli_net(1.5);
  DropoutMask keep = ones_mask(net);
  DropoutMask drop = ones_mask(net);
  drop.hidden[0][0] = 0;
  const MaskSet masks{keep, drop};
  const double tx = 1.5 * 2.0;
  CHECK(dropout_variance_with(net, std::vector<double>{2.0}, masks) ==
        doctest::Approx(tx * tx / 4.0).epsilon(1e-12));
}

TEST_CASE("dropout variance gradient matches central differences") {
  Rng rng(4);
  double worst = 0.0;
  for (int c = 0; c < 15; ++c) {
    const bool classify = c % 2 == 0;
    NetParams net = NetParams::make_mlp(
        3, {4}, classify ? 3 : 1,
        classify ? OutputKind::softmax : OutputKind::linear, 0.3, rng);
    McConfig cfg;
    cfg.k_samples = 4;
    cfg.dropout_rate = 0.3;
    const MaskSet masks = sample_masks(net, cfg, rng);
    std::vector<double> x(3);
    for (auto& v : x) v = rng.normal();

    const auto analytic = dropout_variance_grad(net, x, masks);
    const auto numeric = fd_grad(net, [&](const NetParams& n) {
      return dropout_variance_with(n, x, masks);
    });
    worst = std::max(worst, max_rel_err(analytic, numeric));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("meta loss is mean loss plus weighted variance") {
  Rng rng(5);
  const NetParams net = NetParams::make_mlp(2, {3}, 1, OutputKind::linear, 0.2, rng);
  const Batch val = tiny_regression();
  McConfig cfg;
  cfg.k_samples = 3;
  const MaskSet masks = sample_masks(net, cfg, rng);
  const double gamma = 0.7;

  double expected = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i)
    expected += example_loss(net, val, i) +
                gamma * dropout_variance_with(net, val.x.row(i), masks);
  expected /= static_cast<double>(val.size());
  CHECK(meta_loss_with(net, val, gamma, masks) ==
        doctest::Approx(expected).epsilon(1e-15));

  // gamma = 0 reduces to the plain validation loss.
  double plain = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i)
    plain += example_loss(net, val, i);
  plain /= static_cast<double>(val.size());
  CHECK(meta_loss_with(net, val, 0.0, masks) ==
        doctest::Approx(plain).epsilon(1e-15));

  Batch empty;
  CHECK_THROWS_AS(meta_loss_with(net, empty, gamma, masks), ParamError);
}

TEST_CASE("meta loss gradient matches central differences") {
  Rng rng(6);
  double worst = 0.0;
  for (int c = 0; c < 10; ++c) {
    const bool classify = c % 2 == 1;
    NetParams net = NetParams::make_mlp(
        2, {3}, classify ? 2 : 1,
        classify ? OutputKind::softmax : OutputKind::linear, 0.25, rng);
    Batch val = tiny_regression();
    if (classify) {
      val.y_real.clear();
      val.y_class = {0, 1, 0};
    }
    McConfig cfg;
    cfg.k_samples = 3;
    const MaskSet masks = sample_masks(net, cfg, rng);
    const double gamma = 0.5 + rng.uniform();

    const auto analytic = meta_loss_grad(net, val, gamma, masks);
    const auto numeric = fd_grad(net, [&](const NetParams& n) {
      return meta_loss_with(n, val, gamma, masks);
    });
    worst = std::max(worst, max_rel_err(analytic, numeric));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("pooled variant adds the unlabeled variance term") {
  Rng rng(7);
  const NetParams net = NetParams::make_mlp(2, {3}, 1, OutputKind::linear, 0.2, rng);
  const Batch val = tiny_regression();
  McConfig cfg;
  cfg.k_samples = 3;
  const MaskSet masks = sample_masks(net, cfg, rng);
  const double gamma = 0.9;

  Matrix none;
  CHECK(meta_loss_pv_with(net, val, none, gamma, masks) ==
        doctest::Approx(meta_loss_with(net, val, gamma, masks)).epsilon(1e-15));

  Matrix pool(2, 2);
  pool.at(0, 0) = 3.0;
  pool.at(1, 1) = -2.0;
  double extra = 0.0;
  for (std::size_t i = 0; i < pool.rows; ++i)
    extra += gamma * dropout_variance_with(net, pool.row(i), masks);
  extra /= static_cast<double>(pool.rows);
  CHECK(meta_loss_pv_with(net, val, pool, gamma, masks) ==
        doctest::Approx(meta_loss_with(net, val, gamma, masks) + extra)
            .epsilon(1e-15));

  Batch empty;
  CHECK_THROWS_AS(meta_loss_pv_with(net, empty, pool, gamma, masks),
                  ParamError);

  // Gradient of the pooled objective against central differences.
  const auto analytic = meta_loss_pv_grad(net, val, pool, gamma, masks);
  const auto numeric = fd_grad(net, [&](const NetParams& n) {
    return meta_loss_pv_with(n, val, pool, gamma, masks);
  });
  CHECK(max_rel_err(analytic, numeric) <= 1e-4);
}

TEST_CASE("mcd score is predictive entropy, classifiers only") {
  Rng rng(8);
  const NetParams reg = NetParams::make_mlp(2, {3}, 1, OutputKind::linear, 0.2, rng);
  McConfig cfg;
  Rng r2(9);
  CHECK_THROWS_AS(mcd_score(reg, std::vector<double>{0.1, 0.2}, cfg, r2),
                  ParamError);

  const NetParams cls = NetParams::make_mlp(2, {6}, 4, OutputKind::softmax, 0.2, rng);
  Rng r3(9);
  const double h = mcd_score(cls, std::vector<double>{0.3, -1.0}, cfg, r3);
  CHECK(h >= 0.0);
  CHECK(h <= std::log(4.0) + 1e-12);  // entropy caps at ln(#classes)

  Rng r4(9);
  CHECK(mcd_score(cls, std::vector<double>{0.3, -1.0}, cfg, r4) ==
        doctest::Approx(h).epsilon(1e-15));
}
