#include <doctest.h>

#include <cmath>

#include "revar/nets.hpp"

using namespace revar;

namespace {

// Central differences over the flattened parameters.
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
  net.unflatten(flat);
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

NetParams hand_net() {
  // 2 -> 2 -> 1, weights chosen for easy arithmetic.
  NetParams net;
  net.output_kind = OutputKind::linear;
  net.weights.emplace_back(2, 2);
  net.weights[0].at(0, 0) = 1.0;
  net.weights[0].at(0, 1) = -1.0;
  net.weights[0].at(1, 0) = 0.5;
  net.weights[0].at(1, 1) = 2.0;
  net.biases.push_back({0.5, -3.0});
  net.weights.emplace_back(1, 2);
  net.weights[1].at(0, 0) = 2.0;
  net.weights[1].at(0, 1) = 3.0;
  net.biases.push_back({0.25});
  return net;
}

}  // namespace

TEST_CASE("make_mlp shapes, zero biases and fan-in bound") {
  Rng rng(1);
  const NetParams net =
      NetParams::make_mlp(5, {7, 3}, 2, OutputKind::softmax, 0.2, rng);
  REQUIRE(net.num_layers() == 3);
  CHECK(net.input_dim() == 5);
  CHECK(net.output_dim() == 2);
  CHECK(net.weights[0].rows == 7);
  CHECK(net.weights[0].cols == 5);
  CHECK(net.weights[1].rows == 3);
  CHECK(net.weights[1].cols == 7);
  CHECK(net.weights[2].rows == 2);
  CHECK(net.weights[2].cols == 3);
  CHECK(net.param_count() == 7 * 5 + 7 + 3 * 7 + 3 + 2 * 3 + 2);
  for (const auto& b : net.biases)
    for (double v : b) CHECK(v == 0.0);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(net.weights[l].cols));
    for (double v : net.weights[l].data) {
      CHECK(std::abs(v) <= bound);
    }
  }
}

TEST_CASE("flatten round trips and axpy updates in place") {
  Rng rng(2);
  NetParams net = NetParams::make_mlp(3, {4}, 2, OutputKind::linear, 0.0, rng);
  const std::vector<double> flat = net.flatten();
  REQUIRE(flat.size() == net.param_count());
  NetParams other = NetParams::make_mlp(3, {4}, 2, OutputKind::linear, 0.0, rng);
  other.unflatten(flat);
  CHECK(other.flatten() == flat);

  std::vector<double> dir(flat.size(), 1.0);
  net.axpy(0.5, dir);
  const auto moved = net.flatten();
  for (std::size_t i = 0; i < flat.size(); ++i)
    CHECK(moved[i] == doctest::Approx(flat[i] + 0.5).epsilon(1e-15));
}

TEST_CASE("forward matches hand arithmetic through ReLU") {
  const NetParams net = hand_net();
  // x = (2, 1): pre = (1*2 - 1*1 + 0.5, 0.5*2 + 2*1 - 3) = (1.5, 0)
  // post-ReLU = (1.5, 0); out = 2*1.5 + 3*0 + 0.25 = 3.25.
  const std::vector<double> x{2.0, 1.0};
  const auto out = forward(net, x);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == doctest::Approx(3.25).epsilon(1e-15));

  // x = (0, 0): pre = (0.5, -3); ReLU kills unit 2; out = 2*0.5 + 0.25.
  const auto out0 = forward(net, std::vector<double>{0.0, 0.0});
  CHECK(out0[0] == doctest::Approx(1.25).epsilon(1e-15));
}

TEST_CASE("softmax head is a normalized probability vector") {
  Rng rng(3);
  const NetParams net =
      NetParams::make_mlp(4, {6}, 3, OutputKind::softmax, 0.0, rng);
  const std::vector<double> x{0.3, -1.2, 0.7, 2.0};
  const auto p = forward(net, x);
  REQUIRE(p.size() == 3);
  double sum = 0.0;
  for (double v : p) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  // Hand check on a single linear layer: logits z -> exp(z_i)/sum.
  NetParams lin;
  lin.output_kind = OutputKind::softmax;
  lin.weights.emplace_back(2, 1);
  lin.weights[0].at(0, 0) = 1.0;
  lin.weights[0].at(1, 0) = -1.0;
  lin.biases.push_back({0.0, 0.0});
  const auto q = forward(lin, std::vector<double>{0.5});
  const double e0 = std::exp(0.5), e1 = std::exp(-0.5);
  CHECK(q[0] == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-12));

  // Max subtraction keeps huge logits finite.
  lin.biases[0] = {800.0, 0.0};
  const auto big = forward(lin, std::vector<double>{0.0});
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dropout masks zero the selected hidden units") {
  const NetParams net = hand_net();
  DropoutMask mask = ones_mask(net);
  REQUIRE(mask.hidden.size() == 1);
  REQUIRE(mask.hidden[0].size() == 2);
  mask.hidden[0][0] = 0;  // kill the first hidden unit
  const auto out = forward(net, std::vector<double>{2.0, 1.0}, &mask);
  CHECK(out[0] == doctest::Approx(0.25).epsilon(1e-15));  // bias only

  // Sampled masks keep roughly keep_prob of the units.
  Rng rng(7);
  NetParams wide = NetParams::make_mlp(2, {400}, 1, OutputKind::linear, 0.25, rng);
  const DropoutMask m = sample_mask(wide, rng);
  CHECK(m.keep_prob == doctest::Approx(0.75));
  int kept = 0;
  for (auto v : m.hidden[0]) kept += v;
  CHECK(kept > 400 * 0.75 - 50);
  CHECK(kept < 400 * 0.75 + 50);
}

TEST_CASE("losses match their closed forms") {
  const NetParams net = hand_net();
  const std::vector<double> x{2.0, 1.0};
  CHECK(loss(net, x, 1.25) ==
        doctest::Approx(0.5 * 2.0 * 2.0).epsilon(1e-12));  // f=3.25, y=1.25

  NetParams cls;
  cls.output_kind = OutputKind::softmax;
  cls.weights.emplace_back(2, 1);
  cls.weights[0].at(0, 0) = 1.0;
  cls.weights[0].at(1, 0) = -1.0;
  cls.biases.push_back({0.0, 0.0});
  const auto p = forward(cls, std::vector<double>{0.5});
  CHECK(loss(cls, std::vector<double>{0.5}, 0) ==
        doctest::Approx(-std::log(p[0])).epsilon(1e-12));
  CHECK(loss(cls, std::vector<double>{0.5}, 1) ==
        doctest::Approx(-std::log(p[1])).epsilon(1e-12));
}

TEST_CASE("gradients agree with central differences on 50 random cases") {
  Rng rng(11);
  double worst = 0.0;
  for (int c = 0; c < 50; ++c) {
    const bool classify = c % 2 == 0;
    const std::size_t in = 2 + c % 3;
    const std::vector<int> hidden{static_cast<int>(2 + (c / 2) % 3)};
    const std::size_t out = classify ? 3 : 1;
    NetParams net = NetParams::make_mlp(
        in, hidden, out, classify ? OutputKind::softmax : OutputKind::linear,
        0.3, rng);
    std::vector<double> x(in);
    for (auto& v : x) v = rng.normal();
    const bool masked = c % 3 == 0;
    const DropoutMask mask = masked ? sample_mask(net, rng) : ones_mask(net);
    const double scale = 0.25 + rng.uniform();

    std::vector<double> analytic, numeric;
    if (classify) {
      const int y = static_cast<int>(rng.uniform() * 3.0);
      analytic = grad(net, x, y, scale, &mask);
      numeric = fd_grad(net, [&](const NetParams& n) {
        const auto p = forward(n, x, &mask);
        return -scale * std::log(p[static_cast<std::size_t>(y)]);
      });
    } else {
      const double y = rng.normal();
      analytic = grad(net, x, y, scale, &mask);
      numeric = fd_grad(net, [&](const NetParams& n) {
        const auto o = forward(n, x, &mask);
        return scale * 0.5 * (o[0] - y) * (o[0] - y);
      });
    }
    worst = std::max(worst, max_rel_err(analytic, numeric));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("backward computes vector-Jacobian products for both heads") {
  Rng rng(13);
  double worst = 0.0;
  for (int c = 0; c < 20; ++c) {
    const bool classify = c % 2 == 1;
    NetParams net = NetParams::make_mlp(
        3, {4}, classify ? 3 : 2,
        classify ? OutputKind::softmax : OutputKind::linear, 0.2, rng);
    std::vector<double> x(3), cot(classify ? 3 : 2);
    for (auto& v : x) v = rng.normal();
    for (auto& v : cot) v = rng.normal();
    const DropoutMask mask = c % 3 == 0 ? sample_mask(net, rng) : ones_mask(net);

    const Trace trace = forward_trace(net, x, &mask);
    CHECK(trace.output == forward(net, x, &mask));
    const auto analytic = backward(net, trace, cot, &mask);
    const auto numeric = fd_grad(net, [&](const NetParams& n) {
      const auto o = forward(n, x, &mask);
      double acc = 0.0;
      for (std::size_t i = 0; i < o.size(); ++i) acc += cot[i] * o[i];
      return acc;
    });
    worst = std::max(worst, max_rel_err(analytic, numeric));
  }
  CHECK(worst <= 1e-4);
}
