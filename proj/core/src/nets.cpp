#include "revar/nets.hpp"

#include <cmath>

namespace revar {

namespace {

void relu_inplace(std::vector<double>& v) {
  for (auto& x : v)
    if (x < 0.0) x = 0.0;
}

std::vector<double> softmax(std::span<const double> z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

std::vector<double> affine(const Matrix& w, const std::vector<double>& b,
                           std::span<const double> x) {
  std::vector<double> z(w.rows);
  for (std::size_t r = 0; r < w.rows; ++r) {
    double acc = b[r];
    const double* wr = w.data.data() + r * w.cols;
    for (std::size_t c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
    z[r] = acc;
  }
  return z;
}

// Backprop from a seed gradient on the output-layer pre-activations.
std::vector<double> backward_from_dz(const NetParams& net, const Trace& trace,
                                     std::vector<double> dz,
                                     const DropoutMask* mask) {
  const std::size_t n_layers = net.num_layers();
  std::vector<double> out(net.param_count(), 0.0);

  // Flat offsets of each layer's block.
  std::vector<std::size_t> offset(n_layers);
  std::size_t off = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    offset[l] = off;
    off += net.weights[l].rows * net.weights[l].cols + net.biases[l].size();
  }

  for (std::size_t li = n_layers; li-- > 0;) {
    const Matrix& w = net.weights[li];
    const auto& input = trace.post[li];
    double* gw = out.data() + offset[li];
    double* gb = gw + w.rows * w.cols;
    for (std::size_t r = 0; r < w.rows; ++r) {
      const double d = dz[r];
      double* gwr = gw + r * w.cols;
      for (std::size_t c = 0; c < w.cols; ++c) gwr[c] += d * input[c];
      gb[r] += d;
    }
    if (li == 0) break;
    // da for the layer below, then through mask and ReLU.
    std::vector<double> da(w.cols, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r) {
      const double d = dz[r];
      const double* wr = w.data.data() + r * w.cols;
      for (std::size_t c = 0; c < w.cols; ++c) da[c] += d * wr[c];
    }
    const auto& pre = trace.pre[li - 1];
    dz.assign(w.cols, 0.0);
    for (std::size_t c = 0; c < w.cols; ++c) {
      double g = da[c];
      if (mask && !mask->hidden[li - 1][c]) g = 0.0;
      if (pre[c] <= 0.0) g = 0.0;
      dz[c] = g;
    }
  }
  return out;
}

}  // namespace

std::size_t NetParams::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    n += weights[l].rows * weights[l].cols + biases[l].size();
  return n;
}

std::vector<double> NetParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    flat.insert(flat.end(), weights[l].data.begin(), weights[l].data.end());
    flat.insert(flat.end(), biases[l].begin(), biases[l].end());
  }
  return flat;
}

void NetParams::unflatten(std::span<const double> flat) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    std::copy(flat.begin() + off, flat.begin() + off + weights[l].data.size(),
              weights[l].data.begin());
    off += weights[l].data.size();
    std::copy(flat.begin() + off, flat.begin() + off + biases[l].size(),
              biases[l].begin());
    off += biases[l].size();
  }
  if (off != flat.size()) throw ParamError("unflatten: size mismatch");
}

void NetParams::axpy(double alpha, std::span<const double> direction) {
  std::size_t off = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (auto& v : weights[l].data) v += alpha * direction[off++];
    for (auto& v : biases[l]) v += alpha * direction[off++];
  }
  if (off != direction.size()) throw ParamError("axpy: size mismatch");
}

NetParams NetParams::make_mlp(std::size_t input, const std::vector<int>& hidden,
                              std::size_t output, OutputKind kind,
                              double dropout_rate, Rng& rng) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ParamError("make_mlp: dropout_rate must be in [0,1)");
  NetParams net;
  net.output_kind = kind;
  net.dropout_rate = dropout_rate;
  std::size_t in = input;
  auto add_layer = [&](std::size_t out_dim) {
    Matrix w(out_dim, in);
    const double limit = std::sqrt(6.0 / static_cast<double>(in));
    for (auto& v : w.data) v = (2.0 * rng.uniform() - 1.0) * limit;
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(out_dim, 0.0);
    in = out_dim;
  };
  for (int h : hidden) add_layer(static_cast<std::size_t>(h));
  add_layer(output);
  return net;
}

DropoutMask ones_mask(const NetParams& net) {
  DropoutMask m;
  m.keep_prob = 1.0;
  for (std::size_t l = 0; l + 1 < net.num_layers(); ++l)
    m.hidden.emplace_back(net.weights[l].rows, std::uint8_t{1});
  return m;
}

DropoutMask sample_mask(const NetParams& net, Rng& rng) {
  DropoutMask m;
  m.keep_prob = 1.0 - net.dropout_rate;
  for (std::size_t l = 0; l + 1 < net.num_layers(); ++l) {
    std::vector<std::uint8_t> layer(net.weights[l].rows);
    for (auto& bit : layer)
      bit = rng.uniform() < m.keep_prob ? std::uint8_t{1} : std::uint8_t{0};
    m.hidden.push_back(std::move(layer));
  }
  return m;
}

Trace forward_trace(const NetParams& net, std::span<const double> x,
                    const DropoutMask* mask) {
  if (x.size() != net.input_dim())
    throw ParamError("forward: input dimension mismatch");
  Trace t;
  t.post.emplace_back(x.begin(), x.end());
  const std::size_t n_layers = net.num_layers();
  for (std::size_t l = 0; l < n_layers; ++l) {
    auto z = affine(net.weights[l], net.biases[l], t.post.back());
    if (l + 1 < n_layers) {
      t.pre.push_back(z);
      relu_inplace(z);
      if (mask) {
        const auto& bits = mask->hidden[l];
        for (std::size_t i = 0; i < z.size(); ++i)
          if (!bits[i]) z[i] = 0.0;
      }
      t.post.push_back(std::move(z));
    } else {
      t.output = net.output_kind == OutputKind::softmax ? softmax(z)
                                                        : std::move(z);
    }
  }
  return t;
}

std::vector<double> forward(const NetParams& net, std::span<const double> x,
                            const DropoutMask* mask) {
  return forward_trace(net, x, mask).output;
}

double loss(const NetParams& net, std::span<const double> x, double y) {
  if (net.output_kind != OutputKind::linear || net.output_dim() != 1)
    throw ParamError("loss: real target needs a scalar linear head");
  const double f = forward(net, x)[0];
  return 0.5 * (f - y) * (f - y);
}

double loss(const NetParams& net, std::span<const double> x, int y) {
  if (net.output_kind != OutputKind::softmax)
    throw ParamError("loss: class target needs a softmax head");
  if (y < 0 || static_cast<std::size_t>(y) >= net.output_dim())
    throw ParamError("loss: class index out of range");
  const auto p = forward(net, x);
  return -std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));
}

std::vector<double> grad(const NetParams& net, std::span<const double> x,
                         double y, double scale, const DropoutMask* mask) {
  if (net.output_kind != OutputKind::linear || net.output_dim() != 1)
    throw ParamError("grad: real target needs a scalar linear head");
  Trace t = forward_trace(net, x, mask);
  std::vector<double> dz{scale * (t.output[0] - y)};
  return backward_from_dz(net, t, std::move(dz), mask);
}

std::vector<double> grad(const NetParams& net, std::span<const double> x,
                         int y, double scale, const DropoutMask* mask) {
  if (net.output_kind != OutputKind::softmax)
    throw ParamError("grad: class target needs a softmax head");
  if (y < 0 || static_cast<std::size_t>(y) >= net.output_dim())
    throw ParamError("grad: class index out of range");
  Trace t = forward_trace(net, x, mask);
  std::vector<double> dz(t.output.begin(), t.output.end());
  dz[static_cast<std::size_t>(y)] -= 1.0;
  for (auto& v : dz) v *= scale;
  return backward_from_dz(net, t, std::move(dz), mask);
}

std::vector<double> backward(const NetParams& net, const Trace& trace,
                             std::span<const double> out_cot,
                             const DropoutMask* mask) {
  std::vector<double> dz(out_cot.begin(), out_cot.end());
  if (net.output_kind == OutputKind::softmax) {
    const auto& p = trace.output;
    double dot = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) dot += out_cot[i] * p[i];
    for (std::size_t i = 0; i < p.size(); ++i)
      dz[i] = p[i] * (out_cot[i] - dot);
  }
  return backward_from_dz(net, trace, std::move(dz), mask);
}

}  // namespace revar
