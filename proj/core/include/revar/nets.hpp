#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "revar/numkit.hpp"

namespace revar {

enum class OutputKind { linear, softmax };

// Bernoulli(keep_prob) mask over hidden-unit activations, one vector per
// hidden layer. Raw masks, no inverted rescaling.
struct DropoutMask {
  std::vector<std::vector<std::uint8_t>> hidden;
  double keep_prob = 1.0;
};

// Plain fully connected net: ReLU hidden layers, linear or softmax head.
// weights[l] is [out x in]; flattened parameter order is, per layer,
// weight rows then bias.
struct NetParams {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
  OutputKind output_kind = OutputKind::linear;
  double dropout_rate = 0.0;

  std::size_t num_layers() const { return weights.size(); }
  std::size_t input_dim() const { return weights.front().cols; }
  std::size_t output_dim() const { return weights.back().rows; }
  std::size_t param_count() const;

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  void axpy(double alpha, std::span<const double> direction);  // p += a*d

  // He-style uniform fan-in init.
  static NetParams make_mlp(std::size_t input, const std::vector<int>& hidden,
                            std::size_t output, OutputKind kind,
                            double dropout_rate, Rng& rng);
};

DropoutMask ones_mask(const NetParams& net);
DropoutMask sample_mask(const NetParams& net, Rng& rng);

// Forward pass; masked hidden units contribute zero. Softmax head returns a
// probability vector (max-subtracted for overflow safety).
std::vector<double> forward(const NetParams& net, std::span<const double> x,
                            const DropoutMask* mask = nullptr);

// Squared error 0.5*(f(x)-y)^2 for the linear head (scalar output).
double loss(const NetParams& net, std::span<const double> x, double y);
// Cross-entropy -log p_y for the softmax head.
double loss(const NetParams& net, std::span<const double> x, int y);

// Exact gradient of scale * loss w.r.t. the flattened parameters.
std::vector<double> grad(const NetParams& net, std::span<const double> x,
                         double y, double scale,
                         const DropoutMask* mask = nullptr);
std::vector<double> grad(const NetParams& net, std::span<const double> x,
                         int y, double scale,
                         const DropoutMask* mask = nullptr);

// Activation trace for vector-Jacobian products against arbitrary output
// cotangents (the variance regularizer needs these).
struct Trace {
  std::vector<std::vector<double>> post;  // post[0] = input, post[l] masked act
  std::vector<std::vector<double>> pre;   // pre-activations per layer
  std::vector<double> output;             // head output (probs if softmax)
};

Trace forward_trace(const NetParams& net, std::span<const double> x,
                    const DropoutMask* mask = nullptr);

// Gradient w.r.t. flattened parameters of <out_cot, output>. For a softmax
// head the cotangent is taken against the probabilities.
std::vector<double> backward(const NetParams& net, const Trace& trace,
                             std::span<const double> out_cot,
                             const DropoutMask* mask = nullptr);

}  // namespace revar
