#include "revar/mcvar.hpp"

#include <cmath>

namespace revar {

void McConfig::validate() const {
  if (k_samples < 2) throw ParamError("McConfig: k_samples must be >= 2");
  if (dropout_rate <= 0.0 || dropout_rate >= 1.0)
    throw ParamError("McConfig: dropout_rate must be in (0,1)");
  if (reg_weight < 0.0) throw ParamError("McConfig: reg_weight must be >= 0");
}

double example_loss(const NetParams& net, const Batch& batch, std::size_t i) {
  return batch.is_classification() ? loss(net, batch.x.row(i), batch.y_class[i])
                                   : loss(net, batch.x.row(i), batch.y_real[i]);
}

std::vector<double> example_grad(const NetParams& net, const Batch& batch,
                                 std::size_t i, double scale) {
  return batch.is_classification()
             ? grad(net, batch.x.row(i), batch.y_class[i], scale)
             : grad(net, batch.x.row(i), batch.y_real[i], scale);
}

MaskSet sample_masks(const NetParams& net, const McConfig& cfg, Rng& rng) {
  cfg.validate();
  NetParams probe = net;  // mask shape only
  probe.dropout_rate = cfg.dropout_rate;
  MaskSet masks;
  masks.reserve(static_cast<std::size_t>(cfg.k_samples));
  for (int k = 0; k < cfg.k_samples; ++k)
    masks.push_back(sample_mask(probe, rng));
  return masks;
}

std::vector<std::vector<double>> mc_outputs(const NetParams& net,
                                            std::span<const double> x,
                                            const McConfig& cfg, Rng& rng) {
  const MaskSet masks = sample_masks(net, cfg, rng);
  std::vector<std::vector<double>> outs;
  outs.reserve(masks.size());
  for (const auto& m : masks) outs.push_back(forward(net, x, &m));
  return outs;
}

namespace {

std::vector<double> mean_output(const std::vector<std::vector<double>>& outs) {
  std::vector<double> mean(outs.front().size(), 0.0);
  for (const auto& o : outs)
    for (std::size_t i = 0; i < o.size(); ++i) mean[i] += o[i];
  for (auto& v : mean) v /= static_cast<double>(outs.size());
  return mean;
}

double variance_of(const std::vector<std::vector<double>>& outs) {
  // Shift by the first sample so identical outputs give exactly zero instead
  // of rounding residue from the mean.
  const auto& ref = outs.front();
  std::vector<double> mean(ref.size(), 0.0);
  for (const auto& o : outs)
    for (std::size_t i = 0; i < o.size(); ++i) mean[i] += o[i] - ref[i];
  for (auto& v : mean) v /= static_cast<double>(outs.size());
  double acc = 0.0;
  for (const auto& o : outs)
    for (std::size_t i = 0; i < o.size(); ++i) {
      const double d = (o[i] - ref[i]) - mean[i];
      acc += d * d;
    }
  return acc / static_cast<double>(outs.size());
}

void add_scaled(std::vector<double>& dst, const std::vector<double>& src,
                double a) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}

}  // namespace

double dropout_variance_with(const NetParams& net, std::span<const double> x,
                             const MaskSet& masks) {
  std::vector<std::vector<double>> outs;
  outs.reserve(masks.size());
  for (const auto& m : masks) outs.push_back(forward(net, x, &m));
  return variance_of(outs);
}

double dropout_variance(const NetParams& net, std::span<const double> x,
                        const McConfig& cfg, Rng& rng) {
  return variance_of(mc_outputs(net, x, cfg, rng));
}

std::vector<double> dropout_variance_grad(const NetParams& net,
                                          std::span<const double> x,
                                          const MaskSet& masks) {
  // d/dtheta (1/K) sum_k ||o_k - obar||^2 = (2/K) sum_k J_k^T (o_k - obar);
  // the obar path cancels because sum_k (o_k - obar) = 0.
  const std::size_t K = masks.size();
  std::vector<Trace> traces;
  traces.reserve(K);
  std::vector<std::vector<double>> outs;
  for (const auto& m : masks) {
    traces.push_back(forward_trace(net, x, &m));
    outs.push_back(traces.back().output);
  }
  const auto mean = mean_output(outs);
  std::vector<double> g(net.param_count(), 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> cot(mean.size());
    for (std::size_t i = 0; i < cot.size(); ++i)
      cot[i] = 2.0 / static_cast<double>(K) * (outs[k][i] - mean[i]);
    add_scaled(g, backward(net, traces[k], cot, &masks[k]), 1.0);
  }
  return g;
}

double meta_loss_with(const NetParams& net, const Batch& val,
                      double reg_weight, const MaskSet& masks) {
  if (val.size() == 0) throw ParamError("meta_loss: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    acc += example_loss(net, val, i);
    if (reg_weight != 0.0)
      acc += reg_weight * dropout_variance_with(net, val.x.row(i), masks);
  }
  return acc / static_cast<double>(val.size());
}

double meta_loss(const NetParams& net, const Batch& val, const McConfig& cfg,
                 Rng& rng) {
  return meta_loss_with(net, val, cfg.reg_weight, sample_masks(net, cfg, rng));
}

std::vector<double> meta_loss_grad(const NetParams& net, const Batch& val,
                                   double reg_weight, const MaskSet& masks) {
  if (val.size() == 0) throw ParamError("meta_loss_grad: empty batch");
  const double inv_n = 1.0 / static_cast<double>(val.size());
  std::vector<double> g(net.param_count(), 0.0);
  for (std::size_t i = 0; i < val.size(); ++i) {
    add_scaled(g, example_grad(net, val, i, inv_n), 1.0);
    if (reg_weight != 0.0)
      add_scaled(g, dropout_variance_grad(net, val.x.row(i), masks),
                 reg_weight * inv_n);
  }
  return g;
}

double meta_loss_pv_with(const NetParams& net, const Batch& labeled,
                         const Matrix& unlabeled, double reg_weight,
                         const MaskSet& masks) {
  if (labeled.size() == 0) throw ParamError("meta_loss_pv: empty labeled set");
  double total = meta_loss_with(net, labeled, reg_weight, masks);
  if (unlabeled.rows > 0) {
    double acc = 0.0;
    for (std::size_t i = 0; i < unlabeled.rows; ++i)
      acc += reg_weight * dropout_variance_with(net, unlabeled.row(i), masks);
    total += acc / static_cast<double>(unlabeled.rows);
  }
  return total;
}

double meta_loss_pv(const NetParams& net, const Batch& labeled,
                    const Matrix& unlabeled, const McConfig& cfg, Rng& rng) {
  return meta_loss_pv_with(net, labeled, unlabeled, cfg.reg_weight,
                           sample_masks(net, cfg, rng));
}

std::vector<double> meta_loss_pv_grad(const NetParams& net,
                                      const Batch& labeled,
                                      const Matrix& unlabeled,
                                      double reg_weight, const MaskSet& masks) {
  std::vector<double> g = meta_loss_grad(net, labeled, reg_weight, masks);
  if (unlabeled.rows > 0 && reg_weight != 0.0) {
    const double inv_n = 1.0 / static_cast<double>(unlabeled.rows);
    for (std::size_t i = 0; i < unlabeled.rows; ++i)
      add_scaled(g, dropout_variance_grad(net, unlabeled.row(i), masks),
                 reg_weight * inv_n);
  }
  return g;
}

double mcd_score(const NetParams& net, std::span<const double> x,
                 const McConfig& cfg, Rng& rng) {
  if (net.output_kind != OutputKind::softmax)
    throw ParamError("mcd_score: unsupported for non-classifier nets");
  const auto mean = mean_output(mc_outputs(net, x, cfg, rng));
  double entropy = 0.0;
  for (double p : mean)
    if (p > 0.0) entropy -= p * std::log(p);
  return entropy;
}

}  // namespace revar
