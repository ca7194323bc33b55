#include "revar/bilevel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace revar {

namespace {

// Rng sub-stream labels used by the trainer.
constexpr std::uint64_t kStreamClassifierInit = 1;
constexpr std::uint64_t kStreamMetaInit = 2;
constexpr std::uint64_t kStreamShuffle = 3;
constexpr std::uint64_t kStreamMasks = 4;
constexpr std::uint64_t kStreamValOrder = 5;
constexpr std::uint64_t kStreamHistory = 6;
constexpr std::uint64_t kStreamUnlabeled = 7;

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j =
        static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
  }
}

Batch take_batch(const Batch& src, const std::vector<std::size_t>& idx,
                 std::size_t begin, std::size_t count) {
  Batch b;
  b.x = Matrix(count, src.x.cols);
  if (src.is_classification())
    b.y_class.resize(count);
  else
    b.y_real.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = idx[begin + k];
    std::copy(src.x.row(i).begin(), src.x.row(i).end(), b.x.row(k).begin());
    if (src.is_classification())
      b.y_class[k] = src.y_class[i];
    else
      b.y_real[k] = src.y_real[i];
  }
  return b;
}

std::size_t num_classes(const Batch& b) {
  int m = 0;
  for (int y : b.y_class) m = std::max(m, y);
  return static_cast<std::size_t>(m) + 1;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Cycles batches out of a seeded shuffle, wrapping around.
class BatchCycler {
 public:
  BatchCycler(const Batch& src, std::size_t batch_size, Rng rng)
      : src_(src), batch_size_(std::min(batch_size, src.size())), order_(src.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    shuffle_indices(order_, rng);
  }

  Batch next() {
    Batch b;
    b.x = Matrix(batch_size_, src_.x.cols);
    if (src_.is_classification())
      b.y_class.resize(batch_size_);
    else
      b.y_real.resize(batch_size_);
    for (std::size_t k = 0; k < batch_size_; ++k) {
      const std::size_t i = order_[cursor_];
      cursor_ = (cursor_ + 1) % order_.size();
      std::copy(src_.x.row(i).begin(), src_.x.row(i).end(), b.x.row(k).begin());
      if (src_.is_classification())
        b.y_class[k] = src_.y_class[i];
      else
        b.y_real[k] = src_.y_real[i];
    }
    return b;
  }

 private:
  const Batch& src_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

bool uses_meta_net(Method m) {
  return m == Method::revar || m == Method::revar_pv || m == Method::ibr ||
         m == Method::mwn;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::revar: return "revar";
    case Method::revar_pv: return "revar_pv";
    case Method::ibr: return "ibr";
    case Method::mwn: return "mwn";
    case Method::erm: return "erm";
    case Method::vr: return "vr";
    case Method::mbr: return "mbr";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  if (name == "revar") return Method::revar;
  if (name == "revar_pv") return Method::revar_pv;
  if (name == "ibr") return Method::ibr;
  if (name == "mwn") return Method::mwn;
  if (name == "erm") return Method::erm;
  if (name == "vr") return Method::vr;
  if (name == "mbr") return Method::mbr;
  throw ParamError("unknown method: " + name);
}

void TrainConfig::validate() const {
  if (lr_classifier <= 0.0 || lr_meta <= 0.0)
    throw ParamError("TrainConfig: learning rates must be > 0");
  if (meta_interval < 1) throw ParamError("TrainConfig: meta_interval >= 1");
  if (epochs < 0) throw ParamError("TrainConfig: epochs >= 0");
  if (epochs > 0 && warm_start_epochs >= epochs)
    throw ParamError("TrainConfig: warm_start_epochs < epochs");
  if (batch_train < 1 || batch_val < 1)
    throw ParamError("TrainConfig: batch sizes >= 1");
  if (weight_decay < 0.0 || meta_weight_decay < 0.0)
    throw ParamError("TrainConfig: weight decay must be >= 0");
  mc.validate();
}

DataSplits splits_from_bundle(const SyntheticBundle& bundle) {
  DataSplits d;
  d.train.x = bundle.train.x_observed;
  d.train.y_real = bundle.train.y;
  d.val.x = bundle.val.x_observed;
  d.val.y_real = bundle.val.y;
  d.unlabeled = bundle.test.x_observed;
  return d;
}

std::vector<double> meta_input(const MetaNet& meta, const NetParams& theta,
                               const Batch& batch, std::size_t i) {
  if (meta.conditioning == MetaConditioning::instance) {
    auto row = batch.x.row(i);
    return {row.begin(), row.end()};
  }
  return {example_loss(theta, batch, i)};
}

NetParams inner_step(const NetParams& theta, const Batch& batch,
                     const MetaNet& meta, double lr) {
  if (batch.size() == 0) throw ParamError("inner_step: empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> step(theta.param_count(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double w = weight_of(meta, meta_input(meta, theta, batch, i));
    const auto gi = example_grad(theta, batch, i, w * inv_n);
    for (std::size_t j = 0; j < step.size(); ++j) step[j] += gi[j];
  }
  NetParams theta_hat = theta;
  theta_hat.axpy(-lr, step);
  return theta_hat;
}

std::vector<double> meta_gradient(const NetParams& theta,
                                  const Batch& batch_train,
                                  const Batch& batch_val, const MetaNet& meta,
                                  double lr_inner, double reg_weight,
                                  const MaskSet& masks,
                                  const Matrix* unlabeled) {
  if (batch_train.size() == 0 || batch_val.size() == 0)
    throw ParamError("meta_gradient: empty batch");
  const NetParams theta_hat = inner_step(theta, batch_train, meta, lr_inner);
  const std::vector<double> v =
      unlabeled ? meta_loss_pv_grad(theta_hat, batch_val, *unlabeled,
                                    reg_weight, masks)
                : meta_loss_grad(theta_hat, batch_val, reg_weight, masks);

  const double n = static_cast<double>(batch_train.size());
  std::vector<double> g(meta.net.param_count(), 0.0);
  for (std::size_t i = 0; i < batch_train.size(); ++i) {
    const auto gi = example_grad(theta, batch_train, i, 1.0);
    const double a = dot(v, gi);
    const auto gw = grad_weight(meta, meta_input(meta, theta, batch_train, i));
    const double coef = -(lr_inner / n) * a;
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += coef * gw[j];
  }
  return g;
}

std::vector<double> meta_gradient_fd(const NetParams& theta,
                                     const Batch& batch_train,
                                     const Batch& batch_val,
                                     const MetaNet& meta, double lr_inner,
                                     double reg_weight, const MaskSet& masks,
                                     double step, const Matrix* unlabeled) {
  if (step <= 0.0) throw ParamError("meta_gradient_fd: step must be > 0");
  auto objective = [&](const MetaNet& m) {
    const NetParams th = inner_step(theta, batch_train, m, lr_inner);
    return unlabeled ? meta_loss_pv_with(th, batch_val, *unlabeled, reg_weight,
                                         masks)
                     : meta_loss_with(th, batch_val, reg_weight, masks);
  };
  std::vector<double> flat = meta.net.flatten();
  std::vector<double> g(flat.size());
  MetaNet probe = meta;
  for (std::size_t j = 0; j < flat.size(); ++j) {
    const double orig = flat[j];
    flat[j] = orig + step;
    probe.net.unflatten(flat);
    const double fp = objective(probe);
    flat[j] = orig - step;
    probe.net.unflatten(flat);
    const double fm = objective(probe);
    flat[j] = orig;
    g[j] = (fp - fm) / (2.0 * step);
  }
  probe.net.unflatten(flat);
  return g;
}

Standardizer Standardizer::fit(const Batch& train) {
  Standardizer s;
  const std::size_t d = train.x.cols;
  const std::size_t n = train.x.rows;
  s.x_mean.assign(d, 0.0);
  s.x_std.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.x_mean[j] += train.x.at(i, j);
  for (auto& v : s.x_mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double dx = train.x.at(i, j) - s.x_mean[j];
      s.x_std[j] += dx * dx;
    }
  for (auto& v : s.x_std) {
    v = std::sqrt(v / static_cast<double>(n));
    if (v < 1e-12) v = 1.0;
  }
  if (!train.is_classification()) {
    s.y_mean = mean_of(train.y_real);
    s.y_std = stddev_of(train.y_real);
    if (s.y_std < 1e-12) s.y_std = 1.0;
  }
  return s;
}

void Standardizer::apply_inputs(Matrix& x) const {
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j)
      x.at(i, j) = (x.at(i, j) - x_mean[j]) / x_std[j];
}

void Standardizer::apply(Batch& batch) const {
  apply_inputs(batch.x);
  for (auto& y : batch.y_real) y = (y - y_mean) / y_std;
}

TrainedPair train(const DataSplits& data, const TrainConfig& cfg,
                  const TrainedPair* init) {
  cfg.validate();
  const Batch& tr = data.train;
  const Batch& va = data.val;
  if (tr.size() == 0 || va.size() == 0)
    throw ParamError("train: train and validation splits required");
  const bool classify = tr.is_classification();
  const Method method = cfg.method;
  const bool has_meta = uses_meta_net(method);
  // IBR/MWN drop the variance term by definition.
  const double gamma =
      (method == Method::revar || method == Method::revar_pv ||
       method == Method::vr)
          ? cfg.mc.reg_weight
          : 0.0;

  Rng rng_cls(cfg.seed, kStreamClassifierInit);
  Rng rng_meta_init(cfg.seed, kStreamMetaInit);
  Rng rng_shuffle(cfg.seed, kStreamShuffle);
  Rng rng_masks(cfg.seed, kStreamMasks);
  Rng rng_hist(cfg.seed, kStreamHistory);

  const std::size_t out_dim = classify ? num_classes(tr) : 1;
  NetParams theta = NetParams::make_mlp(
      tr.x.cols, cfg.classifier_hidden, out_dim,
      classify ? OutputKind::softmax : OutputKind::linear,
      cfg.mc.dropout_rate, rng_cls);
  const MetaConditioning cond = method == Method::mwn
                                    ? MetaConditioning::loss_scalar
                                    : MetaConditioning::instance;
  MetaNet meta = MetaNet::make(cond == MetaConditioning::loss_scalar ? 1
                                                                     : tr.x.cols,
                               cfg.meta_hidden, cond, rng_meta_init);
  if (init) {
    theta = init->classifier;
    meta = init->meta;
  }

  TrainedPair out{theta, meta, {}};
  if (cfg.epochs == 0) return out;

  BatchCycler val_batches(va, static_cast<std::size_t>(cfg.batch_val),
                          Rng(cfg.seed, kStreamValOrder));
  const bool use_unlabeled =
      method == Method::revar_pv && data.unlabeled.rows > 0;
  std::vector<std::size_t> unlabeled_order;
  std::size_t unlabeled_cursor = 0;
  Rng rng_unlabeled(cfg.seed, kStreamUnlabeled);
  if (use_unlabeled) {
    unlabeled_order.resize(data.unlabeled.rows);
    std::iota(unlabeled_order.begin(), unlabeled_order.end(), std::size_t{0});
    shuffle_indices(unlabeled_order, rng_unlabeled);
  }

  std::vector<double> v_theta(theta.param_count(), 0.0);
  std::vector<double> v_meta(meta.net.param_count(), 0.0);

  // Tail average of the meta parameters: the stochastic meta updates reach a
  // noise equilibrium, and averaging the second half of the run keeps the
  // learned weight function while washing that noise out.
  std::vector<double> meta_avg(meta.net.param_count(), 0.0);
  std::size_t meta_avg_count = 0;
  const int avg_from_epoch = (cfg.warm_start_epochs + cfg.epochs) / 2;

  std::vector<std::size_t> idx(tr.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_train);

  long t = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_indices(idx, rng_shuffle);
    const bool weighted_phase = epoch > cfg.warm_start_epochs;
    std::vector<double> epoch_weights;

    for (std::size_t begin = 0; begin < tr.size(); begin += bs) {
      const std::size_t count = std::min(bs, tr.size() - begin);
      Batch batch = take_batch(tr, idx, begin, count);
      ++t;

      if (has_meta && weighted_phase && t % cfg.meta_interval == 0) {
        Batch bv = val_batches.next();
        MaskSet masks = sample_masks(theta, cfg.mc, rng_masks);
        Matrix ub;
        const Matrix* ub_ptr = nullptr;
        if (use_unlabeled) {
          const std::size_t m = std::min<std::size_t>(
              static_cast<std::size_t>(cfg.batch_val), unlabeled_order.size());
          ub = Matrix(m, data.unlabeled.cols);
          for (std::size_t k = 0; k < m; ++k) {
            const std::size_t i = unlabeled_order[unlabeled_cursor];
            unlabeled_cursor = (unlabeled_cursor + 1) % unlabeled_order.size();
            std::copy(data.unlabeled.row(i).begin(),
                      data.unlabeled.row(i).end(), ub.row(k).begin());
          }
          ub_ptr = &ub;
        }
        std::vector<double> g_meta =
            meta_gradient(theta, batch, bv, meta, cfg.lr_classifier, gamma,
                          masks, ub_ptr);
        const std::vector<double> flat = meta.net.flatten();
        for (std::size_t j = 0; j < g_meta.size(); ++j)
          v_meta[j] = cfg.momentum * v_meta[j] +
                      (g_meta[j] + cfg.meta_weight_decay * flat[j]);
        meta.net.axpy(-cfg.lr_meta, v_meta);
        if (epoch > avg_from_epoch) {
          const std::vector<double> now = meta.net.flatten();
          for (std::size_t j = 0; j < now.size(); ++j) meta_avg[j] += now[j];
          ++meta_avg_count;
        }
      }

      // Instance weights for this step.
      std::vector<double> w(count, 1.0);
      if (has_meta && weighted_phase) {
        for (std::size_t i = 0; i < count; ++i)
          w[i] = weight_of(meta, meta_input(meta, theta, batch, i));
      } else if (method == Method::mbr && weighted_phase) {
        if (!classify)
          throw ParamError("mbr: margin reweighting needs a classifier");
        for (std::size_t i = 0; i < count; ++i) {
          const auto p = forward(theta, batch.x.row(i));
          const double p_true = p[static_cast<std::size_t>(batch.y_class[i])];
          double p_other = 0.0;
          for (std::size_t c = 0; c < p.size(); ++c)
            if (c != static_cast<std::size_t>(batch.y_class[i]))
              p_other = std::max(p_other, p[c]);
          w[i] = std::exp(-(p_true - p_other) / cfg.mbr_temperature);
        }
        const double wm = mean_of(w);
        for (auto& wi : w) wi /= wm;  // mean-1 per batch
      }
      epoch_weights.insert(epoch_weights.end(), w.begin(), w.end());

      const double inv_n = 1.0 / static_cast<double>(count);
      std::vector<double> g(theta.param_count(), 0.0);
      for (std::size_t i = 0; i < count; ++i) {
        const auto gi = example_grad(theta, batch, i, w[i] * inv_n);
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += gi[j];
      }
      if (method == Method::vr && gamma != 0.0) {
        MaskSet masks = sample_masks(theta, cfg.mc, rng_masks);
        for (std::size_t i = 0; i < count; ++i) {
          const auto gv = dropout_variance_grad(theta, batch.x.row(i), masks);
          for (std::size_t j = 0; j < g.size(); ++j)
            g[j] += gamma * inv_n * gv[j];
        }
      }
      const std::vector<double> flat = theta.flatten();
      for (std::size_t j = 0; j < g.size(); ++j)
        v_theta[j] = cfg.momentum * v_theta[j] +
                     (g[j] + cfg.weight_decay * flat[j]);
      theta.axpy(-cfg.lr_classifier, v_theta);
    }

    // Epoch bookkeeping on the full splits.
    double train_loss = 0.0;
    for (std::size_t i = 0; i < tr.size(); ++i)
      train_loss += example_loss(theta, tr, i);
    train_loss /= static_cast<double>(tr.size());
    if (!std::isfinite(train_loss))
      throw DivergenceError("train: non-finite training loss at epoch " +
                            std::to_string(epoch));
    const MaskSet hist_masks = sample_masks(theta, cfg.mc, rng_hist);
    const double ml = meta_loss_with(theta, va, gamma, hist_masks);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_loss;
    rec.meta_loss = ml;
    rec.weight_mean = mean_of(epoch_weights);
    rec.weight_sd = stddev_of(epoch_weights);
    out.history.push_back(rec);
  }

  if (meta_avg_count > 0) {
    for (auto& v : meta_avg) v /= static_cast<double>(meta_avg_count);
    meta.net.unflatten(meta_avg);
  }
  out.classifier = std::move(theta);
  out.meta = std::move(meta);
  return out;
}

TrainedPair train(const SyntheticBundle& bundle, const TrainConfig& cfg) {
  DataSplits d = splits_from_bundle(bundle);
  const Standardizer s = Standardizer::fit(d.train);
  s.apply(d.train);
  s.apply(d.val);
  s.apply_inputs(d.unlabeled);
  return train(d, cfg);
}

TrainedPair train_baseline(const DataSplits& data, const TrainConfig& cfg) {
  if (cfg.method == Method::revar || cfg.method == Method::revar_pv)
    throw ParamError("train_baseline: use train() for revar methods");
  return train(data, cfg);
}

}  // namespace revar
