#include "revar/numkit.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace revar {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream) {
  // Mix stream into the seeding sequence so sub-streams decorrelate.
  std::uint64_t s = seed ^ (0xD1B54A32D192ED03ULL * (stream + 1));
  for (auto& word : state_) word = splitmix64(s);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // u1 in (0, 1] so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::normal(double mean, double std) { return mean + std * normal(); }

Rng Rng::substream(std::uint64_t stream) const { return Rng(seed_, stream); }

std::vector<double> gaussian_sample(Rng& rng, double mean, double std,
                                    std::size_t n) {
  if (std < 0.0) throw ParamError("gaussian_sample: negative std");
  std::vector<double> out(n);
  for (auto& v : out) v = rng.normal(mean, std);
  return out;
}

double OlsFit::predict(std::span<const double> x) const {
  double y = intercept;
  for (std::size_t j = 0; j < coefficients.size(); ++j)
    y += coefficients[j] * x[j];
  return y;
}

OlsFit ols_fit(const Matrix& features, std::span<const double> targets) {
  const std::size_t n = features.rows;
  const std::size_t p = features.cols;
  if (targets.size() != n)
    throw ParamError("ols_fit: feature/target row mismatch");
  if (n < p + 1) throw ParamError("ols_fit: fewer rows than parameters");

  // Design = [1 | features]; intercept always included.
  Eigen::MatrixXd design(n, p + 1);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    for (std::size_t j = 0; j < p; ++j) design(i, j + 1) = features.at(i, j);
    y(static_cast<Eigen::Index>(i)) = targets[i];
  }

  // Equilibrate columns so the rank test compares directions, not the wildly
  // different raw scales the weight features can have.
  Eigen::VectorXd col_scale(p + 1);
  for (std::size_t j = 0; j <= p; ++j) {
    const double norm = design.col(static_cast<Eigen::Index>(j)).norm();
    col_scale(static_cast<Eigen::Index>(j)) = norm > 0.0 ? norm : 1.0;
    design.col(static_cast<Eigen::Index>(j)) /=
        col_scale(static_cast<Eigen::Index>(j));
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(p + 1)) {
    // Report the first original column that fell outside the pivot set.
    const auto& perm = qr.colsPermutation().indices();
    std::vector<bool> kept(p + 1, false);
    for (Eigen::Index k = 0; k < qr.rank(); ++k) kept[perm(k)] = true;
    std::size_t offender = 0;
    for (std::size_t j = 0; j <= p; ++j)
      if (!kept[j]) {
        offender = j;
        break;
      }
    const std::string name =
        offender == 0 ? "intercept" : "column " + std::to_string(offender - 1);
    throw SingularityError("ols_fit: rank-deficient design (" + name + ")");
  }

  const Eigen::VectorXd beta_scaled = qr.solve(y);
  const Eigen::VectorXd beta =
      beta_scaled.array() / col_scale.array();  // undo the equilibration

  OlsFit fit;
  fit.intercept = beta(0);
  fit.coefficients.assign(beta.data() + 1, beta.data() + 1 + p);

  const double y_mean = y.mean();
  const Eigen::VectorXd resid = y - design * beta_scaled;
  const double ss_res = resid.squaredNorm();
  const double ss_tot = (y.array() - y_mean).matrix().squaredNorm();
  fit.r_squared = ss_tot == 0.0 ? 0.0 : 1.0 - ss_res / ss_tot;
  return fit;
}

std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ParamError("spearman: length mismatch");
  if (a.size() < 3) throw ParamError("spearman: need at least 3 points");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double ma = mean_of(ra);
  const double mb = mean_of(rb);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - ma;
    const double db = rb[i] - mb;
    sxy += da * db;
    sxx += da * da;
    syy += db * db;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
}

double stddev_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace revar
