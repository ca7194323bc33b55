#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace revar {

// Error categories surfaced by the library. The CLI maps these to exit codes.
struct ParamError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct SingularityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Seedable 64-bit generator (xoshiro256** seeded via splitmix64) with
// explicit sub-streams. Identical (seed, stream) gives identical sequences
// on every platform; the distribution transforms below are hand-rolled so
// no libstdc++/libc++ divergence can creep in.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  // Standard normal via Box-Muller; consumes exactly two uniforms per draw.
  double normal();
  double normal(double mean, double std);

  // Independent generator derived from this Rng's original (seed, stream).
  Rng substream(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t state_[4];
  std::uint64_t seed_;
  std::uint64_t stream_;
};

// n i.i.d. draws from Normal(mean, std^2). std must be >= 0.
std::vector<double> gaussian_sample(Rng& rng, double mean, double std,
                                    std::size_t n);

// Dense row-major matrix. Small on purpose; heavy lifting delegates to Eigen
// inside the .cpp.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
  std::span<double> row(std::size_t r) {
    return {data.data() + r * cols, cols};
  }
};

struct OlsFit {
  std::vector<double> coefficients;  // one per feature column
  double intercept = 0.0;
  double r_squared = 0.0;

  double predict(std::span<const double> x) const;
};

// Ordinary least squares of targets on features plus an intercept column.
// Throws SingularityError naming the offending column when the design is
// rank-deficient. Constant targets (SS_tot == 0) give r_squared = 0.
OlsFit ols_fit(const Matrix& features, std::span<const double> targets);

// Spearman rank correlation with average-rank tie handling.
// Zero rank variance on either side is defined as 0.
double spearman(std::span<const double> a, std::span<const double> b);

// Average ranks (1-based) with ties sharing the mean rank.
std::vector<double> average_ranks(std::span<const double> v);

double mean_of(std::span<const double> v);
double stddev_of(std::span<const double> v);  // population (divide by n)

}  // namespace revar
