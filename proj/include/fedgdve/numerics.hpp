#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fedgdve {

/// Row-major dense matrix of 64-bit reals. Embedding tables are stored one
/// node per row.
using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using DenseVector = Eigen::VectorXd;

/// Raised when a numeric routine receives operands with incompatible shapes
/// or produces a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

double sigmoid(double x);
double leaky_relu(double x, double slope);
/// Derivative of leaky_relu at x (the kink at 0 takes the right-hand slope).
double leaky_relu_grad(double x, double slope);

/// Numerically stable ln(sigmoid(x)).
double log_sigmoid(double x);

bool all_finite(const DenseMatrix& m);

/// Deterministic generator. Child streams are derived from (seed, stream id)
/// with a SplitMix64 mix so that clients and purposes (negative sampling,
/// Bernoulli masks, initialization) never share a stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);
  double uniform();
  double normal();
  double gamma(double shape);
  bool bernoulli(double p);

  template <class It>
  void shuffle(It first, It last) {
    for (auto n = last - first; n > 1; --n) {
      auto j = static_cast<decltype(n)>(uniform_index(static_cast<std::uint64_t>(n)));
      std::iter_swap(first + (n - 1), first + j);
    }
  }

  /// Independent generator for the given stream id.
  Rng child(std::uint64_t stream) const;

  std::string serialize() const;
  static Rng deserialize(const std::string& text);

  friend bool operator==(const Rng& a, const Rng& b) { return a.seed_ == b.seed_ && a.engine_ == b.engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Named stream ids used with Rng::child.
enum class Stream : std::uint64_t {
  kInit = 1,
  kNegatives = 2,
  kMask = 3,
  kShuffle = 4,
  kPartition = 5,
  kHoldout = 6,
  kClientBase = 1000,
};

inline Rng child(const Rng& parent, Stream s) { return parent.child(static_cast<std::uint64_t>(s)); }

/// Central-difference gradient check. Returns the maximum over coordinates of
/// |numeric - analytic| / max(1, |analytic|).
double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> analytic_grad, std::span<const double> point, double eps = 1e-5);

}  // namespace fedgdve
