#include "fedgdve/numerics.hpp"

#include <cmath>
#include <sstream>

namespace fedgdve {

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw NumericError("matmul: shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                       " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  DenseMatrix out = a * b;
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  if (x >= 0.0) {
    return -std::log1p(std::exp(-x));
  }
  return x - std::log1p(std::exp(x));
}

double leaky_relu(double x, double slope) { return x >= 0.0 ? x : slope * x; }

double leaky_relu_grad(double x, double slope) { return x >= 0.0 ? 1.0 : slope; }

bool all_finite(const DenseMatrix& m) { return m.allFinite(); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) {
    throw NumericError("Rng::uniform_index: empty range");
  }
  // Lemire-style rejection keeps the draw unbiased and platform independent.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) {
    x = engine_();
  }
  return x % n;
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  // Box-Muller; one value per call keeps the state a pure function of draws.
  double u1 = uniform();
  while (u1 <= 0.0) {
    u1 = uniform();
  }
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::gamma(double shape) {
  if (!(shape > 0.0)) {
    throw NumericError("Rng::gamma: shape must be positive");
  }
  if (shape < 1.0) {
    // Boost a shape < 1 draw from shape + 1.
    const double u = std::max(uniform(), 1e-300);
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  // Marsaglia-Tsang.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) {
      continue;
    }
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) {
      return d * v;
    }
    if (std::log(std::max(u, 1e-300)) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
      return d * v;
    }
  }
}

bool Rng::bernoulli(double p) { return uniform() < p; }

Rng Rng::child(std::uint64_t stream) const { return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x51ed270b27ULL))); }

std::string Rng::serialize() const {
  std::ostringstream os;
  os << seed_ << ' ' << engine_;
  return os.str();
}

Rng Rng::deserialize(const std::string& text) {
  std::istringstream is(text);
  Rng r;
  is >> r.seed_ >> r.engine_;
  if (!is) {
    throw NumericError("Rng::deserialize: malformed state");
  }
  return r;
}

double grad_check(const std::function<double(std::span<const double>)>& f, std::span<const double> analytic_grad,
                  std::span<const double> point, double eps) {
  if (!(eps > 0.0)) {
    throw NumericError("grad_check: eps must be positive");
  }
  if (analytic_grad.size() != point.size()) {
    throw NumericError("grad_check: gradient and point sizes differ");
  }
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double fp = f(x);
    x[i] = orig - eps;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("grad_check: non-finite objective at coordinate " + std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::abs(numeric - analytic_grad[i]) / std::max(1.0, std::abs(analytic_grad[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace fedgdve
