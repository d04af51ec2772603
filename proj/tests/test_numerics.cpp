#include <doctest.h>

#include <cmath>

#include "fedgdve/numerics.hpp"

using namespace fedgdve;

TEST_SUITE("numerics") {

TEST_CASE("matmul") {
  DenseMatrix m(3, 2);
  m << 1, 2, 3, 4, 5, 6;
  CHECK(matmul(DenseMatrix::Identity(3, 3), m) == m);

  DenseMatrix a(2, 2), b(2, 1);
  a << 1, 2, 3, 4;
  b << 5, 6;
  const DenseMatrix c = matmul(a, b);
  CHECK(c(0, 0) == 17.0);
  CHECK(c(1, 0) == 39.0);

  CHECK_THROWS_AS(matmul(a, m), NumericError);
}

TEST_CASE("matmul matches transpose-order recomputation") {
  Rng rng(3);
  DenseMatrix a(7, 5), b(5, 3);
  for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = rng.normal();
  for (Eigen::Index k = 0; k < b.size(); ++k) b.data()[k] = rng.normal();
  const DenseMatrix c = matmul(a, b);
  // (B^T A^T)^T by explicit loops.
  for (int r = 0; r < 7; ++r) {
    for (int col = 0; col < 3; ++col) {
      double s = 0.0;
      for (int k = 0; k < 5; ++k) s += b.transpose()(col, k) * a.transpose()(k, r);
      CHECK(std::abs(c(r, col) - s) < 1e-12);
    }
  }
}

TEST_CASE("activations") {
  CHECK(sigmoid(0.0) == 0.5);
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    const double x = 20.0 * rng.uniform() - 10.0;
    CHECK(sigmoid(x) + sigmoid(-x) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(log_sigmoid(x) == doctest::Approx(std::log(sigmoid(x))).epsilon(1e-12));
  }
  CHECK(std::isfinite(log_sigmoid(-800.0)));
  CHECK(log_sigmoid(-800.0) == doctest::Approx(-800.0));
  CHECK(leaky_relu(-2.0, 0.2) == doctest::Approx(-0.4));
  CHECK(leaky_relu(3.0, 0.2) == 3.0);
  CHECK(leaky_relu_grad(-1.0, 0.2) == 0.2);
  CHECK(leaky_relu_grad(1.0, 0.2) == 1.0);
}

TEST_CASE("grad_check") {
  const std::vector<double> x{3.0};
  const std::vector<double> g{6.0};
  CHECK(grad_check([](std::span<const double> p) { return p[0] * p[0]; }, g, x, 1e-5) < 1e-8);

  const std::vector<double> z{0.0};
  const std::vector<double> gs{0.25};
  CHECK(grad_check([](std::span<const double> p) { return sigmoid(p[0]); }, gs, z, 1e-5) < 1e-8);

  // A wrong gradient is reported.
  const std::vector<double> bad{5.0};
  CHECK(grad_check([](std::span<const double> p) { return p[0] * p[0]; }, bad, x, 1e-5) > 0.1);

  const std::vector<double> pt{1.0, 2.0};
  const std::vector<double> an{0.0, 0.0};
  try {
    grad_check([](std::span<const double> p) { return p[1] > 2.0 + 1e-7 ? std::log(-1.0) : 0.0; }, an, pt, 1e-5);
    FAIL("expected an error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
  }
  CHECK_THROWS_AS(grad_check([](std::span<const double>) { return 0.0; }, an, pt, 0.0), NumericError);
}

TEST_CASE("rng reproducibility") {
  Rng a(42), b(42), c(43);
  bool all_equal = true;
  bool any_diff = false;
  for (int k = 0; k < 1000000; ++k) {
    const auto x = a.next_u64();
    all_equal = all_equal && x == b.next_u64();
    any_diff = any_diff || x != c.next_u64();
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("rng streams and state") {
  const Rng root(7);
  Rng c1 = root.child(1), c1b = root.child(1), c2 = root.child(2);
  CHECK(c1.next_u64() == c1b.next_u64());
  CHECK(root.child(1).next_u64() != c2.next_u64());

  Rng r(11);
  for (int k = 0; k < 17; ++k) r.uniform();
  Rng copy = Rng::deserialize(r.serialize());
  CHECK(copy == r);
  CHECK(copy.next_u64() == r.next_u64());
  CHECK_THROWS_AS(Rng::deserialize("garbage"), NumericError);
}

TEST_CASE("rng distributions") {
  Rng r(5);
  const int n = 200000;
  double s = 0.0, s2 = 0.0, g = 0.0;
  std::vector<int> counts(7, 0);
  for (int k = 0; k < n; ++k) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
    g += r.gamma(2.5);
    const auto idx = r.uniform_index(7);
    REQUIRE(idx < 7);
    ++counts[idx];
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
  CHECK(std::abs(g / n - 2.5) < 0.03);
  for (int c : counts) CHECK(std::abs(c / double(n) - 1.0 / 7.0) < 0.005);
  // Shape below one takes the boosted path.
  double gs = 0.0;
  for (int k = 0; k < n; ++k) gs += r.gamma(0.3);
  CHECK(std::abs(gs / n - 0.3) < 0.01);
}

}  // TEST_SUITE
