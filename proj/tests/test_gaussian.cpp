#include <doctest.h>

#include <array>
#include <cmath>

#include "ophmm/errors.hpp"
#include "ophmm/gaussian.hpp"
#include "oracles.hpp"

using ophmm::Gaussian;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Gaussian bivariate() {
  MatrixXd s(2, 2);
  s << 2.0, 0.5, 0.5, 1.0;
  return Gaussian(Eigen::Vector2d(1.0, 2.0), s);
}

}  // namespace

TEST_SUITE("gaussian") {

TEST_CASE("standard normal at its mode") {
  const Gaussian g(VectorXd::Zero(1), MatrixXd::Identity(1, 1));
  CHECK(g.log_density(VectorXd::Zero(1)) == doctest::Approx(-0.9189385332046727).epsilon(1e-14));
}

TEST_CASE("bivariate identity at the mean") {
  const Gaussian g(VectorXd::Zero(2), MatrixXd::Identity(2, 2));
  CHECK(g.log_density(VectorXd::Zero(2)) == doctest::Approx(-1.8378770664093453).epsilon(1e-14));
}

TEST_CASE("correlated bivariate matches the closed-form 2x2 density") {
  const Gaussian g = bivariate();
  const double want = oracle::log_normal_density({0.0, 0.0}, {1.0, 2.0}, {{2.0, 0.5}, {0.5, 1.0}});
  CHECK(g.log_density(VectorXd::Zero(2)) == doctest::Approx(want).epsilon(1e-13));
  for (const auto& x : std::array<std::array<double, 2>, 4>{{{3, -1}, {1, 2}, {-4, 6}, {0.3, 0.1}}}) {
    const double w = oracle::log_normal_density({x[0], x[1]}, {1.0, 2.0}, {{2.0, 0.5}, {0.5, 1.0}});
    CHECK(g.log_density(Eigen::Vector2d(x[0], x[1])) == doctest::Approx(w).epsilon(1e-13));
  }
}

TEST_CASE("dimension mismatch and invalid covariance") {
  const Gaussian g = bivariate();
  CHECK_THROWS_AS(g.log_density(VectorXd::Zero(3)), ophmm::InputError);
  MatrixXd bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(Gaussian(VectorXd::Zero(2), bad), ophmm::ParameterError);
  CHECK_THROWS_AS(Gaussian(VectorXd::Zero(2), MatrixXd::Identity(3, 3)), ophmm::ParameterError);
  CHECK_THROWS_AS(Gaussian(VectorXd::Zero(0), MatrixXd::Zero(0, 0)), ophmm::ParameterError);
}

TEST_CASE("covariance is symmetrized on construction") {
  MatrixXd s(2, 2);
  s << 2.0, 0.5 + 1e-16, 0.5 - 1e-16, 1.0;
  const Gaussian g(VectorXd::Zero(2), s);
  CHECK(g.covariance()(0, 1) == g.covariance()(1, 0));
}

TEST_CASE("full marginal is the identity") {
  const Gaussian g = bivariate();
  const std::array<int, 2> idx{0, 1};
  CHECK(g.marginal(idx) == g);
}

TEST_CASE("marginal sub-block extraction") {
  const Gaussian g = bivariate();
  const std::array<int, 1> second{1};
  const Gaussian m1 = g.marginal(second);
  CHECK(m1.mean()(0) == 2.0);
  CHECK(m1.covariance()(0, 0) == 1.0);
  const std::array<int, 1> first{0};
  const Gaussian m0 = g.marginal(first);
  CHECK(m0.mean()(0) == 1.0);
  CHECK(m0.covariance()(0, 0) == 2.0);
  const std::array<int, 1> bad{2};
  CHECK_THROWS_AS(g.marginal(bad), ophmm::InputError);
  const std::array<int, 2> dup{0, 0};
  CHECK_THROWS_AS(g.marginal(dup), ophmm::InputError);
}

TEST_CASE("marginal density equals the joint integrated over the dropped component") {
  const Gaussian g = bivariate();
  const std::array<int, 1> first{0};
  const Gaussian m0 = g.marginal(first);
  for (double x0 : {-2.0, 0.0, 1.0, 2.5, 4.0}) {
    const double integral = oracle::simpson(
        [&](double x1) { return std::exp(g.log_density(Eigen::Vector2d(x0, x1))); }, -12.0, 16.0, 2000);
    CHECK(std::abs(integral - std::exp(m0.log_density(VectorXd::Constant(1, x0)))) < 1e-3);
  }
}

TEST_CASE("density integrates to one") {
  const Gaussian g1(VectorXd::Constant(1, 3.0), MatrixXd::Constant(1, 1, 4.0));
  const double i1 =
      oracle::simpson([&](double x) { return std::exp(g1.log_density(VectorXd::Constant(1, x))); }, -40, 46, 4000);
  CHECK(std::abs(i1 - 1.0) < 1e-3);

  const Gaussian g2 = bivariate();
  const double i2 = oracle::simpson(
      [&](double x0) {
        return oracle::simpson([&](double x1) { return std::exp(g2.log_density(Eigen::Vector2d(x0, x1))); },
                               -10.0, 14.0, 300);
      },
      -12.0, 14.0, 300);
  CHECK(std::abs(i2 - 1.0) < 1e-3);
}

TEST_CASE("near-degenerate covariance concentrates draws") {
  const Gaussian g(Eigen::Vector2d(5.0, 5.0), 1e-12 * MatrixXd::Identity(2, 2));
  ophmm::Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const VectorXd x = g.sample(rng);
    CHECK(std::abs(x(0) - 5.0) < 1e-5);
    CHECK(std::abs(x(1) - 5.0) < 1e-5);
  }
}

TEST_CASE("univariate sample moments") {
  const Gaussian g(VectorXd::Zero(1), MatrixXd::Identity(1, 1));
  ophmm::Rng rng(2024);
  const int n = 50000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = g.sample(rng)(0);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(s2 / n - mean * mean - 1.0) < 0.03);
}

TEST_CASE("bivariate sample correlation") {
  MatrixXd s(2, 2);
  s << 1.0, 0.8, 0.8, 1.0;
  const Gaussian g(VectorXd::Zero(2), s);
  ophmm::Rng rng(7);
  const int n = 50000;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const VectorXd v = g.sample(rng);
    sx += v(0);
    sy += v(1);
    sxx += v(0) * v(0);
    syy += v(1) * v(1);
    sxy += v(0) * v(1);
  }
  const double cxy = sxy / n - (sx / n) * (sy / n);
  const double r = cxy / std::sqrt((sxx / n - (sx / n) * (sx / n)) * (syy / n - (sy / n) * (sy / n)));
  CHECK(std::abs(r - 0.8) < 0.02);
}

TEST_CASE("sample moments approach parameters as n grows") {
  const Gaussian g = bivariate();
  ophmm::Rng rng(99);
  double prev_err = 1e9;
  for (int n : {1000, 100000}) {
    VectorXd sum = VectorXd::Zero(2);
    for (int i = 0; i < n; ++i) sum += g.sample(rng);
    const double err = (sum / n - g.mean()).norm();
    CHECK(err < 5.0 * std::sqrt(3.0 / n));
    CHECK(err < prev_err + 5.0 * std::sqrt(3.0 / 1000));
    prev_err = err;
  }
}

TEST_CASE("sampling is deterministic given the seed") {
  const Gaussian g = bivariate();
  ophmm::Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) CHECK(g.sample(a) == g.sample(b));
}

TEST_CASE("univariate helpers") {
  CHECK(ophmm::normal_log_pdf(1.0, 1.0, 4.0) == doctest::Approx(-0.5 * std::log(2 * M_PI * 4.0)));
  CHECK(ophmm::normal_cdf(0.0, 0.0, 1.0) == doctest::Approx(0.5));
  CHECK(ophmm::normal_cdf(1.2815515655446004, 0.0, 1.0) == doctest::Approx(0.9).epsilon(1e-12));
}

}  // TEST_SUITE
