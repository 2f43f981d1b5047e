#include "ophmm/gaussian.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <string>

#include "ophmm/errors.hpp"

namespace ophmm {

namespace {

constexpr double kLogTwoPi = 1.83787706640934548356065947281123527;

}  // namespace

Gaussian::Gaussian(Eigen::VectorXd mean, Eigen::MatrixXd covariance)
    : mean_(std::move(mean)) {
  const auto d = mean_.size();
  if (d < 1) throw ParameterError("Gaussian requires dimension >= 1");
  if (covariance.rows() != d || covariance.cols() != d) {
    throw ParameterError("covariance is " + std::to_string(covariance.rows()) + "x" +
                         std::to_string(covariance.cols()) + ", expected " + std::to_string(d) +
                         "x" + std::to_string(d));
  }
  if (!mean_.allFinite() || !covariance.allFinite()) {
    throw ParameterError("Gaussian parameters must be finite");
  }
  covariance_ = 0.5 * (covariance + covariance.transpose());

  Eigen::LLT<Eigen::MatrixXd> llt(covariance_);
  if (llt.info() != Eigen::Success) {
    throw ParameterError("covariance is not positive definite");
  }
  chol_lower_ = llt.matrixL();
  log_det_ = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double pivot = chol_lower_(i, i);
    if (!(pivot > 0.0)) throw ParameterError("covariance is not positive definite");
    log_det_ += 2.0 * std::log(pivot);
  }
}

double Gaussian::log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != mean_.size()) {
    throw InputError("observation has dimension " + std::to_string(x.size()) +
                     ", emission expects " + std::to_string(mean_.size()));
  }
  Eigen::VectorXd z = x - mean_;
  chol_lower_.triangularView<Eigen::Lower>().solveInPlace(z);
  return -0.5 * (static_cast<double>(dim()) * kLogTwoPi + log_det_ + z.squaredNorm());
}

Gaussian Gaussian::marginal(std::span<const int> indices) const {
  const int d = dim();
  const auto m = static_cast<Eigen::Index>(indices.size());
  if (m == 0) throw InputError("marginal requires at least one component");
  for (std::size_t a = 0; a < indices.size(); ++a) {
    if (indices[a] < 0 || indices[a] >= d) {
      throw InputError("component index " + std::to_string(indices[a]) +
                       " out of range for dimension " + std::to_string(d));
    }
    for (std::size_t b = 0; b < a; ++b) {
      if (indices[a] == indices[b]) {
        throw InputError("duplicate component index " + std::to_string(indices[a]));
      }
    }
  }
  Eigen::VectorXd mu(m);
  Eigen::MatrixXd cov(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    mu(a) = mean_(indices[a]);
    for (Eigen::Index b = 0; b < m; ++b) cov(a, b) = covariance_(indices[a], indices[b]);
  }
  return Gaussian(std::move(mu), std::move(cov));
}

Eigen::VectorXd Gaussian::sample(Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(mean_.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  return mean_ + chol_lower_.triangularView<Eigen::Lower>() * z;
}

double normal_log_pdf(double x, double mean, double variance) {
  const double r = x - mean;
  return -0.5 * (kLogTwoPi + std::log(variance) + r * r / variance);
}

double normal_cdf(double x, double mean, double variance) {
  return 0.5 * std::erfc(-(x - mean) / std::sqrt(2.0 * variance));
}

}  // namespace ophmm
