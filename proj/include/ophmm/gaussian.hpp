#pragma once

#include <Eigen/Core>
#include <random>
#include <span>

namespace ophmm {

using Rng = std::mt19937_64;

/// Multivariate normal N(mean, covariance) used as the per-state emission law.
///
/// The covariance is symmetrized on construction ((S + S^T) / 2) and must be
/// positive definite; the Cholesky factor is computed once and reused by
/// density evaluation and sampling. Instances are immutable.
class Gaussian {
 public:
  Gaussian(Eigen::VectorXd mean, Eigen::MatrixXd covariance);

  int dim() const { return static_cast<int>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return covariance_; }
  double log_determinant() const { return log_det_; }

  /// Natural-log density at x. Throws InputError on dimension mismatch.
  double log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  /// Gaussian of the selected components (sub-vector / sub-block).
  Gaussian marginal(std::span<const int> indices) const;

  /// One draw mean + L z with z ~ N(0, I).
  Eigen::VectorXd sample(Rng& rng) const;

  // Equality is on (mean, covariance) only.
  friend bool operator==(const Gaussian& a, const Gaussian& b) {
    return a.mean_ == b.mean_ && a.covariance_ == b.covariance_;
  }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd covariance_;
  Eigen::MatrixXd chol_lower_;
  double log_det_ = 0.0;
};

// Univariate helpers shared by the forecasting code.
double normal_log_pdf(double x, double mean, double variance);
double normal_cdf(double x, double mean, double variance);

}  // namespace ophmm
