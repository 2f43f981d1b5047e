#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ophmm/hmm.hpp"

namespace ophmm {

enum class QuantileMethod { sampling, exact };

struct ForecastConfig {
  double quantile_level = 0.9;
  int n_samples = 1500;
  std::uint64_t seed = 0;
  // Component treated as the loss; defaults to the last one.
  std::optional<int> loss_component;
  QuantileMethod method = QuantileMethod::sampling;

  void validate() const;
  int resolve_loss_component(int dim) const;
};

/// One-step-ahead mixture over the loss marginal:
/// weights w_j = sum_i alpha*_N(i) a_ij, components N(mu_j[c], Sigma_j[c,c]).
struct PredictiveMixture {
  Eigen::VectorXd weights;
  Eigen::VectorXd means;
  Eigen::VectorXd variances;

  double density(double y) const;
  double cdf(double y) const;
  /// Quantile by bisection on the closed-form CDF.
  double quantile(double level, double tol = 1e-12) const;
};

PredictiveMixture predictive_mixture(const HmmModel& model, const Eigen::VectorXd& filtered,
                                     int loss_component);
PredictiveMixture predictive_mixture(const HmmModel& model, const ObservationSequence& history,
                                     int loss_component);

double predictive_density(const HmmModel& model, const ObservationSequence& history, double y,
                          std::optional<int> loss_component = std::nullopt);

struct SampleSummary {
  int n = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct QuantileEstimate {
  double epsilon_hat = 0.0;
  SampleSummary samples;
};

/// Rank ceil(level * M) (1-based) of the ascending sort.
std::size_t empirical_quantile_rank(double level, std::size_t m);

/// M draws of the next loss: X_N ~ filtered, X_{N+1} ~ A[X_N, .],
/// loss ~ marginal emission of X_{N+1}. Sorted ascending.
std::vector<double> sample_predictive(const HmmModel& model, const Eigen::VectorXd& filtered,
                                      int loss_component, int n_samples, Rng& rng);

QuantileEstimate predictive_quantile(const HmmModel& model, const ObservationSequence& history,
                                     const ForecastConfig& config);

struct QuantilePath {
  std::vector<std::string> periods;  // target period n+1
  std::vector<double> predicted_quantiles;
  std::vector<double> high_state_probability;  // filtered P(top-loss state) at n
};

/// Rolls the filter over obs with fixed parameters. For each history length
/// n in [start_index, N-1] predicts period n+1; each n draws from its own
/// stream derive_seed(config.seed, n).
QuantilePath quantile_path(const HmmModel& model, const ObservationSequence& obs,
                           const ForecastConfig& config, int start_index = 1);

/// State with the largest loss-component mean (lowest index on ties).
int high_loss_state(const HmmModel& model, int loss_component);

// Delimited text: period,predicted_quantile,filtered_high_state_prob
void write_quantile_path(std::ostream& out, const QuantilePath& path);
QuantilePath read_quantile_path(std::istream& in);

}  // namespace ophmm
