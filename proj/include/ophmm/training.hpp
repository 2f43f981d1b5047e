#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ophmm/hmm.hpp"

namespace ophmm {

struct TrainingConfig {
  int n_states = 2;
  int max_iterations = 500;
  double loglik_rel_tolerance = 1e-6;
  int n_restarts = 10;
  double ridge_epsilon = 1e-6;
  std::uint64_t base_seed = 0;
  double sticky_diag_init = 0.8;

  void validate() const;
};

/// Outcome of one EM run from one initialization.
struct EmRun {
  std::optional<HmmModel> model;  // empty when the run failed
  std::vector<double> loglik_trace;
  int n_iterations = 0;
  bool converged = false;
  int starvation_events = 0;
  std::string failure;
};

struct RestartDiagnostics {
  int restart = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string failure;
  std::vector<double> loglik_trace;
  int n_iterations = 0;
  bool converged = false;
  int starvation_events = 0;
};

struct FitResult {
  HmmModel model;
  double final_log_likelihood = 0.0;
  std::vector<double> loglik_trace;
  int n_iterations = 0;
  int restart_index = 0;
  int n_parameters = 0;
  double aic = 0.0;
  double bic = 0.0;
  bool converged = false;
  bool starvation_reinit = false;
  std::vector<RestartDiagnostics> restarts;
};

struct EmStepResult {
  HmmModel model;
  double log_likelihood_before = 0.0;
  // States whose emission was re-seeded because their posterior mass vanished.
  std::vector<int> reinitialized_states;
};

/// Free parameters: (K-1) + K(K-1) + K d + K d(d+1)/2.
int free_parameter_count(int n_states, int dim);
double aic(double log_likelihood, int n_parameters);
double bic(double log_likelihood, int n_parameters, int n_observations);

/// Covariance + eps * (tr S / d) * I. If that is still not positive definite
/// (degenerate cluster), falls back to eps * fallback_variance * I.
Eigen::MatrixXd regularize_covariance(const Eigen::MatrixXd& cov, double eps,
                                      double fallback_variance);

/// Population (1/N) covariance of the rows.
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& rows);

/// K-means on z-scored observations (k-means++ seeding from `seed`), mapped
/// back to raw units: means = centroids, covariances = ridged within-cluster
/// covariances, uniform initial law, sticky transitions.
HmmModel kmeans_init(const ObservationSequence& obs, const TrainingConfig& config,
                     std::uint64_t seed);

/// One Baum-Welch iteration (E-step + closed-form M-step with covariance ridge).
EmStepResult em_step(const HmmModel& model, const ObservationSequence& obs,
                     double ridge_epsilon);

/// Iterate em_step from `init` until the relative log-likelihood gain drops
/// below tolerance or max_iterations is reached. Never throws on numeric
/// failure; the failure is reported in the result.
EmRun run_em(const HmmModel& init, const ObservationSequence& obs, const TrainingConfig& config);

/// Multi-restart EM; keeps the restart with the highest final log-likelihood
/// (lowest restart index on ties) and sorts states by ascending mean of the
/// loss component (the last one). Throws TrainingError if every restart fails.
FitResult fit(const ObservationSequence& obs, const TrainingConfig& config);

/// Loss component index for a d-dimensional observation (the last component).
inline int loss_component(int dim) { return dim - 1; }

/// Relabel states so that loss-component means ascend.
HmmModel sort_states_by_loss(const HmmModel& model);

struct SelectionRow {
  int n_states = 0;
  bool fitted = false;
  double aic = 0.0;
  double bic = 0.0;
  double final_log_likelihood = 0.0;
  std::string failure;
};

/// Fit each candidate state count and tabulate AIC/BIC. No winner is chosen.
std::vector<SelectionRow> select_states(const ObservationSequence& obs,
                                        const std::vector<int>& candidates,
                                        const TrainingConfig& config);

}  // namespace ophmm
