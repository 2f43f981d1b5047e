#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "ophmm/gaussian.hpp"

namespace ophmm {

/// Homogeneous HMM with Gaussian emissions: initial law, row-stochastic
/// transition matrix and one Gaussian per hidden state.
///
/// States are 0-based in code; reports and files render them 1-based.
class HmmModel {
 public:
  HmmModel(Eigen::VectorXd initial, Eigen::MatrixXd transition, std::vector<Gaussian> emissions);

  int n_states() const { return static_cast<int>(initial_.size()); }
  int dim() const { return emissions_.front().dim(); }

  const Eigen::VectorXd& initial() const { return initial_; }
  const Eigen::MatrixXd& transition() const { return transition_; }
  const std::vector<Gaussian>& emissions() const { return emissions_; }
  const Gaussian& emission(int state) const { return emissions_[static_cast<std::size_t>(state)]; }

  /// Same model with states relabelled: new state s is old state order[s].
  HmmModel permuted(const std::vector<int>& order) const;

  friend bool operator==(const HmmModel& a, const HmmModel& b) {
    return a.initial_ == b.initial_ && a.transition_ == b.transition_ &&
           a.emissions_ == b.emissions_;
  }

 private:
  Eigen::VectorXd initial_;
  Eigen::MatrixXd transition_;
  std::vector<Gaussian> emissions_;
};

/// N x d observation matrix (row n = y_n) with strictly increasing period labels.
class ObservationSequence {
 public:
  // Labels default to zero-padded row indices.
  explicit ObservationSequence(Eigen::MatrixXd values, std::vector<std::string> labels = {});

  int length() const { return static_cast<int>(values_.rows()); }
  int dim() const { return static_cast<int>(values_.cols()); }
  const Eigen::MatrixXd& values() const { return values_; }
  const std::vector<std::string>& labels() const { return labels_; }
  auto row(int n) const { return values_.row(n).transpose(); }

  /// First `length` rows.
  ObservationSequence prefix(int length) const;
  /// Selected columns, same labels.
  ObservationSequence columns(const std::vector<int>& cols) const;

 private:
  Eigen::MatrixXd values_;
  std::vector<std::string> labels_;
};

struct ForwardResult {
  Eigen::MatrixXd alpha_star;   // N x K, rows sum to one
  Eigen::VectorXd log_scales;   // log s_n, s_n = 1 / sum_k alpha_n(k)
  double log_likelihood = 0.0;  // -sum_n log s_n
};

struct ForwardBackwardResult {
  Eigen::MatrixXd alpha_star;  // N x K
  Eigen::MatrixXd beta_star;   // N x K, beta*_n = s_n * beta_n (in the scaled recursion)
  Eigen::VectorXd log_scales;  // N
  Eigen::MatrixXd phi;         // N x K smoothed posteriors
  std::vector<Eigen::MatrixXd> psi;  // N-1 slices, K x K pairwise posteriors
  double log_likelihood = 0.0;
};

/// N x K matrix of log f_j(y_n).
Eigen::MatrixXd emission_log_densities(const HmmModel& model, const ObservationSequence& obs);

/// Scaled forward recursion. Throws NumericError naming the time index when a
/// row underflows to zero even after per-row max subtraction.
ForwardResult forward(const HmmModel& model, const ObservationSequence& obs);

/// Scaled backward recursion using the scale factors from forward().
Eigen::MatrixXd backward(const HmmModel& model, const ObservationSequence& obs,
                         const Eigen::VectorXd& log_scales);

/// Smoothed and pairwise posteriors plus all scaled intermediates.
ForwardBackwardResult posteriors(const HmmModel& model, const ObservationSequence& obs);

/// Filtered belief at the last observation, P(X_N | y_1:N).
Eigen::VectorXd filtered_posterior(const HmmModel& model, const ObservationSequence& obs);

/// Most probable state path. Among exactly tied paths, the lexicographically
/// smallest (earliest time first, lowest state index) is returned.
std::vector<int> viterbi(const HmmModel& model, const ObservationSequence& obs);

/// log P(states, y) for a given path.
double joint_log_density(const HmmModel& model, const ObservationSequence& obs,
                         const std::vector<int>& states);

/// Draw an index with probability proportional to probs.
int sample_categorical(const Eigen::Ref<const Eigen::VectorXd>& probs, Rng& rng);

struct Simulation {
  std::vector<int> states;
  ObservationSequence obs;
};

Simulation simulate(const HmmModel& model, int length, Rng& rng);

}  // namespace ophmm
