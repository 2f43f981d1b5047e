#include "ophmm/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ophmm/errors.hpp"

namespace ophmm {

namespace {

constexpr double kStochasticTol = 1e-10;

void check_probability_vector(const Eigen::Ref<const Eigen::VectorXd>& p, const std::string& what) {
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p(i)) || p(i) < 0.0) {
      throw ParameterError(what + " has a negative or non-finite entry");
    }
  }
  if (std::abs(p.sum() - 1.0) > kStochasticTol) {
    throw ParameterError(what + " sums to " + std::to_string(p.sum()) + ", expected 1");
  }
}

void check_compatible(const HmmModel& model, const ObservationSequence& obs) {
  if (model.dim() != obs.dim()) {
    throw InputError("model dimension " + std::to_string(model.dim()) +
                     " does not match observation dimension " + std::to_string(obs.dim()));
  }
  if (obs.length() < 1) throw InputError("observation sequence is empty");
}

std::string default_label(int n, int width) {
  std::string s = std::to_string(n + 1);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

// beta_hat_n = beta*_n / s_n; entries stay O(1) regardless of how extreme s_n is.
Eigen::MatrixXd normalized_backward(const HmmModel& model, const Eigen::MatrixXd& log_b,
                                    const Eigen::VectorXd& log_scales) {
  const Eigen::Index n_obs = log_b.rows();
  const Eigen::Index k = log_b.cols();
  Eigen::MatrixXd beta_hat(n_obs, k);
  beta_hat.row(n_obs - 1).setOnes();
  const auto& a = model.transition();
  for (Eigen::Index n = n_obs - 2; n >= 0; --n) {
    Eigen::VectorXd g(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      g(j) = std::exp(log_b(n + 1, j) + log_scales(n + 1)) * beta_hat(n + 1, j);
    }
    beta_hat.row(n) = (a * g).transpose();
  }
  return beta_hat;
}

}  // namespace

HmmModel::HmmModel(Eigen::VectorXd initial, Eigen::MatrixXd transition,
                   std::vector<Gaussian> emissions)
    : initial_(std::move(initial)),
      transition_(std::move(transition)),
      emissions_(std::move(emissions)) {
  const auto k = initial_.size();
  if (k < 1) throw ParameterError("model needs at least one state");
  if (transition_.rows() != k || transition_.cols() != k) {
    throw ParameterError("transition matrix must be " + std::to_string(k) + "x" + std::to_string(k));
  }
  if (static_cast<Eigen::Index>(emissions_.size()) != k) {
    throw ParameterError("expected " + std::to_string(k) + " emissions, got " +
                         std::to_string(emissions_.size()));
  }
  for (const auto& e : emissions_) {
    if (e.dim() != emissions_.front().dim()) {
      throw ParameterError("all emissions must share one dimension");
    }
  }
  check_probability_vector(initial_, "initial distribution");
  for (Eigen::Index i = 0; i < k; ++i) {
    check_probability_vector(transition_.row(i).transpose(),
                             "transition row " + std::to_string(i + 1));
  }
}

HmmModel HmmModel::permuted(const std::vector<int>& order) const {
  const int k = n_states();
  std::vector<int> seen(static_cast<std::size_t>(k), 0);
  if (static_cast<int>(order.size()) != k) throw InputError("permutation has wrong length");
  for (int s : order) {
    if (s < 0 || s >= k || seen[static_cast<std::size_t>(s)]++) {
      throw InputError("invalid state permutation");
    }
  }
  Eigen::VectorXd pi(k);
  Eigen::MatrixXd a(k, k);
  std::vector<Gaussian> em;
  em.reserve(static_cast<std::size_t>(k));
  for (int s = 0; s < k; ++s) {
    pi(s) = initial_(order[static_cast<std::size_t>(s)]);
    for (int t = 0; t < k; ++t) {
      a(s, t) = transition_(order[static_cast<std::size_t>(s)], order[static_cast<std::size_t>(t)]);
    }
    em.push_back(emissions_[static_cast<std::size_t>(order[static_cast<std::size_t>(s)])]);
  }
  return HmmModel(std::move(pi), std::move(a), std::move(em));
}

ObservationSequence::ObservationSequence(Eigen::MatrixXd values, std::vector<std::string> labels)
    : values_(std::move(values)), labels_(std::move(labels)) {
  const int n = static_cast<int>(values_.rows());
  if (values_.cols() < 1) throw InputError("observations need at least one component");
  if (!values_.allFinite()) {
    for (int r = 0; r < n; ++r) {
      if (!values_.row(r).allFinite()) {
        throw InputError("non-finite observation at row " + std::to_string(r + 1));
      }
    }
  }
  if (labels_.empty()) {
    const int width = std::max(6, static_cast<int>(std::to_string(n).size()));
    labels_.reserve(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) labels_.push_back(default_label(r, width));
  }
  if (static_cast<int>(labels_.size()) != n) {
    throw InputError("got " + std::to_string(labels_.size()) + " labels for " + std::to_string(n) +
                     " observations");
  }
  for (std::size_t r = 1; r < labels_.size(); ++r) {
    if (!(labels_[r - 1] < labels_[r])) {
      throw InputError("period labels not strictly increasing at '" + labels_[r] + "'");
    }
  }
}

ObservationSequence ObservationSequence::prefix(int length) const {
  if (length < 0 || length > this->length()) throw InputError("prefix length out of range");
  return ObservationSequence(values_.topRows(length),
                             std::vector<std::string>(labels_.begin(), labels_.begin() + length));
}

ObservationSequence ObservationSequence::columns(const std::vector<int>& cols) const {
  Eigen::MatrixXd v(values_.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c] < 0 || cols[c] >= dim()) throw InputError("column index out of range");
    v.col(static_cast<Eigen::Index>(c)) = values_.col(cols[c]);
  }
  return ObservationSequence(std::move(v), labels_);
}

Eigen::MatrixXd emission_log_densities(const HmmModel& model, const ObservationSequence& obs) {
  check_compatible(model, obs);
  const int n_obs = obs.length();
  const int k = model.n_states();
  Eigen::MatrixXd log_b(n_obs, k);
  for (int n = 0; n < n_obs; ++n) {
    const Eigen::VectorXd y = obs.row(n);
    for (int j = 0; j < k; ++j) log_b(n, j) = model.emission(j).log_density(y);
  }
  return log_b;
}

namespace {

ForwardResult forward_from_log_b(const HmmModel& model, const Eigen::MatrixXd& log_b) {
  const Eigen::Index n_obs = log_b.rows();
  const Eigen::Index k = log_b.cols();
  ForwardResult res;
  res.alpha_star.resize(n_obs, k);
  res.log_scales.resize(n_obs);
  Eigen::RowVectorXd predicted = model.initial().transpose();
  for (Eigen::Index n = 0; n < n_obs; ++n) {
    if (n > 0) predicted = res.alpha_star.row(n - 1) * model.transition();
    const double row_max = log_b.row(n).maxCoeff();
    if (!std::isfinite(row_max)) {
      throw NumericError("emission densities underflow at time index " + std::to_string(n + 1),
                         static_cast<long>(n));
    }
    Eigen::RowVectorXd a(k);
    for (Eigen::Index j = 0; j < k; ++j) a(j) = predicted(j) * std::exp(log_b(n, j) - row_max);
    const double c = a.sum();
    if (!(c > 0.0) || !std::isfinite(c)) {
      throw NumericError("forward variables vanish at time index " + std::to_string(n + 1),
                         static_cast<long>(n));
    }
    res.alpha_star.row(n) = a / c;
    res.log_scales(n) = -(std::log(c) + row_max);
  }
  res.log_likelihood = -res.log_scales.sum();
  return res;
}

}  // namespace

ForwardResult forward(const HmmModel& model, const ObservationSequence& obs) {
  return forward_from_log_b(model, emission_log_densities(model, obs));
}

Eigen::MatrixXd backward(const HmmModel& model, const ObservationSequence& obs,
                         const Eigen::VectorXd& log_scales) {
  check_compatible(model, obs);
  if (log_scales.size() != obs.length()) {
    throw InputError("log_scales has length " + std::to_string(log_scales.size()) +
                     ", observations have length " + std::to_string(obs.length()));
  }
  const Eigen::MatrixXd log_b = emission_log_densities(model, obs);
  Eigen::MatrixXd beta = normalized_backward(model, log_b, log_scales);
  for (Eigen::Index n = 0; n < beta.rows(); ++n) beta.row(n) *= std::exp(log_scales(n));
  return beta;
}

ForwardBackwardResult posteriors(const HmmModel& model, const ObservationSequence& obs) {
  const Eigen::MatrixXd log_b = emission_log_densities(model, obs);
  ForwardResult fwd = forward_from_log_b(model, log_b);
  const Eigen::MatrixXd beta_hat = normalized_backward(model, log_b, fwd.log_scales);
  const Eigen::Index n_obs = log_b.rows();
  const Eigen::Index k = log_b.cols();
  const auto& a = model.transition();

  ForwardBackwardResult res;
  res.beta_star.resize(n_obs, k);
  res.phi.resize(n_obs, k);
  for (Eigen::Index n = 0; n < n_obs; ++n) {
    res.beta_star.row(n) = beta_hat.row(n) * std::exp(fwd.log_scales(n));
    Eigen::RowVectorXd g = fwd.alpha_star.row(n).cwiseProduct(beta_hat.row(n));
    res.phi.row(n) = g / g.sum();
  }
  res.psi.reserve(static_cast<std::size_t>(std::max<Eigen::Index>(n_obs - 1, 0)));
  for (Eigen::Index n = 0; n + 1 < n_obs; ++n) {
    Eigen::MatrixXd slice(k, k);
    for (Eigen::Index j = 0; j < k; ++j) {
      const double right = std::exp(log_b(n + 1, j) + fwd.log_scales(n + 1)) * beta_hat(n + 1, j);
      for (Eigen::Index i = 0; i < k; ++i) slice(i, j) = fwd.alpha_star(n, i) * a(i, j) * right;
    }
    slice /= slice.sum();
    res.psi.push_back(std::move(slice));
  }
  res.alpha_star = std::move(fwd.alpha_star);
  res.log_scales = std::move(fwd.log_scales);
  res.log_likelihood = fwd.log_likelihood;
  return res;
}

Eigen::VectorXd filtered_posterior(const HmmModel& model, const ObservationSequence& obs) {
  ForwardResult fwd = forward(model, obs);
  return fwd.alpha_star.row(fwd.alpha_star.rows() - 1).transpose();
}

std::vector<int> viterbi(const HmmModel& model, const ObservationSequence& obs) {
  const Eigen::MatrixXd log_b = emission_log_densities(model, obs);
  const int n_obs = obs.length();
  const int k = model.n_states();
  const Eigen::MatrixXd log_a = model.transition().array().log().matrix();
  const Eigen::VectorXd log_pi = model.initial().array().log().matrix();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  // suffix(n, i): best log score of y_{n+1..N} and the transitions into them, given X_n = i.
  Eigen::MatrixXd suffix(n_obs, k);
  suffix.row(n_obs - 1).setZero();
  for (int n = n_obs - 2; n >= 0; --n) {
    for (int i = 0; i < k; ++i) {
      double best = kNegInf;
      for (int j = 0; j < k; ++j) {
        best = std::max(best, log_a(i, j) + log_b(n + 1, j) + suffix(n + 1, j));
      }
      suffix(n, i) = best;
    }
  }

  // Forward greedy pass; strict '>' keeps the lowest index on exact ties, which
  // yields the lexicographically smallest optimal path.
  std::vector<int> path(static_cast<std::size_t>(n_obs));
  double best = kNegInf;
  int arg = -1;
  for (int i = 0; i < k; ++i) {
    const double v = log_pi(i) + log_b(0, i) + suffix(0, i);
    if (v > best) {
      best = v;
      arg = i;
    }
  }
  if (arg < 0) throw NumericError("no state path has positive density", 0);
  path[0] = arg;
  for (int n = 1; n < n_obs; ++n) {
    const int prev = path[static_cast<std::size_t>(n - 1)];
    double step_best = kNegInf;
    int step_arg = -1;
    for (int j = 0; j < k; ++j) {
      const double v = log_a(prev, j) + log_b(n, j) + suffix(n, j);
      if (v > step_best) {
        step_best = v;
        step_arg = j;
      }
    }
    if (step_arg < 0) throw NumericError("no state path has positive density", n);
    path[static_cast<std::size_t>(n)] = step_arg;
  }
  return path;
}

double joint_log_density(const HmmModel& model, const ObservationSequence& obs,
                         const std::vector<int>& states) {
  check_compatible(model, obs);
  if (static_cast<int>(states.size()) != obs.length()) throw InputError("path length mismatch");
  double lp = std::log(model.initial()(states[0])) + model.emission(states[0]).log_density(obs.row(0));
  for (int n = 1; n < obs.length(); ++n) {
    const int from = states[static_cast<std::size_t>(n - 1)];
    const int to = states[static_cast<std::size_t>(n)];
    lp += std::log(model.transition()(from, to)) + model.emission(to).log_density(obs.row(n));
  }
  return lp;
}

int sample_categorical(const Eigen::Ref<const Eigen::VectorXd>& probs, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng) * probs.sum();
  double acc = 0.0;
  int last_positive = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs(i) <= 0.0) continue;
    acc += probs(i);
    last_positive = static_cast<int>(i);
    if (u < acc) return last_positive;
  }
  return last_positive;
}

Simulation simulate(const HmmModel& model, int length, Rng& rng) {
  if (length < 1) throw InputError("simulation length must be >= 1");
  std::vector<int> states(static_cast<std::size_t>(length));
  Eigen::MatrixXd values(length, model.dim());
  int state = sample_categorical(model.initial(), rng);
  for (int n = 0; n < length; ++n) {
    if (n > 0) state = sample_categorical(model.transition().row(state).transpose(), rng);
    states[static_cast<std::size_t>(n)] = state;
    values.row(n) = model.emission(state).sample(rng).transpose();
  }
  return Simulation{std::move(states), ObservationSequence(std::move(values))};
}

}  // namespace ophmm
