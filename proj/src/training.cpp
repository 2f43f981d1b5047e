#include "ophmm/training.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ophmm/errors.hpp"

namespace ophmm {

namespace {

// Posterior mass below which a state counts as starved.
constexpr double kStarvationMass = 1e-8;
constexpr int kMaxLloydIterations = 100;

bool is_positive_definite(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) return false;
  const Eigen::MatrixXd l = llt.matrixL();
  return (l.diagonal().array() > 0.0).all();
}

double average_variance(const Eigen::MatrixXd& cov) {
  const double v = cov.trace() / static_cast<double>(cov.rows());
  return v > 0.0 && std::isfinite(v) ? v : 1.0;
}

Eigen::MatrixXd sticky_transition(int k, double diag) {
  if (k == 1) return Eigen::MatrixXd::Ones(1, 1);
  Eigen::MatrixXd a = Eigen::MatrixXd::Constant(k, k, (1.0 - diag) / static_cast<double>(k - 1));
  a.diagonal().setConstant(diag);
  return a;
}

double squared_distance(const Eigen::MatrixXd& pts, Eigen::Index row, const Eigen::MatrixXd& centroids,
                        Eigen::Index c) {
  return (pts.row(row) - centroids.row(c)).squaredNorm();
}

// Lloyd iterations with k-means++ seeding. Returns the cluster of each row.
std::vector<int> kmeans_assign(const Eigen::MatrixXd& pts, int k, std::uint64_t seed) {
  const Eigen::Index n = pts.rows();
  Rng rng(seed);
  Eigen::MatrixXd centroids(k, pts.cols());

  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centroids.row(0) = pts.row(pick(rng));
  Eigen::VectorXd d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = squared_distance(pts, i, centroids, 0);
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> unif(0.0, total);
      const double u = unif(rng);
      double acc = 0.0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2(i);
        if (u < acc && d2(i) > 0.0) {
          chosen = i;
          break;
        }
      }
    }
    centroids.row(c) = pts.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), squared_distance(pts, i, centroids, c));
  }

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < kMaxLloydIterations; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = squared_distance(pts, i, centroids, 0);
      for (int c = 1; c < k; ++c) {
        const double dc = squared_distance(pts, i, centroids, c);
        if (dc < best_d) {
          best_d = dc;
          best = c;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }

    // Empty cluster: move the point farthest from its own centroid (taken
    // from a cluster with more than one member) into it.
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int a : assign) ++counts[static_cast<std::size_t>(a)];
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) continue;
      Eigen::Index far = -1;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const int own = assign[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(own)] < 2) continue;
        const double di = squared_distance(pts, i, centroids, own);
        if (di > far_d) {
          far_d = di;
          far = i;
        }
      }
      if (far < 0) break;  // n < k cannot happen; guarded by callers
      --counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(far)])];
      assign[static_cast<std::size_t>(far)] = c;
      ++counts[static_cast<std::size_t>(c)];
      changed = true;
    }

    centroids.setZero();
    for (Eigen::Index i = 0; i < n; ++i) centroids.row(assign[static_cast<std::size_t>(i)]) += pts.row(i);
    for (int c = 0; c < k; ++c) centroids.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
    if (!changed) break;
  }
  return assign;
}

}  // namespace

void TrainingConfig::validate() const {
  if (n_states < 1) throw InputError("n_states must be >= 1");
  if (max_iterations < 1) throw InputError("max_iterations must be >= 1");
  if (!(loglik_rel_tolerance > 0.0)) throw InputError("loglik_rel_tolerance must be > 0");
  if (n_restarts < 1) throw InputError("n_restarts must be >= 1");
  if (!(ridge_epsilon > 0.0)) throw InputError("ridge_epsilon must be > 0");
  if (n_states > 1 &&
      !(sticky_diag_init >= 1.0 / static_cast<double>(n_states) && sticky_diag_init < 1.0)) {
    throw InputError("sticky_diag_init must lie in [1/K, 1)");
  }
}

int free_parameter_count(int k, int d) {
  return (k - 1) + k * (k - 1) + k * d + k * d * (d + 1) / 2;
}

double aic(double log_likelihood, int n_parameters) {
  return 2.0 * n_parameters - 2.0 * log_likelihood;
}

double bic(double log_likelihood, int n_parameters, int n_observations) {
  return n_parameters * std::log(static_cast<double>(n_observations)) - 2.0 * log_likelihood;
}

Eigen::MatrixXd regularize_covariance(const Eigen::MatrixXd& cov, double eps,
                                      double fallback_variance) {
  const auto d = cov.rows();
  const double avg = cov.trace() / static_cast<double>(d);
  if (avg > 0.0 && std::isfinite(avg)) {
    Eigen::MatrixXd r = cov;
    r.diagonal().array() += eps * avg;
    if (is_positive_definite(r)) return r;
  }
  return Eigen::MatrixXd::Identity(d, d) * (eps * fallback_variance);
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& rows) {
  const Eigen::RowVectorXd mu = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - mu;
  return (centered.transpose() * centered) / static_cast<double>(rows.rows());
}

HmmModel kmeans_init(const ObservationSequence& obs, const TrainingConfig& config,
                     std::uint64_t seed) {
  const int k = config.n_states;
  const int n = obs.length();
  const int d = obs.dim();
  if (k < 1) throw InputError("n_states must be >= 1");
  if (n < k) {
    throw InputError("need at least " + std::to_string(k) + " observations, got " + std::to_string(n));
  }
  const Eigen::MatrixXd& y = obs.values();
  const Eigen::MatrixXd global_cov = sample_covariance(y);
  const double fallback = average_variance(global_cov);

  // z-score so components with large units do not dominate the distance.
  const Eigen::RowVectorXd mu = y.colwise().mean();
  Eigen::RowVectorXd sd = global_cov.diagonal().array().sqrt().transpose();
  for (Eigen::Index c = 0; c < sd.size(); ++c) {
    if (!(sd(c) > 0.0)) sd(c) = 1.0;
  }
  const Eigen::MatrixXd z = (y.rowwise() - mu).array().rowwise() / sd.array();
  const std::vector<int> assign = kmeans_assign(z, k, seed);

  std::vector<Gaussian> emissions;
  emissions.reserve(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    std::vector<Eigen::Index> members;
    for (int i = 0; i < n; ++i) {
      if (assign[static_cast<std::size_t>(i)] == c) members.push_back(i);
    }
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(members.size()), d);
    for (std::size_t m = 0; m < members.size(); ++m) rows.row(static_cast<Eigen::Index>(m)) = y.row(members[m]);
    Eigen::VectorXd mean = rows.colwise().mean().transpose();
    Eigen::MatrixXd cov = members.size() >= 2 ? sample_covariance(rows) : Eigen::MatrixXd::Zero(d, d);
    emissions.emplace_back(std::move(mean), regularize_covariance(cov, config.ridge_epsilon, fallback));
  }
  Eigen::VectorXd pi = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  return HmmModel(std::move(pi), sticky_transition(k, config.sticky_diag_init), std::move(emissions));
}

EmStepResult em_step(const HmmModel& model, const ObservationSequence& obs, double ridge_epsilon) {
  const ForwardBackwardResult fb = posteriors(model, obs);
  const int n = obs.length();
  const int k = model.n_states();
  const Eigen::MatrixXd& y = obs.values();

  Eigen::VectorXd pi = fb.phi.row(0).transpose();
  pi /= pi.sum();

  Eigen::MatrixXd a = model.transition();
  if (n >= 2) {
    Eigen::MatrixXd psi_sum = Eigen::MatrixXd::Zero(k, k);
    for (const auto& slice : fb.psi) psi_sum += slice;
    const Eigen::VectorXd from_mass = fb.phi.topRows(n - 1).colwise().sum().transpose();
    for (int i = 0; i < k; ++i) {
      if (from_mass(i) < kStarvationMass) continue;  // keep the previous row
      Eigen::RowVectorXd row = psi_sum.row(i) / from_mass(i);
      a.row(i) = row / row.sum();
    }
  }

  const Eigen::MatrixXd global_cov = sample_covariance(y);
  const double fallback = average_variance(global_cov);
  const Eigen::VectorXd mass = fb.phi.colwise().sum().transpose();

  EmStepResult out{model, fb.log_likelihood, {}};
  std::vector<Gaussian> emissions;
  emissions.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    if (mass(i) < kStarvationMass) {
      // Re-seed at the observation the current model explains worst.
      Eigen::Index worst = 0;
      fb.log_scales.maxCoeff(&worst);  // largest log s_n = smallest predictive density
      emissions.emplace_back(y.row(worst).transpose(),
                             regularize_covariance(global_cov, ridge_epsilon, fallback));
      out.reinitialized_states.push_back(i);
      continue;
    }
    const Eigen::VectorXd w = fb.phi.col(i);
    Eigen::VectorXd mu = (y.transpose() * w) / mass(i);
    const Eigen::MatrixXd centered = y.rowwise() - mu.transpose();
    Eigen::MatrixXd cov = (centered.transpose() * w.asDiagonal() * centered) / mass(i);
    emissions.emplace_back(std::move(mu), regularize_covariance(cov, ridge_epsilon, fallback));
  }
  out.model = HmmModel(std::move(pi), std::move(a), std::move(emissions));
  return out;
}

EmRun run_em(const HmmModel& init, const ObservationSequence& obs, const TrainingConfig& config) {
  EmRun run;
  try {
    HmmModel model = init;
    for (int it = 0; it < config.max_iterations; ++it) {
      EmStepResult step = em_step(model, obs, config.ridge_epsilon);
      run.starvation_events += static_cast<int>(step.reinitialized_states.size());
      run.loglik_trace.push_back(step.log_likelihood_before);
      model = std::move(step.model);
      ++run.n_iterations;
      if (run.loglik_trace.size() >= 2) {
        const double prev = run.loglik_trace[run.loglik_trace.size() - 2];
        const double gain = run.loglik_trace.back() - prev;
        const double scale = std::abs(prev) > 0.0 ? std::abs(prev) : 1.0;
        if (gain / scale < config.loglik_rel_tolerance && step.reinitialized_states.empty()) {
          run.converged = true;
          break;
        }
      }
    }
    run.loglik_trace.push_back(forward(model, obs).log_likelihood);
    if (!std::isfinite(run.loglik_trace.back())) throw NumericError("non-finite log-likelihood");
    run.model = std::move(model);
  } catch (const Error& e) {
    run.model.reset();
    run.failure = e.what();
  }
  return run;
}

HmmModel sort_states_by_loss(const HmmModel& model) {
  const int k = model.n_states();
  const int c = loss_component(model.dim());
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return model.emission(a).mean()(c) < model.emission(b).mean()(c);
  });
  return model.permuted(order);
}

FitResult fit(const ObservationSequence& obs, const TrainingConfig& config) {
  config.validate();
  const int n = obs.length();
  if (n < std::max(config.n_states, 2)) {
    throw InputError("fit needs at least max(K, 2) = " + std::to_string(std::max(config.n_states, 2)) +
                     " observations, got " + std::to_string(n));
  }

  std::vector<RestartDiagnostics> diags;
  std::optional<HmmModel> best_model;
  int best_index = -1;
  double best_ll = -std::numeric_limits<double>::infinity();
  EmRun best_run;

  for (int r = 0; r < config.n_restarts; ++r) {
    RestartDiagnostics diag;
    diag.restart = r;
    diag.seed = config.base_seed + static_cast<std::uint64_t>(r);
    EmRun run;
    try {
      run = run_em(kmeans_init(obs, config, diag.seed), obs, config);
    } catch (const Error& e) {
      run.failure = e.what();
    }
    diag.ok = run.model.has_value();
    diag.failure = run.failure;
    diag.loglik_trace = run.loglik_trace;
    diag.n_iterations = run.n_iterations;
    diag.converged = run.converged;
    diag.starvation_events = run.starvation_events;
    diags.push_back(diag);
    if (diag.ok && run.loglik_trace.back() > best_ll) {
      best_ll = run.loglik_trace.back();
      best_index = r;
      best_model = run.model;
      best_run = std::move(run);
    }
  }

  if (best_index < 0) {
    std::string msg = "all " + std::to_string(config.n_restarts) + " EM restarts failed:";
    for (const auto& dg : diags) msg += " [restart " + std::to_string(dg.restart) + ": " + dg.failure + "]";
    throw TrainingError(msg);
  }

  const int p = free_parameter_count(config.n_states, obs.dim());
  FitResult res{.model = sort_states_by_loss(*best_model), .loglik_trace = {}, .restarts = {}};
  res.final_log_likelihood = best_ll;
  res.loglik_trace = best_run.loglik_trace;
  res.n_iterations = best_run.n_iterations;
  res.restart_index = best_index;
  res.n_parameters = p;
  res.aic = aic(best_ll, p);
  res.bic = bic(best_ll, p, n);
  res.converged = best_run.converged;
  res.starvation_reinit = best_run.starvation_events > 0;
  res.restarts = std::move(diags);
  return res;
}

std::vector<SelectionRow> select_states(const ObservationSequence& obs,
                                        const std::vector<int>& candidates,
                                        const TrainingConfig& config) {
  std::vector<SelectionRow> rows;
  for (int k : candidates) {
    if (k < 1 || k > 6) throw InputError("candidate state count " + std::to_string(k) + " outside 1..6");
  }
  for (int k : candidates) {
    SelectionRow row;
    row.n_states = k;
    TrainingConfig cfg = config;
    cfg.n_states = k;
    if (k > 1) cfg.sticky_diag_init = std::max(cfg.sticky_diag_init, 1.0 / k);
    try {
      FitResult fr = fit(obs, cfg);
      row.fitted = true;
      row.aic = fr.aic;
      row.bic = fr.bic;
      row.final_log_likelihood = fr.final_log_likelihood;
    } catch (const Error& e) {
      row.failure = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ophmm
