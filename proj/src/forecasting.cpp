#include "ophmm/forecasting.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

#include "ophmm/errors.hpp"
#include "ophmm/util.hpp"

namespace ophmm {

void ForecastConfig::validate() const {
  if (!(quantile_level > 0.0 && quantile_level < 1.0)) {
    throw InputError("quantile_level must lie in (0, 1)");
  }
  if (n_samples < 1) throw InputError("n_samples must be >= 1");
}

int ForecastConfig::resolve_loss_component(int dim) const {
  const int c = loss_component.value_or(dim - 1);
  if (c < 0 || c >= dim) {
    throw InputError("loss component " + std::to_string(c) + " out of range for dimension " +
                     std::to_string(dim));
  }
  return c;
}

double PredictiveMixture::density(double y) const {
  double total = 0.0;
  for (Eigen::Index j = 0; j < weights.size(); ++j) {
    if (weights(j) > 0.0) total += weights(j) * std::exp(normal_log_pdf(y, means(j), variances(j)));
  }
  return total;
}

double PredictiveMixture::cdf(double y) const {
  double total = 0.0;
  for (Eigen::Index j = 0; j < weights.size(); ++j) {
    if (weights(j) > 0.0) total += weights(j) * normal_cdf(y, means(j), variances(j));
  }
  return total;
}

double PredictiveMixture::quantile(double level, double tol) const {
  if (!(level > 0.0 && level < 1.0)) throw InputError("quantile level must lie in (0, 1)");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (Eigen::Index j = 0; j < weights.size(); ++j) {
    if (!(weights(j) > 0.0)) continue;
    const double sd = std::sqrt(variances(j));
    lo = std::min(lo, means(j) - 40.0 * sd);
    hi = std::max(hi, means(j) + 40.0 * sd);
  }
  const double target = level * weights.sum();
  for (int it = 0; it < 500 && hi - lo > tol * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (cdf(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

PredictiveMixture predictive_mixture(const HmmModel& model, const Eigen::VectorXd& filtered,
                                     int loss_component) {
  if (filtered.size() != model.n_states()) throw InputError("filtered belief has wrong length");
  if (loss_component < 0 || loss_component >= model.dim()) {
    throw InputError("loss component " + std::to_string(loss_component) + " out of range");
  }
  PredictiveMixture mix;
  mix.weights = (filtered.transpose() * model.transition()).transpose();
  const int k = model.n_states();
  mix.means.resize(k);
  mix.variances.resize(k);
  for (int j = 0; j < k; ++j) {
    mix.means(j) = model.emission(j).mean()(loss_component);
    mix.variances(j) = model.emission(j).covariance()(loss_component, loss_component);
  }
  return mix;
}

PredictiveMixture predictive_mixture(const HmmModel& model, const ObservationSequence& history,
                                     int loss_component) {
  return predictive_mixture(model, filtered_posterior(model, history), loss_component);
}

double predictive_density(const HmmModel& model, const ObservationSequence& history, double y,
                          std::optional<int> loss_component) {
  const int c = loss_component.value_or(model.dim() - 1);
  return predictive_mixture(model, history, c).density(y);
}

std::size_t empirical_quantile_rank(double level, std::size_t m) {
  // Guard against level * m landing a few ulps above an integer.
  const double raw = level * static_cast<double>(m);
  auto rank = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
  return std::clamp<std::size_t>(rank, 1, m);
}

std::vector<double> sample_predictive(const HmmModel& model, const Eigen::VectorXd& filtered,
                                      int loss_component, int n_samples, Rng& rng) {
  const int k = model.n_states();
  std::vector<double> mean(static_cast<std::size_t>(k));
  std::vector<double> sd(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    mean[static_cast<std::size_t>(j)] = model.emission(j).mean()(loss_component);
    sd[static_cast<std::size_t>(j)] = std::sqrt(model.emission(j).covariance()(loss_component, loss_component));
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> draws(static_cast<std::size_t>(n_samples));
  for (auto& y : draws) {
    const int current = sample_categorical(filtered, rng);
    const auto next = static_cast<std::size_t>(
        sample_categorical(model.transition().row(current).transpose(), rng));
    y = mean[next] + sd[next] * normal(rng);
  }
  std::sort(draws.begin(), draws.end());
  return draws;
}

namespace {

QuantileEstimate estimate_from_filtered(const HmmModel& model, const Eigen::VectorXd& filtered,
                                        int loss_component, const ForecastConfig& config, Rng& rng) {
  QuantileEstimate est;
  if (config.method == QuantileMethod::exact) {
    est.epsilon_hat = predictive_mixture(model, filtered, loss_component).quantile(config.quantile_level);
    return est;
  }
  const auto draws = sample_predictive(model, filtered, loss_component, config.n_samples, rng);
  const std::size_t rank = empirical_quantile_rank(config.quantile_level, draws.size());
  est.epsilon_hat = draws[rank - 1];
  double sum = 0.0;
  for (double v : draws) sum += v;
  est.samples = {static_cast<int>(draws.size()), sum / static_cast<double>(draws.size()),
                 draws.front(), draws.back()};
  return est;
}

}  // namespace

QuantileEstimate predictive_quantile(const HmmModel& model, const ObservationSequence& history,
                                     const ForecastConfig& config) {
  config.validate();
  const int c = config.resolve_loss_component(model.dim());
  Rng rng(config.seed);
  return estimate_from_filtered(model, filtered_posterior(model, history), c, config, rng);
}

int high_loss_state(const HmmModel& model, int loss_component) {
  int best = 0;
  for (int j = 1; j < model.n_states(); ++j) {
    if (model.emission(j).mean()(loss_component) > model.emission(best).mean()(loss_component)) best = j;
  }
  return best;
}

QuantilePath quantile_path(const HmmModel& model, const ObservationSequence& obs,
                           const ForecastConfig& config, int start_index) {
  config.validate();
  if (start_index < 1) throw InputError("start_index must be >= 1");
  const int c = config.resolve_loss_component(model.dim());
  const int top = high_loss_state(model, c);
  const ForwardResult fwd = forward(model, obs);

  QuantilePath path;
  for (int n = start_index; n < obs.length(); ++n) {
    const Eigen::VectorXd filtered = fwd.alpha_star.row(n - 1).transpose();
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(n)));
    const QuantileEstimate est = estimate_from_filtered(model, filtered, c, config, rng);
    path.periods.push_back(obs.labels()[static_cast<std::size_t>(n)]);
    path.predicted_quantiles.push_back(est.epsilon_hat);
    path.high_state_probability.push_back(std::clamp(filtered(top), 0.0, 1.0));
  }
  return path;
}

void write_quantile_path(std::ostream& out, const QuantilePath& path) {
  out << "period,predicted_quantile,filtered_high_state_prob\n";
  for (std::size_t i = 0; i < path.periods.size(); ++i) {
    out << path.periods[i] << ',' << format_double(path.predicted_quantiles[i]) << ','
        << format_double(path.high_state_probability[i]) << '\n';
  }
}

QuantilePath read_quantile_path(std::istream& in) {
  std::string line;
  long line_no = 1;
  if (!std::getline(in, line) ||
      trim(line) != "period,predicted_quantile,filtered_high_state_prob") {
    throw IngestionError("expected header 'period,predicted_quantile,filtered_high_state_prob'", 1);
  }
  QuantilePath path;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 3) throw IngestionError("expected 3 fields", line_no);
    const auto q = parse_double(f[1]);
    const auto p = parse_double(f[2]);
    if (!q || !p) throw IngestionError("unparseable number", line_no);
    path.periods.push_back(f[0]);
    path.predicted_quantiles.push_back(*q);
    path.high_state_probability.push_back(*p);
  }
  return path;
}

}  // namespace ophmm
