#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ophmm/errors.hpp"
#include "ophmm/hmm.hpp"
#include "ophmm/model_io.hpp"
#include "oracles.hpp"

using namespace ophmm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

HmmModel two_state_1d(double a01 = 0.3, double a10 = 0.2) {
  MatrixXd a(2, 2);
  a << 1 - a01, a01, a10, 1 - a10;
  return HmmModel(Eigen::Vector2d(0.6, 0.4), a,
                  {Gaussian(VectorXd::Constant(1, 0.0), MatrixXd::Constant(1, 1, 1.0)),
                   Gaussian(VectorXd::Constant(1, 2.0), MatrixXd::Constant(1, 1, 1.5))});
}

ObservationSequence seq(std::initializer_list<double> ys) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(ys.size()), 1);
  Eigen::Index i = 0;
  for (double y : ys) v(i++, 0) = y;
  return ObservationSequence(v);
}

oracle::Instance instance_from(const HmmModel& m, const ObservationSequence& obs) {
  oracle::Instance inst;
  inst.k = m.n_states();
  inst.d = m.dim();
  for (int i = 0; i < inst.k; ++i) {
    inst.pi.push_back(m.initial()(i));
    oracle::Vec row;
    for (int j = 0; j < inst.k; ++j) row.push_back(m.transition()(i, j));
    inst.a.push_back(row);
    oracle::Vec mu;
    oracle::Mat cov;
    for (int r = 0; r < inst.d; ++r) {
      mu.push_back(m.emission(i).mean()(r));
      oracle::Vec cr;
      for (int c = 0; c < inst.d; ++c) cr.push_back(m.emission(i).covariance()(r, c));
      cov.push_back(cr);
    }
    inst.means.push_back(mu);
    inst.covs.push_back(cov);
  }
  for (int n = 0; n < obs.length(); ++n) {
    oracle::Vec y;
    for (int c = 0; c < inst.d; ++c) y.push_back(obs.values()(n, c));
    inst.obs.push_back(y);
  }
  return inst;
}

}  // namespace

TEST_SUITE("hmm") {

TEST_CASE("model invariants are enforced") {
  const std::vector<Gaussian> em{Gaussian(VectorXd::Zero(1), MatrixXd::Identity(1, 1)),
                                 Gaussian(VectorXd::Ones(1), MatrixXd::Identity(1, 1))};
  MatrixXd a(2, 2);
  a << 0.9, 0.1, 0.2, 0.8;
  CHECK_NOTHROW(HmmModel(Eigen::Vector2d(0.5, 0.5), a, em));
  CHECK_THROWS_AS(HmmModel(Eigen::Vector2d(0.5, 0.6), a, em), ParameterError);
  MatrixXd bad = a;
  bad(1, 1) = 0.81;
  CHECK_THROWS_AS(HmmModel(Eigen::Vector2d(0.5, 0.5), bad, em), ParameterError);
  MatrixXd neg(2, 2);
  neg << 1.1, -0.1, 0.5, 0.5;
  CHECK_THROWS_AS(HmmModel(Eigen::Vector2d(0.5, 0.5), neg, em), ParameterError);
  const std::vector<Gaussian> mixed{Gaussian(VectorXd::Zero(1), MatrixXd::Identity(1, 1)),
                                    Gaussian(VectorXd::Zero(2), MatrixXd::Identity(2, 2))};
  CHECK_THROWS(HmmModel(Eigen::Vector2d(0.5, 0.5), a, mixed));
}

TEST_CASE("observation sequence invariants") {
  MatrixXd v(2, 1);
  v << 1.0, 2.0;
  CHECK_THROWS_AS(ObservationSequence(v, {"b", "a"}), InputError);
  CHECK_THROWS_AS(ObservationSequence(v, {"a", "a"}), InputError);
  v(1, 0) = std::nan("");
  CHECK_THROWS_AS(ObservationSequence{v}, InputError);
  const ObservationSequence ok = seq({1, 2, 3});
  CHECK(ok.labels().size() == 3);
  CHECK(ok.labels()[0] < ok.labels()[1]);
  CHECK(ok.prefix(2).length() == 2);
}

TEST_CASE("single state likelihood is the sum of log densities") {
  const Gaussian g(VectorXd::Constant(1, 1.0), MatrixXd::Constant(1, 1, 2.0));
  const HmmModel m(VectorXd::Ones(1), MatrixXd::Ones(1, 1), {g});
  const ObservationSequence obs = seq({0.3, -1.2, 4.0, 2.2});
  double want = 0.0;
  for (int n = 0; n < obs.length(); ++n) want += g.log_density(obs.row(n));
  CHECK(forward(m, obs).log_likelihood == doctest::Approx(want).epsilon(1e-13));
  const auto fb = posteriors(m, obs);
  for (int n = 0; n < obs.length(); ++n) CHECK(fb.phi(n, 0) == doctest::Approx(1.0));
  for (const auto& s : fb.psi) CHECK(s(0, 0) == doctest::Approx(1.0));
  CHECK(filtered_posterior(m, obs)(0) == doctest::Approx(1.0));
  CHECK(viterbi(m, obs) == std::vector<int>(4, 0));
}

TEST_CASE("K=2 N=4 forward likelihood against path enumeration") {
  const HmmModel m = two_state_1d();
  const ObservationSequence obs = seq({0.1, 1.9, 2.4, -0.3});
  const auto e = oracle::enumerate(instance_from(m, obs));
  CHECK(oracle::rel_diff(forward(m, obs).log_likelihood, std::log(e.likelihood)) < 1e-10);
}

TEST_CASE("scaled forward rows are distributions") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 30; ++rep) {
    const auto inst = oracle::random_instance(rng);
    const auto f = forward(oracle::to_model(inst), oracle::to_obs(inst));
    for (Eigen::Index n = 0; n < f.alpha_star.rows(); ++n) CHECK(std::abs(f.alpha_star.row(n).sum() - 1.0) < 1e-9);
    CHECK(std::abs(f.log_likelihood + f.log_scales.sum()) < 1e-9 * std::max(1.0, std::abs(f.log_likelihood)));
  }
}

TEST_CASE("far-tail observation survives scaling, astronomically far one raises") {
  const HmmModel m = two_state_1d();
  CHECK(std::isfinite(forward(m, seq({0.0, 60.0, 1.0})).log_likelihood));
  try {
    forward(m, seq({0.0, 1.0, 1e200}));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.index() == 2);
  }
}

TEST_CASE("backward with a single observation") {
  const HmmModel m = two_state_1d();
  const ObservationSequence obs = seq({0.7});
  const auto f = forward(m, obs);
  const MatrixXd b = backward(m, obs, f.log_scales);
  const double s1 = std::exp(f.log_scales(0));
  CHECK(b(0, 0) == doctest::Approx(s1).epsilon(1e-14));
  CHECK(b(0, 1) == doctest::Approx(s1).epsilon(1e-14));
  CHECK_THROWS_AS(backward(m, obs, VectorXd::Zero(2)), InputError);
}

TEST_CASE("backward termination recovers the forward likelihood") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    const auto inst = oracle::random_instance(rng);
    const HmmModel m = oracle::to_model(inst);
    const ObservationSequence obs = oracle::to_obs(inst);
    const auto f = forward(m, obs);
    const MatrixXd b = backward(m, obs, f.log_scales);
    // beta*_1 = (prod_{n>=1} s_n) beta_1, so sum_k beta*_1 pi f = L * prod s = 1.
    double term = 0.0;
    for (int k = 0; k < m.n_states(); ++k) {
      term += b(0, k) * m.initial()(k) * std::exp(m.emission(k).log_density(obs.row(0)));
    }
    const double ll_backward = std::log(term) - f.log_scales.sum();
    CHECK(oracle::rel_diff(ll_backward, f.log_likelihood) < 1e-9);
  }
}

TEST_CASE("K=2 N=3 unscaled backward against suffix enumeration") {
  const HmmModel m = two_state_1d(0.4, 0.25);
  const ObservationSequence obs = seq({1.0, -0.5, 2.5});
  const auto e = oracle::enumerate(instance_from(m, obs));
  const auto f = forward(m, obs);
  const MatrixXd b = backward(m, obs, f.log_scales);
  for (int n = 0; n < 3; ++n) {
    // beta*_n = (prod_{t>=n} s_t) beta_n
    const double unscale = std::exp(-f.log_scales.tail(3 - n).sum());
    for (int k = 0; k < 2; ++k) {
      CHECK(oracle::rel_diff(b(n, k) * unscale, e.beta[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)]) <
            1e-10);
    }
  }
}

TEST_CASE("K=2 N=3 smoothed posteriors against enumeration") {
  const HmmModel m = two_state_1d(0.4, 0.25);
  const ObservationSequence obs = seq({1.0, -0.5, 2.5});
  const auto e = oracle::enumerate(instance_from(m, obs));
  const auto fb = posteriors(m, obs);
  for (int n = 0; n < 3; ++n) {
    for (int k = 0; k < 2; ++k) {
      CHECK(std::abs(fb.phi(n, k) - e.phi[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)]) < 1e-10);
    }
  }
  for (int n = 0; n < 2; ++n) {
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        CHECK(std::abs(fb.psi[static_cast<std::size_t>(n)](i, j) -
                       e.psi[static_cast<std::size_t>(n)][static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) <
              1e-10);
      }
    }
  }
}

TEST_CASE("posterior invariants on random instances") {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    const auto inst = oracle::random_instance(rng);
    const auto fb = posteriors(oracle::to_model(inst), oracle::to_obs(inst));
    for (Eigen::Index n = 0; n < fb.phi.rows(); ++n) {
      CHECK(std::abs(fb.phi.row(n).sum() - 1.0) < 1e-9);
      CHECK(fb.phi.row(n).minCoeff() >= -1e-12);
    }
    for (std::size_t n = 0; n < fb.psi.size(); ++n) {
      CHECK(std::abs(fb.psi[n].sum() - 1.0) < 1e-9);
      const VectorXd marg = fb.psi[n].rowwise().sum();
      for (int i = 0; i < inst.k; ++i) CHECK(std::abs(marg(i) - fb.phi(static_cast<Eigen::Index>(n), i)) < 1e-9);
    }
  }
}

TEST_CASE("filtered posterior with one observation is the normalized prior-likelihood product") {
  const HmmModel m = two_state_1d();
  const ObservationSequence obs = seq({1.3});
  const VectorXd got = filtered_posterior(m, obs);
  const double w0 = 0.6 * std::exp(-0.5 * 1.3 * 1.3) / std::sqrt(2 * M_PI);
  const double w1 = 0.4 * std::exp(-0.5 * 0.7 * 0.7 / 1.5) / std::sqrt(2 * M_PI * 1.5);
  CHECK(got(0) == doctest::Approx(w0 / (w0 + w1)).epsilon(1e-13));
  CHECK(got(1) == doctest::Approx(w1 / (w0 + w1)).epsilon(1e-13));
}

TEST_CASE("filtered posterior concentrates on a far-separated state") {
  MatrixXd a = MatrixXd::Constant(2, 2, 0.5);
  const HmmModel m(Eigen::Vector2d(0.5, 0.5), a,
                   {Gaussian(VectorXd::Constant(1, 0.0), MatrixXd::Identity(1, 1)),
                    Gaussian(VectorXd::Constant(1, 10.0), MatrixXd::Identity(1, 1))});
  CHECK(filtered_posterior(m, seq({0.0, 0.5, 10.0}))(1) >= 0.99);
}

TEST_CASE("viterbi against enumeration and posterior-argmax path") {
  const HmmModel m = two_state_1d();
  const ObservationSequence obs = seq({0.1, 1.9, 2.4, -0.3});
  const auto e = oracle::enumerate(instance_from(m, obs));
  CHECK(viterbi(m, obs) == e.best_path);

  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 60; ++rep) {
    const auto inst = oracle::random_instance(rng);
    const HmmModel mm = oracle::to_model(inst);
    const ObservationSequence oo = oracle::to_obs(inst);
    const auto path = viterbi(mm, oo);
    const auto en = oracle::enumerate(inst);
    CHECK(std::abs(joint_log_density(mm, oo, path) - std::log(en.best_joint)) < 1e-9);
    const auto fb = posteriors(mm, oo);
    std::vector<int> greedy;
    for (Eigen::Index n = 0; n < fb.phi.rows(); ++n) {
      Eigen::Index arg = 0;
      fb.phi.row(n).maxCoeff(&arg);
      greedy.push_back(static_cast<int>(arg));
    }
    const double g = joint_log_density(mm, oo, greedy);
    CHECK(joint_log_density(mm, oo, path) >= g - 1e-12);
  }
}

TEST_CASE("viterbi ties resolve to the lexicographically smallest path") {
  // Symmetric states with identical emissions: every path has the same joint
  // density, so the all-zero path must win.
  const Gaussian g(VectorXd::Zero(1), MatrixXd::Identity(1, 1));
  const HmmModel m(Eigen::Vector2d(0.5, 0.5), MatrixXd::Constant(2, 2, 0.5), {g, g});
  CHECK(viterbi(m, seq({0.3, -1.0, 2.0, 0.0})) == std::vector<int>(4, 0));

  // Mirror-symmetric model; observation at the midpoint makes 0-first and
  // 1-first paths tie.
  MatrixXd a(2, 2);
  a << 0.9, 0.1, 0.1, 0.9;
  const HmmModel sym(Eigen::Vector2d(0.5, 0.5), a,
                     {Gaussian(VectorXd::Constant(1, -1.0), MatrixXd::Identity(1, 1)),
                      Gaussian(VectorXd::Constant(1, 1.0), MatrixXd::Identity(1, 1))});
  CHECK(viterbi(sym, seq({0.0, 0.0})) == std::vector<int>{0, 0});
}

TEST_CASE("simulate degenerate chains") {
  Rng rng(1);
  const Gaussian g(VectorXd::Zero(1), MatrixXd::Identity(1, 1));
  const HmmModel one(VectorXd::Ones(1), MatrixXd::Ones(1, 1), {g});
  const auto s1 = simulate(one, 50, rng);
  CHECK(s1.states == std::vector<int>(50, 0));
  CHECK(s1.obs.length() == 50);

  const HmmModel absorbing(Eigen::Vector2d(0.5, 0.5), MatrixXd::Identity(2, 2),
                           {g, Gaussian(VectorXd::Ones(1), MatrixXd::Identity(1, 1))});
  for (int rep = 0; rep < 5; ++rep) {
    const auto s = simulate(absorbing, 40, rng);
    CHECK(std::all_of(s.states.begin(), s.states.end(), [&](int x) { return x == s.states[0]; }));
  }
  CHECK_THROWS_AS(simulate(one, 0, rng), InputError);
}

TEST_CASE("simulated transition frequencies") {
  MatrixXd a(2, 2);
  a << 0.95, 0.05, 0.05, 0.95;
  const HmmModel m(Eigen::Vector2d(0.5, 0.5), a,
                   {Gaussian(VectorXd::Zero(1), MatrixXd::Identity(1, 1)),
                    Gaussian(VectorXd::Ones(1), MatrixXd::Identity(1, 1))});
  Rng rng(77);
  const auto s = simulate(m, 100000, rng);
  MatrixXd counts = MatrixXd::Zero(2, 2);
  for (std::size_t t = 1; t < s.states.size(); ++t) counts(s.states[t - 1], s.states[t]) += 1.0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) CHECK(std::abs(counts(i, j) / counts.row(i).sum() - a(i, j)) < 0.005);
  }
}

TEST_CASE("simulation is deterministic given the seed") {
  const HmmModel m = two_state_1d();
  Rng a(9), b(9);
  const auto x = simulate(m, 30, a);
  const auto y = simulate(m, 30, b);
  CHECK(x.states == y.states);
  CHECK(x.obs.values() == y.obs.values());
}

TEST_CASE("true model scores better than a mean-shifted one") {
  MatrixXd a(2, 2);
  a << 0.9, 0.1, 0.2, 0.8;
  MatrixXd s(2, 2);
  s << 1.0, 0.3, 0.3, 2.0;
  const HmmModel truth(Eigen::Vector2d(0.5, 0.5), a,
                       {Gaussian(Eigen::Vector2d(0, 0), s), Gaussian(Eigen::Vector2d(4, 6), s)});
  const HmmModel shifted(Eigen::Vector2d(0.5, 0.5), a,
                         {Gaussian(Eigen::Vector2d(2, 2.8), s), Gaussian(Eigen::Vector2d(6, 8.8), s)});
  Rng rng(4);
  const auto sim = simulate(truth, 1500, rng);
  CHECK(forward(truth, sim.obs).log_likelihood / 1500 > forward(shifted, sim.obs).log_likelihood / 1500);
}

TEST_CASE("model file round-trips bit-exactly") {
  MatrixXd a(2, 2);
  a << 0.1 + 0.2, 0.7, 1.0 / 3.0, 2.0 / 3.0;
  MatrixXd s(2, 2);
  s << std::sqrt(2.0), 0.1, 0.1, M_PI;
  const HmmModel m(Eigen::Vector2d(1.0 / 7.0, 6.0 / 7.0), a,
                   {Gaussian(Eigen::Vector2d(1e-300, -2.5e10), s), Gaussian(Eigen::Vector2d(0.1, 0.2), s)});
  const ModelMetadata meta{"abc", "def", "2005-W03"};
  const std::string text = serialize_model(m, meta);
  const ModelFile back = parse_model(text);
  CHECK(back.model == m);
  CHECK(back.metadata.config_hash == "abc");
  CHECK(back.metadata.timestamp == "2005-W03");
  CHECK(serialize_model(back.model, back.metadata) == text);
  CHECK_THROWS_AS(parse_model("{}"), InputError);
  CHECK_THROWS_AS(parse_model("not json"), InputError);
}

}  // TEST_SUITE
