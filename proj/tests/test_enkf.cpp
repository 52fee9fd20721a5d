#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "agekf/enkf.hpp"
#include "agekf/rng.hpp"
#include "oracles.hpp"

using namespace agekf;
using namespace agekf::enkf;

namespace {

FilterConfig small_config(int m, std::uint64_t seed) {
  FilterConfig config;
  config.delta_t = 0.1;
  config.update_interval = 1;
  config.ensemble_size = m;
  config.seed = seed;
  config.n_steps = 10;
  config.threads = 1;
  return config;
}

StateSpaceModel scalar_model(double drift_coef, double q, double r) {
  StateSpaceModel model;
  model.dim_x = 1;
  model.dim_z = 1;
  model.drift = [drift_coef](Eigen::Ref<const Eigen::VectorXd> x, double,
                             Eigen::Ref<Eigen::VectorXd> out) { out[0] = drift_coef * x[0]; };
  model.measure = [](Eigen::Ref<const Eigen::VectorXd> x, double,
                     Eigen::Ref<Eigen::VectorXd> out) { out[0] = x[0]; };
  model.process_cov = [q](double) { return CovSpec::diagonal(Eigen::VectorXd::Constant(1, q)); };
  model.obs_cov = [r](double) { return CovSpec::diagonal(Eigen::VectorXd::Constant(1, r)); };
  return model;
}

}  // namespace

// ---------------------------------------------------------------------------
// Counter-based RNG

TEST_CASE("random stream determinism and independence") {
  RandomStream a(42, 7, 3), b(42, 7, 3);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());

  // different stream ids decorrelate
  RandomStream s1(42, 1, 0), s2(42, 2, 0);
  double cross = 0.0, mean1 = 0.0, mean2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u1 = s1.uniform(), u2 = s2.uniform();
    mean1 += u1;
    mean2 += u2;
    cross += u1 * u2;
  }
  mean1 /= n;
  mean2 /= n;
  CHECK(std::fabs(mean1 - 0.5) < 0.01);
  CHECK(std::fabs(mean2 - 0.5) < 0.01);
  const double covariance = cross / n - mean1 * mean2;
  CHECK(std::fabs(covariance) < 4.0 / 12.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("random stream uniform and normal moments") {
  RandomStream stream(1, 0, 0);
  const int n = 50000;
  double previous = stream.uniform();
  double sum = previous, sum_sq = previous * previous, lag = 0.0;
  for (int i = 1; i < n; ++i) {
    const double u = stream.uniform();
    sum += u;
    sum_sq += u * u;
    lag += u * previous;
    previous = u;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(std::fabs(mean - 0.5) < 0.007);
  CHECK(std::fabs(var - 1.0 / 12.0) < 0.003);
  CHECK(std::fabs(lag / (n - 1) - 0.25) < 0.005);  // E[u_i u_{i-1}] = 1/4

  RandomStream gauss(1, 1, 0);
  double g1 = 0.0, g2 = 0.0, g3 = 0.0, g4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = gauss.normal();
    g1 += z;
    g2 += z * z;
    g3 += z * z * z;
    g4 += z * z * z * z;
  }
  CHECK(std::fabs(g1 / n) < 0.02);
  CHECK(std::fabs(g2 / n - 1.0) < 0.03);
  CHECK(std::fabs(g3 / n) < 0.08);
  CHECK(std::fabs(g4 / n - 3.0) < 0.2);
}

// ---------------------------------------------------------------------------
// CovSpec

TEST_CASE("covspec dense materialization matches structure") {
  const int dim = 4;
  auto ones = CovSpec::scaled_ones(dim, 0.25);
  CHECK(ones.dense_matrix().isApprox(Eigen::MatrixXd::Constant(dim, dim, 0.25)));

  Eigen::VectorXd variances(dim);
  variances << 1.0, 0.5, 0.0, 2.0;
  auto diag = CovSpec::diagonal(variances);
  CHECK(diag.dense_matrix().isApprox(Eigen::MatrixXd(variances.asDiagonal())));

  Eigen::VectorXd extra = Eigen::VectorXd::Zero(dim);
  extra[1] = 0.75;
  auto combo = CovSpec::scaled_ones_plus_diag(0.1, extra);
  Eigen::MatrixXd expected = Eigen::MatrixXd::Constant(dim, dim, 0.1);
  expected(1, 1) += 0.75;
  CHECK(combo.dense_matrix().isApprox(expected));
}

TEST_CASE("covspec sampling reproduces the covariance") {
  const int dim = 3;
  Eigen::MatrixXd base(dim, dim);
  base << 1.0, 0.3, 0.0, 0.3, 0.5, 0.2, 0.0, 0.2, 0.8;
  const std::vector<CovSpec> specs = {
      CovSpec::dense(base),
      CovSpec::scaled_ones(dim, 0.5),
      CovSpec::diagonal((Eigen::VectorXd(dim) << 0.2, 1.0, 0.05).finished()),
      CovSpec::scaled_ones_plus_diag(0.3, (Eigen::VectorXd(dim) << 0.0, 0.4, 0.0).finished())};
  int spec_index = 0;
  for (const auto& spec : specs) {
    const int n = 40000;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd draw(dim);
    RandomStream stream(99, static_cast<std::uint64_t>(spec_index++), 0);
    for (int i = 0; i < n; ++i) {
      spec.sample(stream, draw);
      mean += draw;
      sum += draw * draw.transpose();
    }
    mean /= n;
    const Eigen::MatrixXd sample_cov = sum / n - mean * mean.transpose();
    const Eigen::MatrixXd want = spec.dense_matrix();
    CHECK((sample_cov - want).cwiseAbs().maxCoeff() < 0.05);
  }
}

TEST_CASE("covspec rejects invalid input") {
  Eigen::MatrixXd asym(2, 2);
  asym << 1.0, 0.5, -0.5, 1.0;
  CHECK_THROWS_AS(CovSpec::dense(asym), ConfigError);

  Eigen::MatrixXd indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3, -1
  CHECK_THROWS_AS(CovSpec::dense(indefinite), ConfigError);

  CHECK_THROWS_AS(CovSpec::diagonal((Eigen::VectorXd(1) << -0.1).finished()), ConfigError);
}

TEST_CASE("covspec submatrix") {
  Eigen::VectorXd extra(4);
  extra << 0.1, 0.2, 0.3, 0.4;
  auto combo = CovSpec::scaled_ones_plus_diag(0.5, extra);
  auto sub = combo.submatrix({1, 3});
  Eigen::MatrixXd expected = Eigen::MatrixXd::Constant(2, 2, 0.5);
  expected(0, 0) += 0.2;
  expected(1, 1) += 0.4;
  CHECK(sub.dense_matrix().isApprox(expected));
}

// ---------------------------------------------------------------------------
// Transforms

TEST_CASE("positivity transform round trip") {
  PositivityTransform transform;
  transform.indices = {0, 2};
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> positive(0.01, 10.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd v(4);
    for (int i = 0; i < 4; ++i) v[i] = positive(rng);
    const Eigen::VectorXd round = to_physical(to_latent(v, transform), transform);
    CHECK((round - v).cwiseAbs().maxCoeff() < 1e-14 * v.cwiseAbs().maxCoeff());
  }

  PositivityTransform empty;
  Eigen::VectorXd v(3);
  v << -1.0, 0.0, 2.0;
  CHECK(to_physical(v, empty) == v);
  CHECK(to_latent(v, empty) == v);

  Eigen::VectorXd latent(1);
  latent << std::log(0.08);
  PositivityTransform single;
  single.indices = {0};
  CHECK(to_physical(latent, single)[0] == doctest::Approx(0.08).epsilon(1e-14));

  Eigen::VectorXd bad(1);
  bad << -0.5;
  CHECK_THROWS_AS(to_latent(bad, single), std::domain_error);
}

// ---------------------------------------------------------------------------
// init_ensemble

TEST_CASE("init_ensemble zero covariance copies the mean") {
  Eigen::VectorXd mean(3);
  mean << 1.0, -2.0, 0.5;
  const GaussianInit init{mean, CovSpec::diagonal(Eigen::VectorXd::Zero(3))};
  const Ensemble ens = init_ensemble(init, small_config(16, 11));
  for (int i = 0; i < ens.size(); ++i) CHECK(ens.members.col(i) == mean);
}

TEST_CASE("init_ensemble law of large numbers") {
  Eigen::VectorXd mean(3);
  mean << 2.0, -1.0, 0.0;
  Eigen::VectorXd variances(3);
  variances << 1.0, 4.0, 0.25;
  const GaussianInit init{mean, CovSpec::diagonal(variances)};
  const int m = 100000;
  const Ensemble ens = init_ensemble(init, small_config(m, 3));
  const Eigen::VectorXd sample_mean = ens.members.rowwise().mean();
  for (int k = 0; k < 3; ++k) {
    const double tolerance = 4.0 * std::sqrt(variances[k] / m);
    CHECK(std::fabs(sample_mean[k] - mean[k]) < tolerance);
  }
}

TEST_CASE("init_ensemble deterministic in the seed") {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(2);
  const GaussianInit init{mean, CovSpec::scaled_ones(2, 1.0)};
  const Ensemble a = init_ensemble(init, small_config(32, 123));
  const Ensemble b = init_ensemble(init, small_config(32, 123));
  CHECK(a.members == b.members);
  const Ensemble c = init_ensemble(init, small_config(32, 124));
  CHECK(a.members != c.members);
}

// ---------------------------------------------------------------------------
// forecast

TEST_CASE("forecast identity dynamics with zero noise") {
  auto model = scalar_model(0.0, 0.0, 1.0);
  model.process_cov = [](double) { return CovSpec::zero(1); };
  const GaussianInit init{Eigen::VectorXd::Zero(1), CovSpec::diagonal(Eigen::VectorXd::Ones(1))};
  const Ensemble before = init_ensemble(init, small_config(8, 1));
  const Ensemble after = forecast(before, model, {}, 0.0, small_config(8, 1), 0);
  CHECK(after.members == before.members);
  CHECK(after.time == doctest::Approx(0.1));
}

TEST_CASE("forecast single Euler step") {
  auto model = scalar_model(-1.0, 0.0, 1.0);
  Ensemble ens;
  ens.time = 0.0;
  ens.members.resize(1, 2);
  ens.members << 1.0, 2.0;
  const Ensemble next = forecast(ens, model, {}, 0.0, small_config(2, 0), 0);
  CHECK(next.members(0, 0) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(next.members(0, 1) == doctest::Approx(1.8).epsilon(1e-15));
}

TEST_CASE("forecast matches the explicit Euler recursion over many steps") {
  const double coef = 0.7;
  auto model = scalar_model(coef, 0.0, 1.0);
  FilterConfig config = small_config(2, 0);
  Ensemble ens;
  ens.time = 0.0;
  ens.members.resize(1, 2);
  ens.members << 1.0, -0.5;

  double oracle0 = 1.0, oracle1 = -0.5;
  for (int k = 0; k < 25; ++k) {
    ens = forecast(ens, model, {}, k * config.delta_t, config, k);
    oracle0 += config.delta_t * (coef * oracle0);
    oracle1 += config.delta_t * (coef * oracle1);
  }
  CHECK(ens.members(0, 0) == oracle0);
  CHECK(ens.members(0, 1) == oracle1);
}

TEST_CASE("forecast rejects mismatched time and non-finite drift") {
  auto model = scalar_model(1.0, 0.0, 1.0);
  Ensemble ens;
  ens.time = 0.5;
  ens.members.resize(1, 2);
  ens.members << 1.0, 1.0;
  CHECK_THROWS_AS(forecast(ens, model, {}, 0.0, small_config(2, 0), 0), ConfigError);

  model.drift = [](Eigen::Ref<const Eigen::VectorXd>, double, Eigen::Ref<Eigen::VectorXd> out) {
    out[0] = std::numeric_limits<double>::quiet_NaN();
  };
  try {
    forecast(ens, model, {}, 0.5, small_config(2, 0), 0);
    FAIL("expected NumericalError");
  } catch (const NumericalError& err) {
    CHECK(std::string(err.what()).find("member") != std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// moments

TEST_CASE("ensemble moments by hand") {
  Ensemble ens;
  ens.members.resize(1, 2);
  ens.members << 1.0, 3.0;
  const auto [mean, cov] = ensemble_moments(ens);
  CHECK(mean[0] == doctest::Approx(2.0));
  CHECK(cov(0, 0) == doctest::Approx(2.0));  // 1/(M-1) normalization

  Ensemble same;
  same.members = Eigen::MatrixXd::Constant(3, 5, 1.5);
  const auto [mean2, cov2] = ensemble_moments(same);
  CHECK(cov2.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ensemble covariance symmetric PSD on random ensembles") {
  std::mt19937 rng(17);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 100; ++trial) {
    Ensemble ens;
    ens.members.resize(4, 12);
    for (int i = 0; i < ens.members.size(); ++i) ens.members.data()[i] = normal(rng);
    const auto [mean, cov] = ensemble_moments(ens);
    CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    CHECK(solver.eigenvalues().minCoeff() > -1e-12 * cov.cwiseAbs().maxCoeff());
  }
}

// ---------------------------------------------------------------------------
// update

TEST_CASE("update with member-constant measurement leaves the ensemble unchanged") {
  auto model = scalar_model(0.0, 0.0, 0.04);
  model.measure = [](Eigen::Ref<const Eigen::VectorXd>, double, Eigen::Ref<Eigen::VectorXd> out) {
    out[0] = 7.0;  // zero cross covariance, so the gain vanishes
  };
  const GaussianInit init{Eigen::VectorXd::Zero(1), CovSpec::diagonal(Eigen::VectorXd::Ones(1))};
  const Ensemble prior = init_ensemble(init, small_config(64, 2));
  Eigen::VectorXd z(1);
  z << 5.0;
  const Ensemble posterior = update(prior, z, model, {}, 0.0, small_config(64, 2), 0);
  CHECK(posterior.members == prior.members);
}

TEST_CASE("update with huge observation noise is uninformative") {
  const GaussianInit init{Eigen::VectorXd::Zero(1), CovSpec::diagonal(Eigen::VectorXd::Ones(1))};
  const Ensemble prior = init_ensemble(init, small_config(256, 9));
  Eigen::VectorXd z(1);
  z << 0.7;

  auto shift_with_r = [&](double r) {
    const Ensemble posterior =
        update(prior, z, scalar_model(0.0, 0.0, r), {}, 0.0, small_config(256, 9), 0);
    return (posterior.members - prior.members).cwiseAbs().maxCoeff();
  };
  const double informative = shift_with_r(0.04);
  const double uninformative = shift_with_r(0.04 * 1e6);
  CHECK(uninformative < 2e-2 * informative);
}

TEST_CASE("update shrinks ensemble variance toward the exact posterior") {
  const GaussianInit init{Eigen::VectorXd::Zero(1), CovSpec::diagonal(Eigen::VectorXd::Ones(1))};
  FilterConfig config = small_config(4000, 21);
  const Ensemble prior = init_ensemble(init, config);
  Eigen::VectorXd z(1);
  z << 0.25;
  const Ensemble posterior = update(prior, z, scalar_model(0.0, 0.0, 0.5), {}, 0.0, config, 0);
  const auto [pm, pc] = ensemble_moments(prior);
  const auto [qm, qc] = ensemble_moments(posterior);
  CHECK(qc(0, 0) < pc(0, 0));
  // exact posterior variance 1 * 0.5 / (1 + 0.5) = 1/3
  CHECK(qc(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(0.15));
}

TEST_CASE("masked update ignores masked coordinates") {
  StateSpaceModel model;
  model.dim_x = 2;
  model.dim_z = 2;
  model.drift = [](Eigen::Ref<const Eigen::VectorXd>, double, Eigen::Ref<Eigen::VectorXd> out) {
    out.setZero();
  };
  model.measure = [](Eigen::Ref<const Eigen::VectorXd> x, double,
                     Eigen::Ref<Eigen::VectorXd> out) { out = x; };
  model.process_cov = [](double) { return CovSpec::zero(2); };
  model.obs_cov = [](double) {
    return CovSpec::diagonal(Eigen::VectorXd::Constant(2, 0.01));
  };
  const GaussianInit init{Eigen::VectorXd::Zero(2),
                          CovSpec::diagonal(Eigen::VectorXd::Ones(2))};
  FilterConfig config = small_config(2000, 31);
  const Ensemble prior = init_ensemble(init, config);

  Eigen::VectorXd z(2);
  z << 1.0, 1000.0;  // second coordinate is garbage but masked out
  const Ensemble posterior = update(prior, z, model, {}, 0.0, config, 0, {true, false});
  const auto [mean, cov] = ensemble_moments(posterior);
  CHECK(mean[0] == doctest::Approx(1.0).epsilon(0.1));  // pulled to the observation
  CHECK(std::fabs(mean[1]) < 0.2);                      // untouched coordinate stays near 0
}

// ---------------------------------------------------------------------------
// scalar linear-Gaussian benchmark against the exact Kalman recursion

TEST_CASE("enkf tracks the exact scalar Kalman filter") {
  const double delta_t = 0.1;
  const double a_coef = 1.0 - 0.5 * delta_t;  // Euler discretization of f(x) = -0.5 x
  const double q = 0.01, r = 0.04;
  const int n_steps = 30, m = 2000;

  auto model = scalar_model(-0.5, q, r);
  FilterConfig config = small_config(m, 77);
  config.n_steps = n_steps;

  // truth and observations (test-side RNG, independent of the filter)
  std::mt19937 rng(1234);
  std::normal_distribution<double> normal;
  double truth = 1.0;
  std::vector<ScheduledObservation> schedule;
  std::vector<double> observations;
  for (int k = 1; k <= n_steps; ++k) {
    truth = a_coef * truth + std::sqrt(q) * normal(rng);
    Eigen::VectorXd z(1);
    z << truth + std::sqrt(r) * normal(rng);
    observations.push_back(z[0]);
    schedule.push_back({k * delta_t, z, {}});
  }

  const GaussianInit init{Eigen::VectorXd::Ones(1),
                          CovSpec::diagonal(Eigen::VectorXd::Constant(1, 0.25))};
  const auto estimates = run_filter(model, init, {}, schedule, config);

  oracle::ScalarKalman exact{1.0, 0.25};
  double mean_err = 0.0, var_err = 0.0;
  int count = 0;
  std::size_t obs_index = 0;
  for (const auto& estimate : estimates) {
    if (estimate.stage != Stage::posterior || !estimate.updated) continue;
    exact.predict(a_coef, q);
    exact.update(observations[obs_index++], r);
    mean_err += std::fabs(estimate.mean[0] - exact.mean) / std::sqrt(exact.var);
    var_err += std::fabs(estimate.var_diag[0] - exact.var) / exact.var;
    ++count;
  }
  REQUIRE(count == n_steps);
  mean_err /= count;
  var_err /= count;
  CHECK(mean_err < 5.0 / std::sqrt(static_cast<double>(m)));
  CHECK(var_err < 5.0 / std::sqrt(static_cast<double>(m)));
}

TEST_CASE("posterior variance never exceeds prior variance on the scalar benchmark") {
  const double delta_t = 0.1, q = 0.01, r = 0.04;
  auto model = scalar_model(-0.5, q, r);
  FilterConfig config = small_config(5000, 5);
  config.n_steps = 20;

  std::mt19937 rng(99);
  std::normal_distribution<double> normal;
  std::vector<ScheduledObservation> schedule;
  for (int k = 1; k <= config.n_steps; ++k) {
    Eigen::VectorXd z(1);
    z << std::cos(0.3 * k) + std::sqrt(r) * normal(rng);
    schedule.push_back({k * delta_t, z, {}});
  }
  const GaussianInit init{Eigen::VectorXd::Zero(1),
                          CovSpec::diagonal(Eigen::VectorXd::Ones(1))};
  const auto estimates = run_filter(model, init, {}, schedule, config);

  // pair each prior with the posterior that follows it
  for (std::size_t i = 0; i + 1 < estimates.size(); ++i) {
    if (estimates[i].stage == Stage::prior && estimates[i + 1].updated) {
      const double prior_var = estimates[i].var_diag[0];
      const double posterior_var = estimates[i + 1].var_diag[0];
      const double mc_se = prior_var * std::sqrt(2.0 / (config.ensemble_size - 1));
      CHECK(posterior_var <= prior_var + 3.0 * mc_se);
    }
  }
}

TEST_CASE("ensemble error decreases with ensemble size") {
  const double delta_t = 0.1, q = 0.01, r = 0.04;
  const double a_coef = 1.0 - 0.5 * delta_t;
  const int n_steps = 25;

  std::mt19937 rng(4321);
  std::normal_distribution<double> normal;
  std::vector<ScheduledObservation> schedule;
  std::vector<double> observations;
  double truth = 1.0;
  for (int k = 1; k <= n_steps; ++k) {
    truth = a_coef * truth + std::sqrt(q) * normal(rng);
    Eigen::VectorXd z(1);
    z << truth + std::sqrt(r) * normal(rng);
    observations.push_back(z[0]);
    schedule.push_back({k * delta_t, z, {}});
  }
  const GaussianInit init{Eigen::VectorXd::Ones(1),
                          CovSpec::diagonal(Eigen::VectorXd::Constant(1, 0.25))};

  auto mean_error = [&](int m) {
    auto model = scalar_model(-0.5, q, r);
    FilterConfig config = small_config(m, 31);
    config.n_steps = n_steps;
    const auto estimates = run_filter(model, init, {}, schedule, config);
    oracle::ScalarKalman exact{1.0, 0.25};
    double err = 0.0;
    int count = 0;
    std::size_t obs_index = 0;
    for (const auto& estimate : estimates) {
      if (estimate.stage != Stage::posterior || !estimate.updated) continue;
      exact.predict(a_coef, q);
      exact.update(observations[obs_index++], r);
      err += std::fabs(estimate.mean[0] - exact.mean) / std::sqrt(exact.var);
      ++count;
    }
    return err / count;
  };

  CHECK(mean_error(10000) < mean_error(100));
}

// ---------------------------------------------------------------------------
// run_filter orchestration

TEST_CASE("run_filter with no observations is a pure forecast") {
  auto model = scalar_model(-0.2, 0.001, 1.0);
  FilterConfig config = small_config(32, 13);
  config.n_steps = 12;
  config.update_interval = 5;
  const GaussianInit init{Eigen::VectorXd::Zero(1),
                          CovSpec::diagonal(Eigen::VectorXd::Ones(1))};
  const auto estimates = run_filter(model, init, {}, {}, config);
  REQUIRE(estimates.size() == 2 * static_cast<std::size_t>(config.n_steps) + 1);
  for (std::size_t i = 1; i < estimates.size(); i += 2) {
    CHECK(estimates[i].stage == Stage::prior);
    CHECK(estimates[i + 1].stage == Stage::posterior);
    CHECK_FALSE(estimates[i + 1].updated);
    CHECK(estimates[i].mean == estimates[i + 1].mean);
    CHECK(estimates[i].var_diag == estimates[i + 1].var_diag);
  }
}

TEST_CASE("run_filter assimilates on the configured cadence") {
  auto model = scalar_model(-0.2, 0.001, 0.01);
  FilterConfig config = small_config(32, 13);
  config.n_steps = 15;
  config.update_interval = 5;  // updates at t = 0.5, 1.0, 1.5
  const GaussianInit init{Eigen::VectorXd::Zero(1),
                          CovSpec::diagonal(Eigen::VectorXd::Ones(1))};
  std::vector<ScheduledObservation> schedule;
  for (int k = 1; k <= 3; ++k) {
    Eigen::VectorXd z(1);
    z << 0.1 * k;
    schedule.push_back({0.5 * k, z, {}});
  }
  const auto estimates = run_filter(model, init, {}, schedule, config);
  std::vector<double> update_times;
  for (const auto& estimate : estimates) {
    if (estimate.updated) update_times.push_back(estimate.time);
  }
  REQUIRE(update_times.size() == 3);
  CHECK(update_times[0] == doctest::Approx(0.5));
  CHECK(update_times[1] == doctest::Approx(1.0));
  CHECK(update_times[2] == doctest::Approx(1.5));
}

TEST_CASE("run_filter rejects misaligned observation times") {
  auto model = scalar_model(-0.2, 0.001, 0.01);
  FilterConfig config = small_config(8, 13);
  config.update_interval = 5;
  const GaussianInit init{Eigen::VectorXd::Zero(1),
                          CovSpec::diagonal(Eigen::VectorXd::Ones(1))};
  Eigen::VectorXd z(1);
  z << 0.0;
  try {
    run_filter(model, init, {}, {{0.7, z, {}}}, config);
    FAIL("expected ConfigError");
  } catch (const ConfigError& err) {
    CHECK(std::string(err.what()).find("0.7") != std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// determinism and transform positivity along a full run

TEST_CASE("run_filter deterministic and thread-count independent") {
  StateSpaceModel model;
  model.dim_x = 3;
  model.dim_z = 2;
  model.drift = [](Eigen::Ref<const Eigen::VectorXd> x, double, Eigen::Ref<Eigen::VectorXd> out) {
    out[0] = -0.3 * x[0] * x[2];
    out[1] = 0.1 * x[0];
    out[2] = 0.0;
  };
  model.measure = [](Eigen::Ref<const Eigen::VectorXd> x, double, Eigen::Ref<Eigen::VectorXd> out) {
    out = x.head(2);
  };
  model.process_cov = [](double) { return CovSpec::scaled_ones(3, 1e-4); };
  model.obs_cov = [](double) { return CovSpec::diagonal(Eigen::VectorXd::Constant(2, 0.01)); };

  PositivityTransform transform;
  transform.indices = {2};

  Eigen::VectorXd mean(3);
  mean << 1.0, 0.0, 0.1;
  const GaussianInit init{mean,
                          CovSpec::diagonal((Eigen::VectorXd(3) << 0.5, 0.5, 1.0).finished())};

  std::vector<ScheduledObservation> schedule;
  for (int k = 1; k <= 4; ++k) {
    Eigen::VectorXd z(2);
    z << std::exp(-0.1 * k), 0.05 * k;
    schedule.push_back({0.5 * k, z, {}});
  }

  auto run_with_threads = [&](int threads) {
    FilterConfig config = small_config(128, 2024);
    config.n_steps = 20;
    config.update_interval = 5;
    config.threads = threads;
    return run_filter(model, init, transform, schedule, config);
  };

  const auto serial = run_with_threads(1);
  const auto parallel = run_with_threads(2);
  const auto repeat = run_with_threads(2);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].mean == parallel[i].mean);
    CHECK(serial[i].var_diag == parallel[i].var_diag);
    CHECK(parallel[i].mean == repeat[i].mean);
  }

  // transformed coordinate stays positive in physical space throughout
  for (const auto& estimate : serial) {
    CHECK(estimate.mean_physical[2] > 0.0);
  }
}
