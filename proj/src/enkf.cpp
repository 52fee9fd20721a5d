#include "agekf/enkf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "agekf/parallel.hpp"

namespace agekf::enkf {

// ---------------------------------------------------------------------------
// CovSpec

CovSpec CovSpec::zero(int dim) {
  if (dim < 1) throw ConfigError("CovSpec: dimension must be >= 1");
  return CovSpec(Kind::zero, dim);
}

CovSpec CovSpec::diagonal(Eigen::VectorXd variances) {
  if (variances.size() < 1) throw ConfigError("CovSpec: dimension must be >= 1");
  if ((variances.array() < 0.0).any()) {
    throw ConfigError("CovSpec: diagonal variances must be nonnegative");
  }
  CovSpec spec(Kind::diagonal, static_cast<int>(variances.size()));
  spec.diag_sqrt_ = variances.array().sqrt();
  spec.diag_ = std::move(variances);
  return spec;
}

CovSpec CovSpec::scaled_ones(int dim, double variance) {
  if (dim < 1) throw ConfigError("CovSpec: dimension must be >= 1");
  if (variance < 0.0) throw ConfigError("CovSpec: ones variance must be nonnegative");
  CovSpec spec(Kind::scaled_ones, dim);
  spec.scalar_ = variance;
  return spec;
}

CovSpec CovSpec::scaled_ones_plus_diag(double variance, Eigen::VectorXd extra) {
  if (extra.size() < 1) throw ConfigError("CovSpec: dimension must be >= 1");
  if (variance < 0.0 || (extra.array() < 0.0).any()) {
    throw ConfigError("CovSpec: variances must be nonnegative");
  }
  CovSpec spec(Kind::ones_plus_diag, static_cast<int>(extra.size()));
  spec.scalar_ = variance;
  spec.diag_sqrt_ = extra.array().sqrt();
  spec.diag_ = std::move(extra);
  return spec;
}

CovSpec CovSpec::dense(const Eigen::MatrixXd& cov) {
  if (cov.rows() < 1 || cov.rows() != cov.cols()) {
    throw ConfigError("CovSpec: dense covariance must be square");
  }
  const double scale = std::max(cov.cwiseAbs().maxCoeff(), 1e-300);
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw ConfigError("CovSpec: dense covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw ConfigError("CovSpec: eigendecomposition of covariance failed");
  }
  Eigen::VectorXd eigenvalues = solver.eigenvalues();
  if ((eigenvalues.array() < -1e-10 * scale).any()) {
    throw ConfigError("CovSpec: covariance is not positive semi-definite");
  }
  eigenvalues = eigenvalues.cwiseMax(0.0);
  CovSpec spec(Kind::dense, static_cast<int>(cov.rows()));
  spec.matrix_ = cov;
  spec.factor_ = solver.eigenvectors() * eigenvalues.cwiseSqrt().asDiagonal();
  return spec;
}

bool CovSpec::is_zero() const {
  switch (kind_) {
    case Kind::zero: return true;
    case Kind::diagonal: return diag_.isZero(0.0);
    case Kind::scaled_ones: return scalar_ == 0.0;
    case Kind::ones_plus_diag: return scalar_ == 0.0 && diag_.isZero(0.0);
    case Kind::dense: return matrix_.isZero(0.0);
  }
  return false;
}

Eigen::MatrixXd CovSpec::dense_matrix() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim_, dim_);
  add_to(out);
  return out;
}

Eigen::VectorXd CovSpec::diagonal_variances() const {
  switch (kind_) {
    case Kind::zero: return Eigen::VectorXd::Zero(dim_);
    case Kind::diagonal: return diag_;
    case Kind::scaled_ones: return Eigen::VectorXd::Constant(dim_, scalar_);
    case Kind::ones_plus_diag: return diag_.array() + scalar_;
    case Kind::dense: return matrix_.diagonal();
  }
  return Eigen::VectorXd::Zero(dim_);
}

void CovSpec::add_to(Eigen::Ref<Eigen::MatrixXd> target) const {
  if (target.rows() != dim_ || target.cols() != dim_) {
    throw ConfigError("CovSpec::add_to: dimension mismatch");
  }
  switch (kind_) {
    case Kind::zero: return;
    case Kind::diagonal: target.diagonal() += diag_; return;
    case Kind::scaled_ones: target.array() += scalar_; return;
    case Kind::ones_plus_diag:
      target.array() += scalar_;
      target.diagonal() += diag_;
      return;
    case Kind::dense: target += matrix_; return;
  }
}

void CovSpec::sample(RandomStream& stream, Eigen::Ref<Eigen::VectorXd> out) const {
  if (out.size() != dim_) throw ConfigError("CovSpec::sample: dimension mismatch");
  switch (kind_) {
    case Kind::zero:
      out.setZero();
      return;
    case Kind::diagonal:
      for (int i = 0; i < dim_; ++i) out[i] = diag_sqrt_[i] * stream.normal();
      return;
    case Kind::scaled_ones:
      out.setConstant(std::sqrt(scalar_) * stream.normal());
      return;
    case Kind::ones_plus_diag: {
      const double shared = std::sqrt(scalar_) * stream.normal();
      for (int i = 0; i < dim_; ++i) out[i] = shared + diag_sqrt_[i] * stream.normal();
      return;
    }
    case Kind::dense: {
      Eigen::VectorXd xi(dim_);
      for (int i = 0; i < dim_; ++i) xi[i] = stream.normal();
      out = factor_ * xi;
      return;
    }
  }
}

CovSpec CovSpec::submatrix(const std::vector<int>& keep) const {
  if (keep.empty()) throw ConfigError("CovSpec::submatrix: empty selection");
  for (int idx : keep) {
    if (idx < 0 || idx >= dim_) throw ConfigError("CovSpec::submatrix: index out of range");
  }
  const int k = static_cast<int>(keep.size());
  switch (kind_) {
    case Kind::zero: return zero(k);
    case Kind::diagonal: {
      Eigen::VectorXd sub(k);
      for (int i = 0; i < k; ++i) sub[i] = diag_[keep[i]];
      return diagonal(std::move(sub));
    }
    case Kind::scaled_ones: return scaled_ones(k, scalar_);
    case Kind::ones_plus_diag: {
      Eigen::VectorXd sub(k);
      for (int i = 0; i < k; ++i) sub[i] = diag_[keep[i]];
      return scaled_ones_plus_diag(scalar_, std::move(sub));
    }
    case Kind::dense: {
      Eigen::MatrixXd sub(k, k);
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) sub(i, j) = matrix_(keep[i], keep[j]);
      }
      return dense(sub);
    }
  }
  throw ConfigError("CovSpec::submatrix: unknown kind");
}

// ---------------------------------------------------------------------------
// Transform

void PositivityTransform::validate(int dim) const {
  int previous = -1;
  for (int idx : indices) {
    if (idx < 0 || idx >= dim) throw ConfigError("PositivityTransform: index out of range");
    if (idx <= previous) throw ConfigError("PositivityTransform: indices must be sorted unique");
    previous = idx;
  }
}

Eigen::VectorXd to_physical(const Eigen::VectorXd& latent, const PositivityTransform& transform) {
  Eigen::VectorXd out = latent;
  for (int idx : transform.indices) out[idx] = std::exp(latent[idx]);
  return out;
}

Eigen::VectorXd to_latent(const Eigen::VectorXd& physical, const PositivityTransform& transform) {
  Eigen::VectorXd out = physical;
  for (int idx : transform.indices) {
    if (!(physical[idx] > 0.0)) {
      throw std::domain_error("to_latent: non-positive value at transformed index " +
                              std::to_string(idx));
    }
    out[idx] = std::log(physical[idx]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config

void FilterConfig::validate() const {
  if (!(delta_t > 0.0)) throw ConfigError("FilterConfig: delta_t must be > 0");
  if (update_interval < 1) throw ConfigError("FilterConfig: update_interval must be >= 1");
  if (ensemble_size < 2) throw ConfigError("FilterConfig: ensemble_size must be >= 2");
  if (n_steps < 0) throw ConfigError("FilterConfig: n_steps must be >= 0");
}

// ---------------------------------------------------------------------------
// Filter operations

Ensemble init_ensemble(const GaussianInit& init, const FilterConfig& config) {
  config.validate();
  const int dim = static_cast<int>(init.mean.size());
  if (init.cov.dim() != dim) {
    throw ConfigError("init_ensemble: mean and covariance dimensions differ");
  }
  Ensemble ens;
  ens.time = 0.0;
  ens.members.resize(dim, config.ensemble_size);
  parallel_for(0, config.ensemble_size, config.threads, [&](int i) {
    RandomStream stream(config.seed, static_cast<std::uint64_t>(i),
                        substream_for(0, draw_site::init));
    Eigen::VectorXd noise(dim);
    init.cov.sample(stream, noise);
    ens.members.col(i) = init.mean + noise;
  });
  return ens;
}

Ensemble forecast(const Ensemble& ens, const StateSpaceModel& model,
                  const PositivityTransform& transform, double t_k,
                  const FilterConfig& config, int step_index) {
  config.validate();
  transform.validate(ens.dim());
  if (ens.dim() != model.dim_x) throw ConfigError("forecast: ensemble/model dimension mismatch");
  if (std::fabs(ens.time - t_k) > 1e-9 * std::max(1.0, std::fabs(t_k))) {
    throw ConfigError("forecast: ensemble time " + std::to_string(ens.time) +
                      " does not match t_k = " + std::to_string(t_k));
  }

  const CovSpec process = model.process_cov(t_k);
  if (process.dim() != model.dim_x) {
    throw ConfigError("forecast: process covariance dimension mismatch");
  }
  const bool noise_free = process.is_zero();

  Ensemble out;
  out.time = t_k + config.delta_t;
  out.members.resize(ens.dim(), ens.size());
  parallel_for(0, ens.size(), config.threads, [&](int i) {
    Eigen::VectorXd member = ens.members.col(i);
    Eigen::VectorXd physical = to_physical(member, transform);
    Eigen::VectorXd rate(ens.dim());
    model.drift(physical, t_k, rate);
    if (!rate.allFinite()) {
      throw NumericalError("forecast: drift returned non-finite values for member " +
                           std::to_string(i) + " at t = " + std::to_string(t_k));
    }
    // Transformed coordinates evolve by the chain rule in log space.
    for (int idx : transform.indices) {
      if (rate[idx] != 0.0) rate[idx] /= physical[idx];
    }
    member += config.delta_t * rate;
    if (!noise_free) {
      RandomStream stream(config.seed, static_cast<std::uint64_t>(i),
                          substream_for(static_cast<std::uint64_t>(step_index),
                                        draw_site::forecast));
      Eigen::VectorXd noise(ens.dim());
      process.sample(stream, noise);
      member += noise;
    }
    out.members.col(i) = member;
  });
  return out;
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> ensemble_moments(const Ensemble& ens) {
  if (ens.size() < 2) throw ConfigError("ensemble_moments: need at least two members");
  const Eigen::VectorXd mean = ens.members.rowwise().mean();
  const Eigen::MatrixXd centered = ens.members.colwise() - mean;
  Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(ens.size() - 1);
  cov = 0.5 * (cov + cov.transpose()).eval();
  return {mean, cov};
}

namespace {

std::vector<int> active_indices(const std::vector<bool>& mask, int dim_z) {
  std::vector<int> active;
  if (mask.empty()) {
    active.resize(dim_z);
    for (int i = 0; i < dim_z; ++i) active[i] = i;
    return active;
  }
  if (static_cast<int>(mask.size()) != dim_z) {
    throw ConfigError("update: mask length does not match observation dimension");
  }
  for (int i = 0; i < dim_z; ++i) {
    if (mask[i]) active.push_back(i);
  }
  return active;
}

}  // namespace

Ensemble update(const Ensemble& ens_prior, const Eigen::VectorXd& z,
                const StateSpaceModel& model, const PositivityTransform& transform,
                double t, const FilterConfig& config, int step_index,
                const std::vector<bool>& mask) {
  config.validate();
  transform.validate(ens_prior.dim());
  if (ens_prior.dim() != model.dim_x) throw ConfigError("update: ensemble/model dimension mismatch");
  if (static_cast<int>(z.size()) != model.dim_z) {
    throw ConfigError("update: observation dimension mismatch");
  }
  const std::vector<int> active = active_indices(mask, model.dim_z);
  if (active.empty()) return ens_prior;  // nothing observable this cycle

  const int m = ens_prior.size();
  const int n_active = static_cast<int>(active.size());
  const CovSpec obs_cov_full = model.obs_cov(t);
  if (obs_cov_full.dim() != model.dim_z) {
    throw ConfigError("update: observation covariance dimension mismatch");
  }
  const CovSpec obs_cov =
      (n_active == model.dim_z) ? obs_cov_full : obs_cov_full.submatrix(active);

  // Predicted observations per member, restricted to the active coordinates.
  Eigen::MatrixXd predicted(n_active, m);
  parallel_for(0, m, config.threads, [&](int i) {
    Eigen::VectorXd physical = to_physical(ens_prior.members.col(i), transform);
    Eigen::VectorXd h_full(model.dim_z);
    model.measure(physical, t, h_full);
    if (!h_full.allFinite()) {
      throw NumericalError("update: measurement returned non-finite values for member " +
                           std::to_string(i) + " at t = " + std::to_string(t));
    }
    for (int r = 0; r < n_active; ++r) predicted(r, i) = h_full[active[r]];
  });

  const Eigen::VectorXd z_hat = predicted.rowwise().mean();
  const Eigen::MatrixXd dev_z = predicted.colwise() - z_hat;
  const Eigen::VectorXd x_hat = ens_prior.members.rowwise().mean();
  const Eigen::MatrixXd dev_x = ens_prior.members.colwise() - x_hat;

  Eigen::MatrixXd p_zz = dev_z * dev_z.transpose() / static_cast<double>(m - 1);
  obs_cov.add_to(p_zz);
  p_zz = 0.5 * (p_zz + p_zz.transpose()).eval();
  const Eigen::MatrixXd p_xz = dev_x * dev_z.transpose() / static_cast<double>(m - 1);

  auto solve_gain = [&](const Eigen::MatrixXd& innovation_cov,
                        Eigen::MatrixXd& gain) -> bool {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(innovation_cov);
    if (ldlt.info() != Eigen::Success) return false;
    gain = ldlt.solve(p_xz.transpose()).transpose();
    return gain.allFinite();
  };

  Eigen::MatrixXd gain;
  if (!solve_gain(p_zz, gain)) {
    // Near-singular innovation covariance: jitter the diagonal and retry once.
    Eigen::MatrixXd jittered = p_zz;
    jittered.diagonal().array() += 1e-10 * p_zz.trace() / n_active;
    if (!solve_gain(jittered, gain)) {
      throw NumericalError("update: innovation covariance is singular at t = " +
                           std::to_string(t));
    }
  }

  Eigen::VectorXd z_active(n_active);
  for (int r = 0; r < n_active; ++r) z_active[r] = z[active[r]];

  Ensemble out;
  out.time = ens_prior.time;
  out.members.resize(ens_prior.dim(), m);
  parallel_for(0, m, config.threads, [&](int i) {
    RandomStream stream(config.seed, static_cast<std::uint64_t>(i),
                        substream_for(static_cast<std::uint64_t>(step_index),
                                      draw_site::observation));
    Eigen::VectorXd perturbation(n_active);
    obs_cov.sample(stream, perturbation);
    const Eigen::VectorXd innovation = z_active + perturbation - predicted.col(i);
    out.members.col(i) = ens_prior.members.col(i) + gain * innovation;
  });
  return out;
}

namespace {

FilterEstimate make_estimate(const Ensemble& ens, const PositivityTransform& transform,
                             Stage stage, bool updated, const FilterConfig& config) {
  FilterEstimate est;
  est.time = ens.time;
  est.stage = stage;
  est.updated = updated;
  if (config.cov_recording == CovRecording::full) {
    auto [mean, cov] = ensemble_moments(ens);
    est.mean = std::move(mean);
    est.var_diag = cov.diagonal();
    est.cov = std::move(cov);
  } else {
    // Diagonal-only recording: mean and per-coordinate variance, no matrix.
    est.mean = ens.members.rowwise().mean();
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(ens.dim());
    for (int i = 0; i < ens.size(); ++i) {
      sq += (ens.members.col(i) - est.mean).cwiseAbs2();
    }
    est.var_diag = sq / static_cast<double>(ens.size() - 1);
  }
  auto [mean_phys, sd_phys] = physical_moments(ens, transform);
  est.mean_physical = std::move(mean_phys);
  est.sd_physical = std::move(sd_phys);
  return est;
}

}  // namespace

std::vector<FilterEstimate> run_filter(const StateSpaceModel& model, const GaussianInit& init,
                                       const PositivityTransform& transform,
                                       const std::vector<ScheduledObservation>& obs_schedule,
                                       const FilterConfig& config) {
  config.validate();
  transform.validate(model.dim_x);

  const double cadence = config.delta_t * config.update_interval;
  double previous_time = -1.0;
  for (const auto& obs : obs_schedule) {
    const double cycles = obs.time / cadence;
    if (std::fabs(cycles - std::round(cycles)) > 1e-6 || obs.time <= 0.0) {
      throw ConfigError("run_filter: observation time " + std::to_string(obs.time) +
                        " does not align with the assimilation cadence " +
                        std::to_string(cadence));
    }
    if (obs.time <= previous_time) {
      throw ConfigError("run_filter: observation times must be strictly increasing");
    }
    previous_time = obs.time;
  }

  std::vector<FilterEstimate> estimates;
  estimates.reserve(2 * config.n_steps + 1);
  Ensemble ens = init_ensemble(init, config);
  estimates.push_back(make_estimate(ens, transform, Stage::posterior, false, config));

  std::size_t next_obs = 0;
  for (int k = 0; k < config.n_steps; ++k) {
    const double t_k = k * config.delta_t;
    ens = forecast(ens, model, transform, t_k, config, k);
    estimates.push_back(make_estimate(ens, transform, Stage::prior, false, config));

    bool updated = false;
    if (next_obs < obs_schedule.size()) {
      const double t_next = (k + 1) * config.delta_t;
      if (std::lround(obs_schedule[next_obs].time / config.delta_t) == k + 1) {
        ens = update(ens, obs_schedule[next_obs].values, model, transform, t_next, config,
                     k + 1, obs_schedule[next_obs].mask);
        ++next_obs;
        updated = true;
      }
    }
    estimates.push_back(make_estimate(ens, transform, Stage::posterior, updated, config));
  }
  if (next_obs < obs_schedule.size()) {
    throw ConfigError("run_filter: observation at t = " +
                      std::to_string(obs_schedule[next_obs].time) +
                      " lies beyond the configured horizon");
  }
  return estimates;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> physical_moments(const Ensemble& ens,
                                                             const PositivityTransform& transform) {
  if (ens.size() < 2) throw ConfigError("physical_moments: need at least two members");
  transform.validate(ens.dim());
  const int m = ens.size();

  // Two passes in fixed member order: deterministic reductions, no
  // cancellation from the sum-of-squares shortcut. Only the transformed
  // coordinates need the exponential applied.
  Eigen::VectorXd mean = ens.members.rowwise().mean();
  Eigen::VectorXd var = Eigen::VectorXd::Zero(ens.dim());
  for (int i = 0; i < m; ++i) var += (ens.members.col(i) - mean).cwiseAbs2();

  for (int idx : transform.indices) {
    double sum = 0.0;
    for (int i = 0; i < m; ++i) sum += std::exp(ens.members(idx, i));
    const double mu = sum / m;
    double sq = 0.0;
    for (int i = 0; i < m; ++i) {
      const double dev = std::exp(ens.members(idx, i)) - mu;
      sq += dev * dev;
    }
    mean[idx] = mu;
    var[idx] = sq;
  }
  var /= static_cast<double>(m - 1);
  return {mean, var.cwiseSqrt()};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> predicted_observation_moments(
    const Ensemble& ens, const StateSpaceModel& model, const PositivityTransform& transform,
    double t, int threads) {
  if (ens.size() < 2) throw ConfigError("predicted_observation_moments: need >= 2 members");
  const int m = ens.size();
  Eigen::MatrixXd predicted(model.dim_z, m);
  parallel_for(0, m, threads, [&](int i) {
    Eigen::VectorXd physical = to_physical(ens.members.col(i), transform);
    Eigen::VectorXd h(model.dim_z);
    model.measure(physical, t, h);
    predicted.col(i) = h;
  });
  const Eigen::VectorXd mean = predicted.rowwise().mean();
  Eigen::VectorXd var = Eigen::VectorXd::Zero(model.dim_z);
  for (int i = 0; i < m; ++i) var += (predicted.col(i) - mean).cwiseAbs2();
  var /= static_cast<double>(m - 1);
  var += model.obs_cov(t).diagonal_variances();
  return {mean, var.cwiseSqrt()};
}

}  // namespace agekf::enkf
