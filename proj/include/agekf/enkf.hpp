#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "agekf/errors.hpp"
#include "agekf/rng.hpp"

namespace agekf::enkf {

/// Symmetric PSD covariance with structure-aware sampling. Dense matrices
/// are eigen-factorized once at construction; the diagonal and
/// matrix-of-ones forms used throughout the filter configurations sample in
/// O(dim) without any factorization.
class CovSpec {
 public:
  static CovSpec zero(int dim);
  static CovSpec diagonal(Eigen::VectorXd variances);
  /// variance * J_dim where J is the matrix of ones (rank-1 PSD).
  static CovSpec scaled_ones(int dim, double variance);
  /// variance * J_dim + diag(extra); extra must be nonnegative.
  static CovSpec scaled_ones_plus_diag(double variance, Eigen::VectorXd extra);
  static CovSpec dense(const Eigen::MatrixXd& cov);

  int dim() const { return dim_; }
  bool is_zero() const;
  Eigen::MatrixXd dense_matrix() const;
  Eigen::VectorXd diagonal_variances() const;
  void add_to(Eigen::Ref<Eigen::MatrixXd> target) const;
  /// Draw one sample into out (length dim). The number of stream draws per
  /// call is fixed for a given spec.
  void sample(RandomStream& stream, Eigen::Ref<Eigen::VectorXd> out) const;
  /// Restriction to the given (sorted) coordinate subset.
  CovSpec submatrix(const std::vector<int>& keep) const;

 private:
  enum class Kind { zero, diagonal, scaled_ones, ones_plus_diag, dense };

  CovSpec(Kind kind, int dim) : kind_(kind), dim_(dim) {}

  Kind kind_;
  int dim_;
  double scalar_ = 0.0;          // ones variance
  Eigen::VectorXd diag_;         // diagonal variances (diagonal / ones_plus_diag)
  Eigen::VectorXd diag_sqrt_;
  Eigen::MatrixXd matrix_;       // dense form
  Eigen::MatrixXd factor_;       // L with L L^T = matrix_ (dense only)
};

/// Continuous-time state-space model: dx/dt = f(x, t) + w, z = h(x, t) + v.
/// drift and measure act on the physical state; process_cov applies to the
/// stored (latent) state, see PositivityTransform.
struct StateSpaceModel {
  int dim_x = 0;
  int dim_z = 0;
  std::function<void(Eigen::Ref<const Eigen::VectorXd>, double, Eigen::Ref<Eigen::VectorXd>)> drift;
  std::function<void(Eigen::Ref<const Eigen::VectorXd>, double, Eigen::Ref<Eigen::VectorXd>)> measure;
  std::function<CovSpec(double)> process_cov;
  std::function<CovSpec(double)> obs_cov;
};

/// State coordinates stored as logarithms so their physical values stay
/// positive through every filter operation.
struct PositivityTransform {
  std::vector<int> indices;

  bool empty() const { return indices.empty(); }
  void validate(int dim) const;
};

Eigen::VectorXd to_physical(const Eigen::VectorXd& latent, const PositivityTransform& transform);
Eigen::VectorXd to_latent(const Eigen::VectorXd& physical, const PositivityTransform& transform);

/// Monte Carlo representation of the filtering distribution. Stored as one
/// column per member (column-major locality); member i is column i.
struct Ensemble {
  Eigen::MatrixXd members;  // dim_x x M
  double time = 0.0;

  int size() const { return static_cast<int>(members.cols()); }
  int dim() const { return static_cast<int>(members.rows()); }
};

struct GaussianInit {
  Eigen::VectorXd mean;
  CovSpec cov;
};

enum class CovRecording { full, diagonal };

struct FilterConfig {
  double delta_t = 0.1;
  int update_interval = 5;   // forecast steps between assimilations
  int ensemble_size = 500;
  std::uint64_t seed = 0;
  int n_steps = 100;         // run_filter horizon
  int threads = 0;           // 0 = hardware default
  CovRecording cov_recording = CovRecording::full;

  void validate() const;
};

enum class Stage { prior, posterior };

struct FilterEstimate {
  double time = 0.0;
  Stage stage = Stage::prior;
  bool updated = false;          // an observation was assimilated at this step
  Eigen::VectorXd mean;          // stored (latent) space
  Eigen::VectorXd var_diag;
  Eigen::MatrixXd cov;           // empty under CovRecording::diagonal
  Eigen::VectorXd mean_physical; // transform applied per member before averaging
  Eigen::VectorXd sd_physical;
};

/// M independent draws from N(mean, cov); deterministic in config.seed.
Ensemble init_ensemble(const GaussianInit& init, const FilterConfig& config);

/// One explicit Euler forecast step from t_k to t_k + delta_t with process
/// noise added in stored (latent) space. step_index addresses the noise
/// substream. Throws NumericalError naming the member if the drift returns
/// a non-finite value.
Ensemble forecast(const Ensemble& ens, const StateSpaceModel& model,
                  const PositivityTransform& transform, double t_k,
                  const FilterConfig& config, int step_index);

/// Sample mean and covariance with 1/(M-1) normalization.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> ensemble_moments(const Ensemble& ens);

/// Perturbed-observation update. Each member assimilates z plus an
/// independent N(0, R) perturbation. mask (optional) marks observation
/// coordinates to assimilate; others are dropped from h and R.
Ensemble update(const Ensemble& ens_prior, const Eigen::VectorXd& z,
                const StateSpaceModel& model, const PositivityTransform& transform,
                double t, const FilterConfig& config, int step_index,
                const std::vector<bool>& mask = {});

struct ScheduledObservation {
  double time = 0.0;
  Eigen::VectorXd values;
  std::vector<bool> mask;  // empty = all coordinates observed
};

/// Alternates forecasts every delta_t with updates whenever an observation
/// is due. Observation times must align with multiples of
/// delta_t * update_interval. Records prior and posterior estimates at each
/// step (posterior duplicates the prior when no update happened).
std::vector<FilterEstimate> run_filter(const StateSpaceModel& model, const GaussianInit& init,
                                       const PositivityTransform& transform,
                                       const std::vector<ScheduledObservation>& obs_schedule,
                                       const FilterConfig& config);

/// Per-coordinate mean and standard deviation of the ensemble after mapping
/// members to physical space. Used for reporting transformed parameters.
std::pair<Eigen::VectorXd, Eigen::VectorXd> physical_moments(const Ensemble& ens,
                                                             const PositivityTransform& transform);

/// Ensemble mean and standard deviation of the predicted observation h(x).
/// The variance includes the observation noise R(t): these are the
/// diagonal moments of the filter's own innovation covariance.
std::pair<Eigen::VectorXd, Eigen::VectorXd> predicted_observation_moments(
    const Ensemble& ens, const StateSpaceModel& model, const PositivityTransform& transform,
    double t, int threads = 0);

}  // namespace agekf::enkf
