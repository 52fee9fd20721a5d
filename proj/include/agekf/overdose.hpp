#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "agekf/enkf.hpp"
#include "agekf/grids.hpp"

namespace agekf::overdose {

/// The six estimated parameters of the drug-overdose model.
struct OverdoseParams {
  double mu = 7e-4;           // overdose mortality rate, 1/year
  double r0 = 0.04;           // base modulating rate, 1/year
  double alpha1 = 15.0;       // shape of the first addiction-age component
  double beta1 = 1.0 / 3.0;   // rate of the first component, 1/year
  double alpha2 = 15.0;
  double beta2 = 1.0 / 3.0;

  void validate() const;
  Eigen::VectorXd as_vector() const;
  static OverdoseParams from_vector(const Eigen::Ref<const Eigen::VectorXd>& v);
};

/// Linear total-population model N(t) = n0 + delta_n * t.
struct PopulationModel {
  double n0 = 274.9e6;       // persons at t = 0
  double delta_n = 2.3e6;    // persons/year

  void validate() const {
    if (!(n0 > 0.0)) throw ConfigError("PopulationModel: n0 must be > 0");
  }
};

double population(double t, const PopulationModel& model);

/// Gamma-shaped initial SUD profile rho(a) = fraction * N0 * f(a; alpha, beta).
struct InitialProfile {
  double fraction = 0.04;
  double alpha = 15.0;
  double beta = 1.0 / 3.0;

  void validate() const {
    if (!(fraction > 0.0 && fraction < 1.0)) {
      throw ConfigError("InitialProfile: fraction must be in (0, 1)");
    }
    if (!(alpha > 0.0 && beta > 0.0)) {
      throw ConfigError("InitialProfile: alpha and beta must be > 0");
    }
  }
};

double initial_density(double a, const InitialProfile& profile, const PopulationModel& pop);
double initial_density_deriv(double a, const InitialProfile& profile, const PopulationModel& pop);

/// The 22 reporting age groups: edges 0, 1, 5, 10, ..., 100, 120.
struct CoarseAgeBins {
  std::vector<double> edges;

  static CoarseAgeBins cdc_wonder();
  int size() const { return static_cast<int>(edges.size()) - 1; }
  void validate() const;
};

/// Resolved mapping of coarse bins onto a fine age grid. Coarse edges that
/// do not land on a fine-bin boundary are snapped to the nearest one and the
/// adjustment is reported.
struct BinMap {
  std::vector<int> fine_edges;      // 23 ascending fine-bin indices, first 0, last n_a
  std::vector<double> snapped_edges;
  std::vector<double> requested_edges;
  bool snapped_any = false;

  int size() const { return static_cast<int>(fine_edges.size()) - 1; }
  std::string report() const;
};

BinMap align_bins(const CoarseAgeBins& bins, const AgeGrid& grid);

/// Age-dependent addiction rate r(a) = (r0/2) [f1(a) + f2(a)]; integrates to
/// r0 over all ages.
double addiction_rate(double a, const OverdoseParams& params);
double addiction_rate_deriv(double a, const OverdoseParams& params);

/// Integral of the addiction rate along a characteristic,
/// int_s^t r(a - t + s') ds', assembled from the upper-incomplete-gamma
/// identity per gamma component. Requires a - t + s >= 0.
double rate_integral(double a, double t, double s, const OverdoseParams& params);

/// Closed-form time derivative of n(a, t) for the recast model
/// (mu -> mu + r, p -> r N), evaluated with the incomplete-gamma identity
/// inside and fixed-panel composite Simpson outside.
double rate_of_change(double a, double t, const OverdoseParams& params,
                      const PopulationModel& pop, const InitialProfile& profile);

/// Death flux mu * n; the cumulative per-bin death count evolves as
/// dD/dt = death_flux * delta_a.
double death_flux(double n_value, double mu);

/// Sum fine-bin counts into the coarse bins. Exactly conservative.
std::vector<double> coarse_grain(const std::vector<double>& fine_counts, const BinMap& map);

/// Strict variant: errors if any coarse edge is not a fine-bin boundary.
std::vector<double> coarse_grain(const std::vector<double>& fine_counts,
                                 const CoarseAgeBins& bins, const AgeGrid& grid);

/// Joint state of the overdose model on the fine grid.
struct OverdoseState {
  AgeGrid grid;
  std::vector<double> n;        // SUD density per age bin
  std::vector<double> d_tilde;  // cumulative overdose deaths per fine bin, persons
  OverdoseParams params;
};

/// Measurement: (coarse_grain(d_tilde) - year_baseline) / scale. The
/// baseline holds the coarse cumulative counts at the last assimilated year
/// boundary, so the result is the scaled annual death increment.
Eigen::VectorXd measure(const OverdoseState& state, const BinMap& map,
                        const Eigen::VectorXd& year_baseline, double scale = 1e3);

/// Augmented-state layout: [n(0..n_a), d_tilde(0..n_a), six parameters].
struct StateLayout {
  int n_a = 0;

  int n_offset() const { return 0; }
  int d_offset() const { return n_a; }
  int param_offset() const { return 2 * n_a; }
  int dim() const { return 2 * n_a + 6; }
  std::vector<int> param_indices() const {
    std::vector<int> idx(6);
    for (int i = 0; i < 6; ++i) idx[i] = param_offset() + i;
    return idx;
  }
};

/// Shared cumulative-integral tables for one parameter set. Algebraically
/// identical to rate_of_change but amortizes the per-age quadrature into
/// three cumulative tables, which makes the ensemble drift affordable.
class DriftTables {
 public:
  DriftTables(const OverdoseParams& params, const PopulationModel& pop,
              const InitialProfile& profile, double a_max, int n_intervals);

  /// dn/dt at (a, t); both characteristic branches.
  double n_rate(double a, double t) const;

 private:
  double lookup(const std::vector<double>& phi, const std::vector<double>& deriv,
                double x) const;

  OverdoseParams params_;
  PopulationModel pop_;
  InitialProfile profile_;
  double h_ = 0.0;
  std::vector<double> cumulative_rate_;   // C(u) = int_0^u r
  std::vector<double> rate_;              // r(u), derivative of C
  std::vector<double> phi0_, g0_;         // int_0^x E psi, with E = e^(mu u + C)
  std::vector<double> phi1_, g1_;         // int_0^x u E psi
  std::vector<double> phi2_, g2_;         // int_0^x E r
};

struct OverdoseModelConfig {
  AgeGrid grid{0.0, 0.12, 1000};
  PopulationModel population{};
  InitialProfile profile{};
  CoarseAgeBins bins = CoarseAgeBins::cdc_wonder();
  // Independent per-coordinate process noise; the parameter random walk
  // (sd ~3% per step in log space) keeps the ensemble spread wide enough
  // to express model-data mismatch. Set diagonal_process_noise = false for
  // the rank-1 matrix of ones.
  double process_noise_variance = 1e-3;
  bool diagonal_process_noise = true;
  double obs_noise_variance = 1e-2;      // sd 0.1 = 100 deaths at the 1e3 scale
  double measurement_scale = 1e3;        // deaths are reported in thousands
  int table_refine = 1;                  // drift-table intervals per fine bin
};

/// Immutable wiring of the overdose dynamics into the filter contract.
/// State dimension 2 n_a + 6; the six parameters are carried in log space
/// by the returned transform.
struct BuiltModel {
  enkf::StateSpaceModel model;
  enkf::PositivityTransform transform;
  StateLayout layout;
  BinMap bin_map;
};

BuiltModel build_overdose_model(const OverdoseModelConfig& config);

/// One year of observed deaths in coarse-bin order; `available[l]` is false
/// for suppressed or missing cells.
struct AnnualDeaths {
  int year = 0;
  Eigen::VectorXd deaths;
  std::vector<bool> available;
};

struct YearPrediction {
  int year = 0;
  Eigen::VectorXd predicted_mean;  // deaths, persons per coarse bin
  Eigen::VectorXd predicted_sd;    // filter sd (ensemble spread + obs noise)
  Eigen::VectorXd ensemble_sd;     // spread only, persons
  Eigen::VectorXd observed;        // NaN where unavailable
};

/// Physical-space moments of the six parameters plus the two gamma means
/// alpha1/beta1 and alpha2/beta2 (computed per member, then averaged).
struct ParamTrack {
  double time = 0.0;               // years since simulation start
  Eigen::VectorXd mean;            // [mu, r0, a1, b1, a2, b2, a1/b1, a2/b2]
  Eigen::VectorXd sd;
};

struct FitOptions {
  OverdoseModelConfig model{};
  enkf::FilterConfig filter{0.1, 10, 10000, 0, 0, 0, enkf::CovRecording::diagonal};
  int start_year = 1998;
  OverdoseParams initial_params{};
  double state_init_variance = 1e-4;   // every entry of P0
  double param_init_variance = 1e-2;   // parameter diagonal of P0
};

struct FitResult {
  std::vector<YearPrediction> predictions;  // one-year-ahead, per data year
  std::vector<ParamTrack> params;           // per forecast step
  enkf::Ensemble final_ensemble;
  long clamped_negative = 0;                // emitted values clamped to zero
  std::string bin_report;                   // coarse-edge snapping summary
};

/// Assimilate annual death counts year by year: forecast through each year,
/// record the one-year-ahead prediction, update on the year's observation
/// (suppressed bins masked out), then reset the year-to-date death block.
FitResult run_fit(const std::vector<AnnualDeaths>& observations, const FitOptions& options);

/// Pure forecast continuation (no updates) for `n_years` beyond the fitted
/// ensemble; records per-year predicted deaths and spreads.
std::vector<YearPrediction> run_forecast(const FitResult& fit, const FitOptions& options,
                                         int last_data_year, int n_years);

}  // namespace agekf::overdose
