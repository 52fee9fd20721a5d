#include "agekf/overdose.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "agekf/quadrature.hpp"
#include "agekf/special_functions.hpp"

namespace agekf::overdose {

// ---------------------------------------------------------------------------
// Parameters and basic ingredients

void OverdoseParams::validate() const {
  const double values[] = {mu, r0, alpha1, beta1, alpha2, beta2};
  for (double v : values) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError("OverdoseParams: all six parameters must be positive and finite");
    }
  }
}

Eigen::VectorXd OverdoseParams::as_vector() const {
  Eigen::VectorXd v(6);
  v << mu, r0, alpha1, beta1, alpha2, beta2;
  return v;
}

OverdoseParams OverdoseParams::from_vector(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() != 6) throw ConfigError("OverdoseParams: expected six entries");
  return OverdoseParams{v[0], v[1], v[2], v[3], v[4], v[5]};
}

double population(double t, const PopulationModel& model) {
  model.validate();
  return model.n0 + model.delta_n * t;
}

double initial_density(double a, const InitialProfile& profile, const PopulationModel& pop) {
  return profile.fraction * pop.n0 * gamma_pdf(a, profile.alpha, profile.beta);
}

double initial_density_deriv(double a, const InitialProfile& profile,
                             const PopulationModel& pop) {
  return profile.fraction * pop.n0 * gamma_pdf_deriv(a, profile.alpha, profile.beta);
}

CoarseAgeBins CoarseAgeBins::cdc_wonder() {
  CoarseAgeBins bins;
  bins.edges = {0.0, 1.0, 5.0};
  for (double edge = 10.0; edge <= 100.0; edge += 5.0) bins.edges.push_back(edge);
  bins.edges.push_back(120.0);
  bins.validate();
  return bins;
}

void CoarseAgeBins::validate() const {
  if (edges.size() != 23) throw ConfigError("CoarseAgeBins: expected 23 edges");
  if (edges.front() != 0.0 || edges.back() != 120.0) {
    throw ConfigError("CoarseAgeBins: edges must span [0, 120]");
  }
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw ConfigError("CoarseAgeBins: edges must ascend");
  }
}

std::string BinMap::report() const {
  if (!snapped_any) return "all coarse edges coincide with fine-bin boundaries";
  std::ostringstream out;
  out << "snapped coarse edges to fine boundaries:";
  for (std::size_t i = 0; i < requested_edges.size(); ++i) {
    if (std::fabs(requested_edges[i] - snapped_edges[i]) > 1e-9) {
      out << " " << requested_edges[i] << "->" << snapped_edges[i];
    }
  }
  return out.str();
}

BinMap align_bins(const CoarseAgeBins& bins, const AgeGrid& grid) {
  bins.validate();
  grid.validate();
  if (std::fabs(grid.a0 - bins.edges.front()) > 1e-9) {
    throw ConfigError("align_bins: grid must start at the first coarse edge");
  }
  if (grid.upper() < bins.edges.back() - 1e-9) {
    throw ConfigError("align_bins: grid does not cover the coarse bins");
  }
  BinMap map;
  map.requested_edges = bins.edges;
  map.fine_edges.reserve(bins.edges.size());
  map.snapped_edges.reserve(bins.edges.size());
  for (double edge : bins.edges) {
    int idx = static_cast<int>(std::lround((edge - grid.a0) / grid.delta_a));
    idx = std::clamp(idx, 0, grid.n_a);
    const double snapped = grid.a0 + idx * grid.delta_a;
    if (std::fabs(snapped - edge) > 1e-9) map.snapped_any = true;
    map.fine_edges.push_back(idx);
    map.snapped_edges.push_back(snapped);
  }
  for (std::size_t i = 1; i < map.fine_edges.size(); ++i) {
    if (map.fine_edges[i] <= map.fine_edges[i - 1]) {
      throw ConfigError("align_bins: grid too coarse, two coarse edges snapped together");
    }
  }
  return map;
}

double addiction_rate(double a, const OverdoseParams& params) {
  if (a < 0.0) throw std::domain_error("addiction_rate: age must be >= 0");
  return 0.5 * params.r0 * (gamma_pdf(a, params.alpha1, params.beta1) +
                            gamma_pdf(a, params.alpha2, params.beta2));
}

double addiction_rate_deriv(double a, const OverdoseParams& params) {
  if (a < 0.0) throw std::domain_error("addiction_rate_deriv: age must be >= 0");
  return 0.5 * params.r0 * (gamma_pdf_deriv(a, params.alpha1, params.beta1) +
                            gamma_pdf_deriv(a, params.alpha2, params.beta2));
}

double rate_integral(double a, double t, double s, const OverdoseParams& params) {
  double x = a - t + s;
  if (x < -1e-12) {
    throw std::domain_error("rate_integral: negative characteristic age a - t + s");
  }
  if (x < 0.0) x = 0.0;
  const double component1 = regularized_gamma_q(params.alpha1, x * params.beta1) -
                            regularized_gamma_q(params.alpha1, a * params.beta1);
  const double component2 = regularized_gamma_q(params.alpha2, x * params.beta2) -
                            regularized_gamma_q(params.alpha2, a * params.beta2);
  return 0.5 * params.r0 * (component1 + component2);
}

namespace {

int outer_panels(double span) {
  // Panels proportional to span / 0.1 yr, rounded up to even. The floor of
  // 128 covers the regime where the source and memory terms cancel to
  // ~1e-3 of their size and the quadrature error is amplified accordingly.
  int panels = std::max(128, static_cast<int>(std::ceil(10.0 * span)));
  if (panels % 2 != 0) ++panels;
  return panels;
}

}  // namespace

double rate_of_change(double a, double t, const OverdoseParams& params,
                      const PopulationModel& pop, const InitialProfile& profile) {
  params.validate();
  pop.validate();
  profile.validate();
  if (a < 0.0 || t < 0.0) throw std::domain_error("rate_of_change: a and t must be >= 0");

  if (a >= t) {
    const double x = a - t;
    const double rho = initial_density(x, profile, pop);
    const double rho_deriv = initial_density_deriv(x, profile, pop);
    const double boundary = -(rho_deriv + rho * (params.mu + addiction_rate(x, params))) *
                            std::exp(-params.mu * t - rate_integral(a, t, 0.0, params));
    const double source = addiction_rate(a, params) * population(t, pop);
    const double memory = simpson(
        [&](double s) {
          const double age_on_char = a - t + s;
          const double rate = addiction_rate(age_on_char, params);
          const double kernel =
              std::exp(-params.mu * (t - s) - rate_integral(a, t, s, params));
          return kernel * population(s, pop) *
                 (rate * (params.mu + rate) + addiction_rate_deriv(age_on_char, params));
        },
        0.0, t, outer_panels(t));
    return boundary + source - memory;
  }

  return simpson(
      [&](double s) {
        return addiction_rate(s, params) * pop.delta_n *
               std::exp(-params.mu * (a - s) - rate_integral(a, a, s, params));
      },
      0.0, a, outer_panels(a));
}

double death_flux(double n_value, double mu) { return mu * n_value; }

std::vector<double> coarse_grain(const std::vector<double>& fine_counts, const BinMap& map) {
  if (static_cast<int>(fine_counts.size()) < map.fine_edges.back()) {
    throw ConfigError("coarse_grain: fine vector shorter than the bin map");
  }
  std::vector<double> coarse(map.size(), 0.0);
  for (int l = 0; l < map.size(); ++l) {
    double sum = 0.0;
    for (int j = map.fine_edges[l]; j < map.fine_edges[l + 1]; ++j) sum += fine_counts[j];
    coarse[l] = sum;
  }
  return coarse;
}

std::vector<double> coarse_grain(const std::vector<double>& fine_counts,
                                 const CoarseAgeBins& bins, const AgeGrid& grid) {
  const BinMap map = align_bins(bins, grid);
  if (map.snapped_any) {
    throw ConfigError("coarse_grain: coarse edges do not align with fine-bin boundaries (" +
                      map.report() + ")");
  }
  return coarse_grain(fine_counts, map);
}

Eigen::VectorXd measure(const OverdoseState& state, const BinMap& map,
                        const Eigen::VectorXd& year_baseline, double scale) {
  if (year_baseline.size() != map.size()) {
    throw ConfigError("measure: baseline dimension mismatch");
  }
  const std::vector<double> coarse = coarse_grain(state.d_tilde, map);
  Eigen::VectorXd out(map.size());
  for (int l = 0; l < map.size(); ++l) out[l] = (coarse[l] - year_baseline[l]) / scale;
  return out;
}

// ---------------------------------------------------------------------------
// Drift tables

DriftTables::DriftTables(const OverdoseParams& params, const PopulationModel& pop,
                         const InitialProfile& profile, double a_max, int n_intervals)
    : params_(params), pop_(pop), profile_(profile) {
  params_.validate();
  pop_.validate();
  profile_.validate();
  if (n_intervals < 8) throw ConfigError("DriftTables: need at least 8 intervals");
  if (!(a_max > 0.0)) throw ConfigError("DriftTables: a_max must be > 0");
  if (params_.mu * a_max + params_.r0 > 690.0) {
    throw NumericalError("DriftTables: mortality rate too large for the exponential tables");
  }

  const int n = n_intervals;
  h_ = a_max / n;
  cumulative_rate_.resize(n + 1);
  rate_.resize(n + 1);
  g0_.resize(n + 1);
  g1_.resize(n + 1);
  g2_.resize(n + 1);
  for (int i = 0; i <= n; ++i) {
    const double u = i * h_;
    const double lower1 = regularized_gamma_p(params_.alpha1, params_.beta1 * u);
    const double lower2 = regularized_gamma_p(params_.alpha2, params_.beta2 * u);
    cumulative_rate_[i] = 0.5 * params_.r0 * (lower1 + lower2);
    // The rate density and its derivative diverge at u = 0 for shapes
    // alpha <= 2 (still integrable); zero the endpoint node so the
    // cumulative tables stay finite when the filter explores that regime.
    double r = addiction_rate(u, params_);
    double r_deriv = addiction_rate_deriv(u, params_);
    if (!std::isfinite(r)) r = 0.0;
    if (!std::isfinite(r_deriv)) r_deriv = 0.0;
    const double envelope = std::exp(params_.mu * u + cumulative_rate_[i]);
    const double psi = r * (params_.mu + r) + r_deriv;
    rate_[i] = r;
    g0_[i] = envelope * psi;
    g1_[i] = u * g0_[i];
    g2_[i] = envelope * r;
  }
  phi0_ = cumulative_simpson(g0_, h_);
  phi1_ = cumulative_simpson(g1_, h_);
  phi2_ = cumulative_simpson(g2_, h_);
}

double DriftTables::lookup(const std::vector<double>& phi, const std::vector<double>& deriv,
                           double x) const {
  return hermite_lookup(phi, deriv, 0.0, h_, x);
}

double DriftTables::n_rate(double a, double t) const {
  if (a < 0.0 || t < 0.0) throw std::domain_error("DriftTables: a and t must be >= 0");

  // Same endpoint treatment as the tables: the rate density may diverge at
  // age exactly 0 for shapes <= 1.
  auto rate_at = [this](double age) {
    const double r = addiction_rate(age, params_);
    return std::isfinite(r) ? r : 0.0;
  };

  const double c_a = lookup(cumulative_rate_, rate_, a);
  if (a >= t) {
    const double x = std::max(0.0, a - t);
    const double c_x = lookup(cumulative_rate_, rate_, x);
    const double rho = initial_density(x, profile_, pop_);
    const double rho_deriv = initial_density_deriv(x, profile_, pop_);
    const double boundary = -(rho_deriv + rho * (params_.mu + rate_at(x))) *
                            std::exp(-params_.mu * t - (c_a - c_x));
    const double source = rate_at(a) * population(t, pop_);
    // The memory integral along the characteristic factorizes into
    // differences of the cumulative tables; N(s) = (N0 - dN x) + dN u.
    const double memory =
        std::exp(-params_.mu * a - c_a) *
        ((pop_.n0 - pop_.delta_n * x) * (lookup(phi0_, g0_, a) - lookup(phi0_, g0_, x)) +
         pop_.delta_n * (lookup(phi1_, g1_, a) - lookup(phi1_, g1_, x)));
    return boundary + source - memory;
  }
  return pop_.delta_n * std::exp(-params_.mu * a - c_a) * lookup(phi2_, g2_, a);
}

// ---------------------------------------------------------------------------
// Filter wiring

namespace {

struct ModelContext {
  AgeGrid grid;
  PopulationModel population;
  InitialProfile profile;
  BinMap bin_map;
  StateLayout layout;
  double measurement_scale;
  double process_noise_variance;
  bool diagonal_process_noise;
  double obs_noise_variance;
  int table_intervals;
};

}  // namespace

BuiltModel build_overdose_model(const OverdoseModelConfig& config) {
  config.grid.validate();
  config.population.validate();
  config.profile.validate();
  if (!(config.measurement_scale > 0.0)) {
    throw ConfigError("build_overdose_model: measurement_scale must be > 0");
  }
  if (config.process_noise_variance < 0.0 || config.obs_noise_variance < 0.0) {
    throw ConfigError("build_overdose_model: noise variances must be nonnegative");
  }
  if (config.table_refine < 1) {
    throw ConfigError("build_overdose_model: table_refine must be >= 1");
  }

  auto ctx = std::make_shared<const ModelContext>(ModelContext{
      config.grid, config.population, config.profile, align_bins(config.bins, config.grid),
      StateLayout{config.grid.n_a}, config.measurement_scale, config.process_noise_variance,
      config.diagonal_process_noise, config.obs_noise_variance,
      config.table_refine * config.grid.n_a});

  BuiltModel built;
  built.layout = ctx->layout;
  built.bin_map = ctx->bin_map;
  built.transform.indices = ctx->layout.param_indices();

  built.model.dim_x = ctx->layout.dim();
  built.model.dim_z = ctx->bin_map.size();

  built.model.drift = [ctx](Eigen::Ref<const Eigen::VectorXd> x, double t,
                            Eigen::Ref<Eigen::VectorXd> out) {
    const StateLayout& layout = ctx->layout;
    const OverdoseParams params =
        OverdoseParams::from_vector(x.segment(layout.param_offset(), 6));
    const DriftTables tables(params, ctx->population, ctx->profile, ctx->grid.upper(),
                             ctx->table_intervals);
    const int n_a = layout.n_a;
    for (int j = 0; j < n_a; ++j) {
      out[j] = tables.n_rate(ctx->grid.age(j), t);
    }
    const double bin_width = ctx->grid.delta_a;
    for (int j = 0; j < n_a; ++j) {
      out[layout.d_offset() + j] = death_flux(x[j], params.mu) * bin_width;
    }
    out.segment(layout.param_offset(), 6).setZero();
  };

  built.model.measure = [ctx](Eigen::Ref<const Eigen::VectorXd> x, double /*t*/,
                              Eigen::Ref<Eigen::VectorXd> out) {
    const int d_offset = ctx->layout.d_offset();
    for (int l = 0; l < ctx->bin_map.size(); ++l) {
      double sum = 0.0;
      for (int j = ctx->bin_map.fine_edges[l]; j < ctx->bin_map.fine_edges[l + 1]; ++j) {
        sum += x[d_offset + j];
      }
      out[l] = sum / ctx->measurement_scale;
    }
  };

  built.model.process_cov = [ctx](double) {
    if (ctx->diagonal_process_noise) {
      return enkf::CovSpec::diagonal(
          Eigen::VectorXd::Constant(ctx->layout.dim(), ctx->process_noise_variance));
    }
    return enkf::CovSpec::scaled_ones(ctx->layout.dim(), ctx->process_noise_variance);
  };

  built.model.obs_cov = [ctx](double) {
    return enkf::CovSpec::diagonal(
        Eigen::VectorXd::Constant(ctx->bin_map.size(), ctx->obs_noise_variance));
  };

  return built;
}

// ---------------------------------------------------------------------------
// Fit and forecast drivers

namespace {

ParamTrack param_moments(const enkf::Ensemble& ens, const StateLayout& layout) {
  ParamTrack track;
  track.time = ens.time;
  track.mean.resize(8);
  track.sd.resize(8);
  const int m = ens.size();

  // Per-member physical quantity q(i); two fixed-order passes for moments.
  auto moments = [&](auto&& quantity, int slot) {
    double sum = 0.0;
    for (int i = 0; i < m; ++i) sum += quantity(i);
    const double mean = sum / m;
    double sq = 0.0;
    for (int i = 0; i < m; ++i) {
      const double dev = quantity(i) - mean;
      sq += dev * dev;
    }
    track.mean[slot] = mean;
    track.sd[slot] = std::sqrt(sq / (m - 1));
  };

  const int base = layout.param_offset();
  for (int p = 0; p < 6; ++p) {
    moments([&](int i) { return std::exp(ens.members(base + p, i)); }, p);
  }
  // Gamma means alpha/beta, evaluated per member (log-space subtraction).
  moments([&](int i) { return std::exp(ens.members(base + 2, i) - ens.members(base + 3, i)); }, 6);
  moments([&](int i) { return std::exp(ens.members(base + 4, i) - ens.members(base + 5, i)); }, 7);
  return track;
}

int steps_per_year_or_throw(double delta_t) {
  const int steps = static_cast<int>(std::lround(1.0 / delta_t));
  if (steps < 1 || std::fabs(steps * delta_t - 1.0) > 1e-9) {
    throw ConfigError("overdose fit: delta_t must evenly divide one year");
  }
  return steps;
}

}  // namespace

FitResult run_fit(const std::vector<AnnualDeaths>& observations, const FitOptions& options) {
  options.filter.validate();
  options.initial_params.validate();
  if (observations.empty()) throw ConfigError("run_fit: no observations supplied");
  if (options.param_init_variance < options.state_init_variance) {
    throw ConfigError("run_fit: parameter variance must be >= state variance");
  }

  BuiltModel built = build_overdose_model(options.model);
  const StateLayout& layout = built.layout;
  const int dim_z = built.bin_map.size();

  std::map<int, const AnnualDeaths*> by_year;
  for (const auto& obs : observations) {
    if (obs.deaths.size() != dim_z || static_cast<int>(obs.available.size()) != dim_z) {
      throw ConfigError("run_fit: observation for year " + std::to_string(obs.year) +
                        " does not have " + std::to_string(dim_z) + " bins");
    }
    if (obs.year <= options.start_year) {
      throw ConfigError("run_fit: observation year " + std::to_string(obs.year) +
                        " precedes the simulation start");
    }
    by_year[obs.year] = &obs;
  }
  {
    std::string gaps;
    for (int year = by_year.begin()->first; year <= by_year.rbegin()->first; ++year) {
      if (!by_year.count(year)) gaps += " " + std::to_string(year);
    }
    if (!gaps.empty()) throw ConfigError("run_fit: missing observation years:" + gaps);
  }

  const int steps_per_year = steps_per_year_or_throw(options.filter.delta_t);
  const int last_year = by_year.rbegin()->first;
  const int n_years = last_year + 1 - options.start_year;
  const int n_steps = n_years * steps_per_year;

  // Initial state: empty SUD and death blocks, log-space parameters.
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(layout.dim());
  const Eigen::VectorXd params0 = options.initial_params.as_vector();
  for (int p = 0; p < 6; ++p) mean[layout.param_offset() + p] = std::log(params0[p]);
  Eigen::VectorXd extra = Eigen::VectorXd::Zero(layout.dim());
  for (int p = 0; p < 6; ++p) {
    extra[layout.param_offset() + p] = options.param_init_variance - options.state_init_variance;
  }
  const enkf::GaussianInit init{
      mean, enkf::CovSpec::scaled_ones_plus_diag(options.state_init_variance, extra)};

  FitResult result;
  result.bin_report = built.bin_map.report();
  enkf::Ensemble ens = enkf::init_ensemble(init, options.filter);
  result.params.push_back(param_moments(ens, layout));

  for (int k = 0; k < n_steps; ++k) {
    const double t_k = k * options.filter.delta_t;
    ens = enkf::forecast(ens, built.model, built.transform, t_k, options.filter, k);

    if ((k + 1) % steps_per_year == 0) {
      const double t_boundary = (k + 1) * options.filter.delta_t;
      const int data_year =
          options.start_year + (k + 1) / steps_per_year - 1;  // deaths during this year

      auto [pred_mean, pred_sd] = enkf::predicted_observation_moments(
          ens, built.model, built.transform, t_boundary, options.filter.threads);

      YearPrediction prediction;
      prediction.year = data_year;
      prediction.predicted_mean = pred_mean * options.model.measurement_scale;
      for (int l = 0; l < dim_z; ++l) {
        if (prediction.predicted_mean[l] < 0.0) {
          prediction.predicted_mean[l] = 0.0;
          ++result.clamped_negative;
        }
      }
      prediction.predicted_sd = pred_sd * options.model.measurement_scale;
      Eigen::VectorXd spread_var =
          pred_sd.cwiseAbs2() -
          Eigen::VectorXd::Constant(dim_z, options.model.obs_noise_variance);
      prediction.ensemble_sd =
          spread_var.cwiseMax(0.0).cwiseSqrt() * options.model.measurement_scale;
      prediction.observed =
          Eigen::VectorXd::Constant(dim_z, std::numeric_limits<double>::quiet_NaN());

      const auto obs_it = by_year.find(data_year);
      if (obs_it != by_year.end()) {
        const AnnualDeaths& obs = *obs_it->second;
        Eigen::VectorXd z = obs.deaths / options.model.measurement_scale;
        for (int l = 0; l < dim_z; ++l) {
          if (obs.available[l]) prediction.observed[l] = obs.deaths[l];
        }
        ens = enkf::update(ens, z, built.model, built.transform, t_boundary, options.filter,
                           k + 1, obs.available);
      }
      result.predictions.push_back(std::move(prediction));

      // Start accumulating the next year's deaths from zero: per-member
      // baseline reset, equivalent to subtracting each member's snapshot.
      ens.members.middleRows(layout.d_offset(), layout.n_a).setZero();
    }
    result.params.push_back(param_moments(ens, layout));
  }

  result.final_ensemble = std::move(ens);
  return result;
}

std::vector<YearPrediction> run_forecast(const FitResult& fit, const FitOptions& options,
                                         int last_data_year, int n_years) {
  if (n_years < 1) throw ConfigError("run_forecast: n_years must be >= 1");
  BuiltModel built = build_overdose_model(options.model);
  const StateLayout& layout = built.layout;
  const int dim_z = built.bin_map.size();
  const int steps_per_year = steps_per_year_or_throw(options.filter.delta_t);

  enkf::Ensemble ens = fit.final_ensemble;
  const int start_step =
      (last_data_year + 1 - options.start_year) * steps_per_year;  // RNG substream continuity

  std::vector<YearPrediction> out;
  for (int k = 0; k < n_years * steps_per_year; ++k) {
    const int global_step = start_step + k;
    const double t_k = ens.time;
    ens = enkf::forecast(ens, built.model, built.transform, t_k, options.filter, global_step);

    if ((k + 1) % steps_per_year == 0) {
      const int data_year = last_data_year + (k + 1) / steps_per_year;
      auto [pred_mean, pred_sd] = enkf::predicted_observation_moments(
          ens, built.model, built.transform, ens.time, options.filter.threads);

      YearPrediction prediction;
      prediction.year = data_year;
      prediction.predicted_mean =
          (pred_mean * options.model.measurement_scale).cwiseMax(0.0);
      prediction.predicted_sd = pred_sd * options.model.measurement_scale;
      Eigen::VectorXd spread_var =
          pred_sd.cwiseAbs2() -
          Eigen::VectorXd::Constant(dim_z, options.model.obs_noise_variance);
      prediction.ensemble_sd =
          spread_var.cwiseMax(0.0).cwiseSqrt() * options.model.measurement_scale;
      prediction.observed =
          Eigen::VectorXd::Constant(dim_z, std::numeric_limits<double>::quiet_NaN());
      out.push_back(std::move(prediction));

      ens.members.middleRows(layout.d_offset(), layout.n_a).setZero();
    }
  }
  return out;
}

}  // namespace agekf::overdose
