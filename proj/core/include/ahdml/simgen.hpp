#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ahdml/dataset.hpp"
#include "ahdml/nuisance.hpp"
#include "ahdml/rng.hpp"
#include "ahdml/survival.hpp"

namespace ahdml::sim {

// ph: Weibull PH events with linear exponential censoring.
// ph-complex: Weibull PH events with Weibull PH censoring.
// non-ph / cross-a: exponential control arm, time-warped treated arm.
enum class DgmKind { ph, ph_complex, non_ph, cross_a };

std::string_view to_string(DgmKind kind);
DgmKind parse_dgm_kind(std::string_view text);

struct DgmSpec {
  DgmKind kind = DgmKind::ph;

  // Weibull PH event model.
  double alpha = 1.5;
  double s0 = -5.6;
  double s1 = -5.96;
  // PH-complex censoring.
  double g0 = -4.7;
  double g_arm = -0.4;
  // Linear exponential censoring: intercept, arm, (w1-50)/10, (w2-30)/10, (w3-5).
  double c0 = -3.8;
  double c_arm = 0.3;
  double c1 = 0.20;
  double c2 = 0.05;
  double c3 = 0.20;
  // Warp models.
  double beta0 = 1.0;
  double beta_gamma = -1.64;
  double ramp = 1.5;
  double cross_eps = 0.5;
  double warp_censor_beta1 = -4.9;
  std::optional<double> gamma_override;  // e.g. 1.0 gives identical arms

  double admin_cap = 24.0;

  static DgmSpec preset(DgmKind kind);
  // "ph", "ph-complex", "non-ph", "cross-a", or "null" (non-ph with gamma = 1).
  static DgmSpec named(std::string_view name);
  std::string name() const;
  // Stable hash over all coefficients.
  std::uint64_t fingerprint() const;
};

// Covariate rows (w1, w2, w3); W1 drawn first, then W3 | W1, then W2 | W1.
void sample_covariate(Rng& rng, double* w);
Dataset sample_covariates(std::size_t n, Rng& rng);

double propensity_true(std::span<const double> w);

// Closed-form conditional cumulative hazards.
double event_cumhaz(const DgmSpec& spec, double t, int a, std::span<const double> w);
double censor_cumhaz(const DgmSpec& spec, double t, int a, std::span<const double> w);
// Inverse of event_cumhaz in t.
double event_quantile(const DgmSpec& spec, double target, int a, std::span<const double> w);

struct WarpParams {
  double gamma = 1.0;
  double iota = 0.0;
  double ramp = 1.5;
  double eps = 0.5;
  bool crossing = false;
};
WarpParams warp_params(const DgmSpec& spec, std::span<const double> w);
double warp(const WarpParams& p, double t);
double warp_derivative(const WarpParams& p, double t);
double warp_inverse(const WarpParams& p, double y);
double control_rate(const DgmSpec& spec, std::span<const double> w);

// Full observed-data sample; U = min(T, C, admin_cap).
Dataset sample(const DgmSpec& spec, std::size_t n, std::uint64_t seed);
// Uncensored counterfactual event times T(a) with their covariates.
struct Counterfactuals {
  Dataset covariates;  // u = T(a), delta = 1, a = arm
  std::vector<double> times;
};
Counterfactuals sample_counterfactual(const DgmSpec& spec, int arm, std::size_t n,
                                      std::uint64_t seed);

// Exact F(tau | a, w) and R(tau | a, w).
struct ConditionalAh {
  double cuminc = 0.0;
  double rmst = 0.0;
};
ConditionalAh conditional_ah(const DgmSpec& spec, double tau, int a, std::span<const double> w);

struct TruthRecord {
  double tau = 0.0;
  double eta0 = 0.0, eta1 = 0.0, theta = 0.0;
  double mc_se_eta0 = 0.0, mc_se_eta1 = 0.0, mc_se_theta = 0.0;
  double f0 = 0.0, f1 = 0.0, r0 = 0.0, r1 = 0.0;
  std::uint64_t n_oracle = 0;
  std::uint64_t seed = 0;
};

inline constexpr std::uint64_t kDefaultOracleDraws = 2'000'000;
inline constexpr int kTruthBatches = 20;

// Marginalizes the exact conditional (F, R) over n_oracle covariate draws;
// MC standard errors from batch means.
TruthRecord truth_theta(const DgmSpec& spec, double tau,
                        std::uint64_t n_oracle = kDefaultOracleDraws, std::uint64_t seed = 1,
                        int workers = 1);

// Marginal S_a(t) on a grid, averaged over n covariate draws.
survival::StepSurvivalCurve truth_curve(const DgmSpec& spec, int arm, std::span<const double> grid,
                                        std::size_t n, std::uint64_t seed);

// Exact DGP mechanisms wrapped in the fitted-model interfaces; no floors
// or truncation unless requested.
nuisance::NuisanceTriple oracle_nuisances(const DgmSpec& spec, double epsilon = 0.0,
                                          double event_floor = 0.0, double censor_floor = 0.0);

// Misspecification helpers for robustness studies.
std::shared_ptr<const nuisance::SurvivalPredictor> scaled_hazard(
    std::shared_ptr<const nuisance::SurvivalPredictor> base, double factor);
std::shared_ptr<const nuisance::PropensityPredictor> scaled_propensity(
    std::shared_ptr<const nuisance::PropensityPredictor> base, double factor);

}  // namespace ahdml::sim
