#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ahdml/dataset.hpp"
#include "ahdml/nuisance.hpp"
#include "ahdml/survival.hpp"

namespace ahdml::est {

inline constexpr int kMaxReseeds = 10;

struct CrossFitPlan {
  int k_folds = 5;
  std::uint64_t seed = 0;
  std::vector<int> folds;  // fold label per unit
  int reseeds = 0;         // extra draws needed to satisfy feasibility
};

// Arm-stratified K-fold partition. A partition is feasible when every fold
// holds both arms and at least one event in each arm; infeasible draws are
// redrawn up to kMaxReseeds times before `fold_infeasible` is thrown.
CrossFitPlan make_plan(const Dataset& data, int k_folds, std::uint64_t seed);

struct LearnerConfig {
  std::vector<nuisance::Basis> propensity_bases{nuisance::Basis::raw, nuisance::Basis::poly2};
  std::vector<nuisance::LearnerSpec> event_learners{
      {nuisance::LearnerKind::cox_ph, nuisance::Basis::raw},
      {nuisance::LearnerKind::cox_ph_stratified, nuisance::Basis::poly2},
      {nuisance::LearnerKind::weibull_aft, nuisance::Basis::poly2}};
  std::vector<nuisance::LearnerSpec> censor_learners{
      {nuisance::LearnerKind::cox_ph, nuisance::Basis::raw},
      {nuisance::LearnerKind::exponential_aft, nuisance::Basis::poly2}};
  int v_folds = 5;
  double epsilon = nuisance::kDefaultEpsilon;
  double epsilon_s = nuisance::kDefaultEpsilonS;
  // Regular refinement of the event-time grid; 0 disables.
  double grid_step = 0.25;
  double alpha = 0.05;
};

struct ArmResult {
  survival::AhSummary summary;
  double se = 0.0;  // SE of eta_a
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct AhEstimate {
  std::string method;
  double tau = 0.0;
  double alpha = 0.05;
  ArmResult arm[2];
  double theta = 0.0;
  double rah = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool se_available = true;
  std::vector<double> eif_values;  // per unit phi*_theta1 - phi*_theta0
  std::vector<double> arm_eif[2];  // per unit phi*_theta_a
  std::vector<std::string> warnings;
  std::vector<std::string> nuisance_log;

  // Marginal curves on the evaluation grid; raw_curve holds the one-step
  // means before monotone projection (empty for plug-in methods).
  std::vector<double> grid;
  std::vector<double> curve[2];
  std::vector<double> raw_curve[2];
};

// Cross-fitted one-step AH estimator.
AhEstimate ah_dml(const Dataset& data, double tau, const CrossFitPlan& plan,
                  const LearnerConfig& config = {});

// One-step algebra with externally supplied nuisances (unit i uses
// nuisances(i)); no fitting, no sample splitting.
AhEstimate one_step(const Dataset& data, double tau, std::span<const double> grid,
                    const std::function<const nuisance::NuisanceTriple&(std::size_t)>& nuisances,
                    double alpha = 0.05);

// Follow-up truncated at `horizon`, with the indicator of the chosen
// outcome; units still under observation at the horizon carry status 0 in
// both views.
Dataset horizon_view(const Dataset& data, double horizon, nuisance::Outcome outcome);

// Nuisance fitting on one training set. The survival mechanisms only enter
// on [0, horizon] and are trained on the horizon views.
nuisance::NuisanceTriple fit_nuisances(const Dataset& train, const LearnerConfig& config,
                                       std::uint64_t seed, double horizon);

// Outcome-regression plug-in; percentile bootstrap refitting the learner
// chosen on the full data.
AhEstimate g_computation(const Dataset& data, double tau, const LearnerConfig& config,
                         int bootstrap_reps = 200, std::uint64_t seed = 0);

// Plug-in from a single Cox working model with main effects.
AhEstimate cox_marginal(const Dataset& data, double tau, int bootstrap_reps = 200,
                        std::uint64_t seed = 0, bool force_zero = false, double alpha = 0.05);

struct MarginalizedRate {
  double rate = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;  // units with R(tau | a, w) = 0
};

// E[F(tau | a, W) / R(tau | a, W)] from per-unit conditional values.
MarginalizedRate marginalized_rate(std::span<const double> cuminc, std::span<const double> rmst);

// Per-arm marginalized conditional rate under the selected outcome model.
std::pair<MarginalizedRate, MarginalizedRate> marginalized_conditional_rate(
    const Dataset& data, double tau, const LearnerConfig& config, std::uint64_t seed = 0);

std::pair<double, double> wald_interval(double theta, double se, double alpha);

}  // namespace ahdml::est
