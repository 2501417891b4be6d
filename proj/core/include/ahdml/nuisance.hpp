#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ahdml/dataset.hpp"
#include "ahdml/error.hpp"
#include "ahdml/features.hpp"
#include "ahdml/survival.hpp"

namespace ahdml::nuisance {

inline constexpr double kDefaultEpsilon = 0.025;
inline constexpr double kDefaultEpsilonS = 0.005;
inline constexpr double kRidgeOnSeparation = 1e-6;

// ---------------------------------------------------------------------------
// Propensity

class PropensityPredictor {
 public:
  virtual ~PropensityPredictor() = default;
  // Untruncated P(A = 1 | W = w).
  virtual double prob_treated(std::span<const double> w) const = 0;
};

double truncate_propensity(double raw, double epsilon);

class PropensityModel final : public PropensityPredictor {
 public:
  PropensityModel(FeatureMap features, Eigen::VectorXd coef, double epsilon,
                  bool ridge_fallback, int iterations);

  double prob_treated(std::span<const double> w) const override;
  // Truncated pi(a | w) in [epsilon, 1 - epsilon].
  double prob(int a, std::span<const double> w) const;

  Basis basis() const { return features_.basis(); }
  const Eigen::VectorXd& coefficients() const { return coef_; }  // intercept first
  double epsilon() const { return epsilon_; }
  bool ridge_fallback() const { return ridge_fallback_; }
  int iterations() const { return iterations_; }

 private:
  FeatureMap features_;
  Eigen::VectorXd coef_;
  double epsilon_;
  bool ridge_fallback_;
  int iterations_;
};

// Logistic regression by IRLS on the chosen basis. Single-arm data throws
// `unfittable`; diverging coefficients trigger a ridge-stabilized refit.
PropensityModel fit_propensity(const Dataset& train, Basis basis,
                               double epsilon = kDefaultEpsilon);

struct PropensitySelection {
  PropensityModel model;
  std::vector<double> cv_risk;  // mean held-out log-loss per basis
  std::size_t selected = 0;
};

PropensitySelection select_propensity(const Dataset& train, std::span<const Basis> bases,
                                      int v_folds, std::uint64_t seed,
                                      double epsilon = kDefaultEpsilon);

// ---------------------------------------------------------------------------
// Conditional survival

enum class LearnerKind {
  cox_ph,
  cox_ph_interactions,
  cox_ph_stratified,
  weibull_aft,
  exponential_aft,
  loglogistic_aft,
  stratified_km,
  closed_form,  // known mechanism (simulation oracles); not fittable
};

struct LearnerSpec {
  LearnerKind kind = LearnerKind::cox_ph;
  Basis basis = Basis::raw;

  // "kind" or "kind:basis", e.g. "weibull-aft:poly2".
  static LearnerSpec parse(std::string_view text);
  std::string to_string() const;
  bool operator==(const LearnerSpec&) const = default;
};

std::string_view to_string(LearnerKind kind);

enum class Outcome { event, censoring };

// Cumulative-hazard interface shared by fitted learners and closed-form
// oracle mechanisms.
class SurvivalPredictor {
 public:
  virtual ~SurvivalPredictor() = default;

  // Lambda(t | a, w), right-continuous.
  virtual double cumulative_hazard(double t, int a, std::span<const double> w) const = 0;
  // Lambda(t- | a, w).
  virtual double cumulative_hazard_left(double t, int a, std::span<const double> w) const {
    return cumulative_hazard(t, a, w);
  }
  // Lambda on an ascending grid (left limits when `left`).
  virtual void cumulative_hazard_path(std::span<const double> grid, int a,
                                      std::span<const double> w, bool left,
                                      std::span<double> out) const;
  virtual bool is_step() const { return false; }
};

struct FitInfo {
  std::vector<std::string> names;
  std::vector<double> estimate;
  std::vector<double> std_error;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = true;
};

// Fitted conditional survival mechanism with a survival floor. Also used,
// with outcome = censoring, for G(t | a, w) = P(C >= t | a, w).
class ConditionalSurvivalModel {
 public:
  ConditionalSurvivalModel(LearnerSpec spec, std::shared_ptr<const SurvivalPredictor> predictor,
                           double floor, FitInfo info = {});

  double cumulative_hazard(double t, int a, std::span<const double> w) const {
    return predictor_->cumulative_hazard(t, a, w);
  }
  // max(exp(-Lambda(t)), floor)
  double survival(double t, int a, std::span<const double> w) const;
  // max(exp(-Lambda(t-)), floor)
  double survival_left(double t, int a, std::span<const double> w) const;
  void cumulative_hazard_path(std::span<const double> grid, int a, std::span<const double> w,
                              bool left, std::span<double> out) const {
    predictor_->cumulative_hazard_path(grid, a, w, left, out);
  }

  const LearnerSpec& spec() const { return spec_; }
  double floor() const { return floor_; }
  const SurvivalPredictor& predictor() const { return *predictor_; }
  const FitInfo& info() const { return info_; }
  bool is_step() const { return predictor_->is_step(); }

 private:
  LearnerSpec spec_;
  std::shared_ptr<const SurvivalPredictor> predictor_;
  double floor_;
  FitInfo info_;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, std::vector<double> last)
      : Error(ErrorKind::non_convergence, what), last_iterate(std::move(last)) {}
  std::vector<double> last_iterate;
};

struct CoxOptions {
  int max_iter = 100;
  bool force_zero = false;  // skip estimation, beta = 0
};

ConditionalSurvivalModel fit_cox(const Dataset& train, Outcome outcome, bool interactions,
                                 Basis basis = Basis::raw, double floor = kDefaultEpsilonS,
                                 CoxOptions options = {});

// Separate baseline hazard and coefficients in each treatment arm.
ConditionalSurvivalModel fit_cox_stratified(const Dataset& train, Outcome outcome,
                                            Basis basis = Basis::raw,
                                            double floor = kDefaultEpsilonS);

enum class AftFamily { exponential, weibull, loglogistic };

ConditionalSurvivalModel fit_parametric_aft(const Dataset& train, Outcome outcome,
                                            AftFamily family, Basis basis = Basis::raw,
                                            double floor = kDefaultEpsilonS);

// Nelson-Aalen within strata of (arm, covariate pattern) when W takes few
// distinct values, otherwise within arm only.
ConditionalSurvivalModel fit_stratified_km(const Dataset& train, Outcome outcome,
                                           double floor = kDefaultEpsilonS);

ConditionalSurvivalModel fit_learner(const Dataset& train, Outcome outcome,
                                     const LearnerSpec& spec, double floor = kDefaultEpsilonS);

// Held-out right-censored negative log-likelihood of a fitted model, using
// the bin-averaged hazard on `edges` so step and smooth learners compete on
// the same footing.
double heldout_nll(const ConditionalSurvivalModel& model, const Dataset& test, Outcome outcome,
                   std::span<const double> edges);

std::vector<double> likelihood_bins(const Dataset& data, Outcome outcome, int bins = 10);

struct LearnerSelection {
  ConditionalSurvivalModel model;
  std::vector<double> cv_risk;  // +inf for candidates that failed on some fold
  std::size_t selected = 0;
};

// Discrete cross-validated selection; ties go to the first-listed candidate.
LearnerSelection select_learner(const Dataset& train, Outcome outcome,
                                std::span<const LearnerSpec> candidates, int v_folds,
                                std::uint64_t seed, double floor = kDefaultEpsilonS);

// ---------------------------------------------------------------------------

// Propensity, event and censoring mechanisms trained on one fold complement.
struct NuisanceTriple {
  std::shared_ptr<const PropensityPredictor> propensity;
  std::shared_ptr<const ConditionalSurvivalModel> event;
  std::shared_ptr<const ConditionalSurvivalModel> censor;
  double epsilon = kDefaultEpsilon;
  int fold_id = -1;
  std::uint64_t train_fingerprint = 0;
  std::vector<std::size_t> train_rows;

  // Truncated pi(a | w).
  double pi(int a, std::span<const double> w) const;
};

}  // namespace ahdml::nuisance
