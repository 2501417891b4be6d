#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ahdml/dataset.hpp"

namespace ahdml::survival {

// Right-continuous step function on an ascending grid. Evaluation before
// the first knot returns `origin`.
class StepFunction {
 public:
  StepFunction() = default;
  StepFunction(std::vector<double> times, std::vector<double> values, double origin);

  double operator()(double t) const;
  // Left limit f(t-).
  double left_limit(double t) const;

  std::span<const double> times() const { return times_; }
  std::span<const double> values() const { return values_; }
  double origin() const { return origin_; }
  std::size_t size() const { return times_.size(); }

 private:
  std::vector<double> times_;
  std::vector<double> values_;
  double origin_ = 0.0;
};

// Survival function S(t): S = 1 before the first knot, values in [0, 1].
class StepSurvivalCurve {
 public:
  StepSurvivalCurve() = default;
  StepSurvivalCurve(std::vector<double> times, std::vector<double> values);

  double operator()(double t) const { return fn_(t); }
  double left_limit(double t) const { return fn_.left_limit(t); }
  std::span<const double> times() const { return fn_.times(); }
  std::span<const double> values() const { return fn_.values(); }
  std::size_t size() const { return fn_.size(); }
  bool is_monotone() const;

 private:
  StepFunction fn_;
};

struct AhSummary {
  double cuminc = 0.0;  // F(tau)
  double rmst = 0.0;    // R(tau)
  double ah = 0.0;      // F / R
  double tau = 0.0;
};

// Exact integral of a right-continuous step function over [0, tau].
double step_integral(const StepFunction& f, double tau);

double rmst(const StepSurvivalCurve& curve, double tau);

AhSummary average_hazard(const StepSurvivalCurve& curve, double tau);
// Summary from already-computed (F, R); same degeneracy checks.
AhSummary average_hazard(double cuminc, double rmst, double tau);

double log_ah_ratio(double eta1, double eta0);

enum class Direction { non_increasing, non_decreasing };

// L2 projection onto monotone sequences by pool-adjacent-violators.
// Optional positive weights; defaults to equal weights.
std::vector<double> isotonic_project(std::span<const double> values,
                                     Direction direction = Direction::non_increasing,
                                     std::span<const double> weights = {});

// Product-limit estimator. Knots are the distinct observed times.
StepSurvivalCurve km_estimate(std::span<const double> times, std::span<const int> events,
                              std::span<const double> weights = {});
StepSurvivalCurve km_estimate(const Dataset& data, std::span<const double> weights = {});

// Nelson-Aalen cumulative hazard, increments d / n_at_risk at event times.
StepFunction nelson_aalen(std::span<const double> times, std::span<const int> events,
                          std::span<const double> weights = {});
StepFunction nelson_aalen(const Dataset& data);

// Sample an analytic survival function onto [0, tau] with the given step.
StepSurvivalCurve sample_curve(const std::function<double(double)>& surv, double tau,
                               double step = 0.01);

}  // namespace ahdml::survival
