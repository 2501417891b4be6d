#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "ahdml/dataset.hpp"
#include "ahdml/nuisance.hpp"
#include "ahdml/survival.hpp"

namespace ahdml::eif {

using nuisance::NuisanceTriple;

// Evaluation grid: 0, observed event times in (0, tau], tau, and optionally
// the multiples of `refine_step` below tau.
std::vector<double> make_grid(const Dataset& data, double tau, double refine_step = 0.0);

struct SurvivalEifRow {
  std::size_t unit_id = 0;
  int arm = 0;
  std::shared_ptr<const std::vector<double>> grid;
  std::vector<double> phi;     // uncentered phi_{t,a}(O) on the grid
  std::vector<double> plugin;  // S(t | a, W) on the grid
};

struct ThetaEifRow {
  std::size_t unit_id = 0;
  int arm = 0;
  double value = 0.0;
};

// Reusable per-unit evaluator. Holds scratch buffers sized to the grid, so a
// single instance per thread avoids allocation in the estimator's inner loop.
class EifEvaluator {
 public:
  explicit EifEvaluator(std::span<const double> grid);

  void evaluate(std::span<const double> w, int a, double u, int delta, int arm,
                const NuisanceTriple& nuis);
  void evaluate(const ObservedUnit& unit, int arm, const NuisanceTriple& nuis) {
    evaluate(unit.w, unit.a, unit.u, unit.delta, arm, nuis);
  }

  std::span<const double> grid() const { return grid_; }
  std::span<const double> phi() const { return phi_; }
  std::span<const double> plugin() const { return plugin_; }
  // Exact integrals over [0, tau] of the step paths.
  double phi_integral() const;
  double plugin_integral() const;

  // Martingale atoms dM(u) / (S(u) G(u-)) placed on grid indices; the
  // augmentation at grid point g is the sum over atoms with index <= g.
  // Empty when the unit's arm differs from the target arm.
  struct Atom {
    std::size_t index;
    double value;
  };
  std::span<const Atom> atoms() const { return atoms_; }
  // 1{A = a} / pi(a | W), zero when A != a.
  double inverse_weight() const { return inv_weight_; }

 private:
  std::vector<double> grid_;
  std::vector<double> dt_;
  std::vector<double> lambda_;
  std::vector<double> censor_lambda_;
  std::vector<double> plugin_;
  std::vector<double> phi_;
  std::vector<Atom> atoms_;
  double inv_weight_ = 0.0;
};

SurvivalEifRow survival_eif(const ObservedUnit& unit, std::size_t unit_id, int arm,
                            const NuisanceTriple& nuis,
                            std::shared_ptr<const std::vector<double>> grid);

// -(phi(tau) - S(tau)) / F - (int phi - R) / R, integrals exact on the grid.
// `marginal` must be a step curve whose knots lie on the row's grid.
ThetaEifRow theta_eif(const SurvivalEifRow& row, const survival::AhSummary& summary,
                      const survival::StepSurvivalCurve& marginal);

// Scalar form used by the streaming estimator: only phi(tau) and its
// integral are needed per unit.
double theta_eif_value(double phi_tau, double phi_integral, const survival::AhSummary& summary,
                       double marginal_tau, double marginal_rmst);

// Same quantity through the time-dependent weight representation
//   -(S(tau|a,W) - S(tau)) / F - (R(tau|a,W) - R) / R
//   + 1{A=a}/pi * sum_u w(u) dM(u) / (S(u) G(u-)),
//   w(u) = S(tau|a,W) / F + (R(tau|a,W) - R(u|a,W)) / R.
// When `weights` is non-null it receives (u, w(u)) on the grid.
ThetaEifRow theta_eif_expanded(const ObservedUnit& unit, std::size_t unit_id, int arm,
                               const NuisanceTriple& nuis, const survival::AhSummary& summary,
                               const survival::StepSurvivalCurve& marginal,
                               std::span<const double> grid,
                               std::vector<std::pair<double, double>>* weights = nullptr);

struct DerivativeCheck {
  double analytic = 0.0;
  double numeric = 0.0;
};

// Directional derivative of S -> log F(tau) - log R(tau) along h, analytic
// versus a central difference with step eps. h is evaluated on the base
// curve's knots (and at 0), giving a step perturbation.
DerivativeCheck hadamard_derivative_check(const survival::StepSurvivalCurve& base,
                                          const std::function<double(double)>& h, double tau,
                                          double eps = 1e-4);

struct DriftEstimate {
  double value = 0.0;
  double mc_se = 0.0;
};

// Second-order remainder P phi_{t,a}(nu_hat) - S_a(t) written as
//   E[ S_hat(t) int_0^t S0(u-)/S_hat(u) {pi0 G0 / (pi_hat G_hat) - 1}(u) d(L_hat - L0)(u) ],
// averaged over the covariate rows of `covariates`; the u-integral uses a
// midpoint rule with the given step.
DriftEstimate drift_bias(const NuisanceTriple& hat, const NuisanceTriple& truth, int arm,
                         double t, const Dataset& covariates, double step = 0.01);

}  // namespace ahdml::eif
