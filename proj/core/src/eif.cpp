#include "ahdml/eif.hpp"

#include <algorithm>
#include <cmath>

#include "ahdml/error.hpp"

namespace ahdml::eif {

std::vector<double> make_grid(const Dataset& data, double tau, double refine_step) {
  if (!(tau > 0.0)) throw Error(ErrorKind::invalid_horizon, "make_grid: tau must be > 0");
  std::vector<double> grid{0.0, tau};
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.delta(i) == 1 && data.u(i) > 0.0 && data.u(i) < tau) grid.push_back(data.u(i));
  }
  if (refine_step > 0.0) {
    for (double t = refine_step; t < tau; t += refine_step) grid.push_back(t);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

EifEvaluator::EifEvaluator(std::span<const double> grid) : grid_(grid.begin(), grid.end()) {
  if (grid_.size() < 2 || grid_.front() != 0.0) {
    throw Error(ErrorKind::domain, "EIF grid must start at 0 and contain tau");
  }
  for (std::size_t g = 1; g < grid_.size(); ++g) {
    if (!(grid_[g] > grid_[g - 1])) throw Error(ErrorKind::domain, "EIF grid must be increasing");
  }
  const std::size_t m = grid_.size();
  dt_.resize(m, 0.0);
  for (std::size_t g = 0; g + 1 < m; ++g) dt_[g] = grid_[g + 1] - grid_[g];
  lambda_.resize(m);
  censor_lambda_.resize(m);
  plugin_.resize(m);
  phi_.resize(m);
  atoms_.reserve(m + 2);
}

void EifEvaluator::evaluate(std::span<const double> w, int a, double u, int delta, int arm,
                            const NuisanceTriple& nuis) {
  const std::size_t m = grid_.size();
  const auto& event = *nuis.event;
  const double s_floor = event.floor();
  event.cumulative_hazard_path(grid_, arm, w, false, lambda_);
  for (std::size_t g = 0; g < m; ++g) plugin_[g] = std::max(std::exp(-lambda_[g]), s_floor);

  atoms_.clear();
  if (a != arm) {
    inv_weight_ = 0.0;
    std::copy(plugin_.begin(), plugin_.end(), phi_.begin());
    return;
  }
  inv_weight_ = 1.0 / nuis.pi(arm, w);

  const auto& censor = *nuis.censor;
  const double g_floor = censor.floor();
  const double tau = grid_.back();
  // Grid points in [0, min(U, tau)].
  const std::size_t k =
      static_cast<std::size_t>(std::upper_bound(grid_.begin(), grid_.end(), std::min(u, tau)) -
                               grid_.begin());
  censor.cumulative_hazard_path(std::span<const double>(grid_.data(), k), arm, w, true,
                                std::span<double>(censor_lambda_.data(), k));
  // Compensator mass on each cell is the exact integral of dLambda / S for
  // S = max(exp(-Lambda), floor), i.e. the increment of 1 / S.
  for (std::size_t g = 1; g < k; ++g) {
    const double d = 1.0 / plugin_[g] - 1.0 / plugin_[g - 1];
    if (d == 0.0) continue;
    const double gl = std::max(std::exp(-censor_lambda_[g]), g_floor);
    atoms_.push_back({g, -d / gl});
  }
  const bool on_grid = grid_[k - 1] == u;
  if (u < tau || (u == tau && delta == 1)) {
    const double s_u = event.survival(u, arm, w);
    const double g_u = censor.survival_left(u, arm, w);
    if (!on_grid) {
      const double d = 1.0 / s_u - 1.0 / plugin_[k - 1];
      if (d != 0.0) atoms_.push_back({k, -d / g_u});
    }
    if (delta == 1) atoms_.push_back({on_grid ? k - 1 : k, 1.0 / (s_u * g_u)});
  }

  std::fill(phi_.begin(), phi_.end(), 0.0);
  for (const auto& atom : atoms_) phi_[atom.index] += atom.value;
  double cum = 0.0;
  for (std::size_t g = 0; g < m; ++g) {
    cum += phi_[g];
    phi_[g] = plugin_[g] * (1.0 - inv_weight_ * cum);
  }
}

double EifEvaluator::phi_integral() const {
  double total = 0.0;
  for (std::size_t g = 0; g + 1 < grid_.size(); ++g) total += phi_[g] * dt_[g];
  return total;
}

double EifEvaluator::plugin_integral() const {
  double total = 0.0;
  for (std::size_t g = 0; g + 1 < grid_.size(); ++g) total += plugin_[g] * dt_[g];
  return total;
}

SurvivalEifRow survival_eif(const ObservedUnit& unit, std::size_t unit_id, int arm,
                            const NuisanceTriple& nuis,
                            std::shared_ptr<const std::vector<double>> grid) {
  EifEvaluator eval(*grid);
  eval.evaluate(unit, arm, nuis);
  SurvivalEifRow row;
  row.unit_id = unit_id;
  row.arm = arm;
  row.phi.assign(eval.phi().begin(), eval.phi().end());
  row.plugin.assign(eval.plugin().begin(), eval.plugin().end());
  row.grid = std::move(grid);
  return row;
}

namespace {

void check_summary(const survival::AhSummary& summary) {
  if (!(summary.cuminc > 0.0) || !(summary.rmst > 0.0)) {
    throw Error(ErrorKind::degenerate_estimand, "theta EIF needs F(tau) > 0 and R(tau) > 0");
  }
}

void check_tau(std::span<const double> grid, double tau) {
  if (std::abs(grid.back() - tau) > 1e-12 * std::max(1.0, tau)) {
    throw Error(ErrorKind::domain, "EIF grid must end at the summary horizon");
  }
}

}  // namespace

double theta_eif_value(double phi_tau, double phi_integral, const survival::AhSummary& summary,
                       double marginal_tau, double marginal_rmst) {
  check_summary(summary);
  return -(phi_tau - marginal_tau) / summary.cuminc -
         (phi_integral - marginal_rmst) / summary.rmst;
}

ThetaEifRow theta_eif(const SurvivalEifRow& row, const survival::AhSummary& summary,
                      const survival::StepSurvivalCurve& marginal) {
  check_summary(summary);
  const auto& grid = *row.grid;
  check_tau(grid, summary.tau);
  double integral = 0.0;
  for (std::size_t g = 0; g + 1 < grid.size(); ++g) integral += row.phi[g] * (grid[g + 1] - grid[g]);
  const double value = theta_eif_value(row.phi.back(), integral, summary, marginal(summary.tau),
                                       survival::rmst(marginal, summary.tau));
  return {row.unit_id, row.arm, value};
}

ThetaEifRow theta_eif_expanded(const ObservedUnit& unit, std::size_t unit_id, int arm,
                               const NuisanceTriple& nuis, const survival::AhSummary& summary,
                               const survival::StepSurvivalCurve& marginal,
                               std::span<const double> grid,
                               std::vector<std::pair<double, double>>* weights) {
  check_summary(summary);
  check_tau(grid, summary.tau);
  EifEvaluator eval(grid);
  eval.evaluate(unit, arm, nuis);
  const auto plugin = eval.plugin();
  const std::size_t m = grid.size();

  // R(u | a, W) at each grid point.
  std::vector<double> r0(m, 0.0);
  for (std::size_t g = 1; g < m; ++g) r0[g] = r0[g - 1] + plugin[g - 1] * (grid[g] - grid[g - 1]);
  const double s_tau = plugin[m - 1];
  const double r_tau = r0[m - 1];
  const double f = summary.cuminc;
  const double r = summary.rmst;
  auto weight = [&](std::size_t g) { return s_tau / f + (r_tau - r0[g]) / r; };

  if (weights != nullptr) {
    weights->clear();
    for (std::size_t g = 0; g < m; ++g) weights->emplace_back(grid[g], weight(g));
  }

  double value = -(s_tau - marginal(summary.tau)) / f -
                 (r_tau - survival::rmst(marginal, summary.tau)) / r;
  double aug = 0.0;
  for (const auto& atom : eval.atoms()) aug += weight(atom.index) * atom.value;
  value += eval.inverse_weight() * aug;
  return {unit_id, arm, value};
}

DerivativeCheck hadamard_derivative_check(const survival::StepSurvivalCurve& base,
                                          const std::function<double(double)>& h, double tau,
                                          double eps) {
  if (!(tau > 0.0)) throw Error(ErrorKind::invalid_horizon, "tau must be > 0");
  if (!(eps > 0.0)) throw Error(ErrorKind::domain, "eps must be > 0");
  std::vector<double> knots(base.times().begin(), base.times().end());
  if (knots.empty() || knots.front() > 0.0) knots.insert(knots.begin(), 0.0);

  std::vector<double> s(knots.size()), hv(knots.size());
  for (std::size_t k = 0; k < knots.size(); ++k) {
    s[k] = base(knots[k]);
    hv[k] = h(knots[k]);
  }

  auto phi = [&](double step) {
    std::vector<double> v(knots.size());
    for (std::size_t k = 0; k < knots.size(); ++k) {
      v[k] = s[k] + step * hv[k];
      if (!(v[k] >= 0.0 && v[k] <= 1.0)) {
        throw Error(ErrorKind::invalid_perturbation, "perturbed curve leaves [0, 1]");
      }
    }
    survival::StepSurvivalCurve curve(knots, std::move(v));
    const auto summary = survival::average_hazard(curve, tau);
    return std::log(summary.cuminc) - std::log(summary.rmst);
  };

  const auto summary = survival::average_hazard(base, tau);
  survival::StepFunction hstep(knots, hv, 0.0);
  DerivativeCheck out;
  out.analytic = -hstep(tau) / summary.cuminc - survival::step_integral(hstep, tau) / summary.rmst;
  out.numeric = (phi(eps) - phi(-eps)) / (2.0 * eps);
  return out;
}

DriftEstimate drift_bias(const NuisanceTriple& hat, const NuisanceTriple& truth, int arm,
                         double t, const Dataset& covariates, double step) {
  if (!(t > 0.0)) throw Error(ErrorKind::invalid_horizon, "drift_bias: t must be > 0");
  if (covariates.empty()) throw Error(ErrorKind::degenerate_data, "drift_bias: no covariates");
  std::vector<double> knots{0.0};
  for (double u = step; u < t; u += step) knots.push_back(u);
  knots.push_back(t);

  const std::size_t n = covariates.size();
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto w = covariates.w(i);
    const double pi_hat = hat.pi(arm, w);
    const double pi0 = truth.pi(arm, w);
    double integral = 0.0;
    double lh_prev = 0.0, l0_prev = 0.0;
    for (std::size_t k = 1; k < knots.size(); ++k) {
      const double lh = hat.event->cumulative_hazard(knots[k], arm, w);
      const double l0 = truth.event->cumulative_hazard(knots[k], arm, w);
      const double diff = (lh - lh_prev) - (l0 - l0_prev);
      lh_prev = lh;
      l0_prev = l0;
      if (diff == 0.0) continue;
      const double mid = 0.5 * (knots[k - 1] + knots[k]);
      const double ratio = (pi0 * truth.censor->survival_left(mid, arm, w)) /
                           (pi_hat * hat.censor->survival_left(mid, arm, w));
      if (ratio == 1.0) continue;
      integral += truth.event->survival_left(mid, arm, w) / hat.event->survival(mid, arm, w) *
                  (ratio - 1.0) * diff;
    }
    const double term = hat.event->survival(t, arm, w) * integral;
    sum += term;
    sum_sq += term * term;
  }
  const double nn = static_cast<double>(n);
  const double mean = sum / nn;
  const double var = n > 1 ? std::max(sum_sq / nn - mean * mean, 0.0) * nn / (nn - 1.0) : 0.0;
  return {mean, std::sqrt(var / nn)};
}

}  // namespace ahdml::eif
