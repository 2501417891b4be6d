#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Cholesky>

#include "ahdml/nuisance.hpp"
#include "design.hpp"
#include "newton.hpp"

namespace ahdml::nuisance {

namespace detail {

Dataset outcome_view(const Dataset& train, Outcome outcome) {
  return outcome == Outcome::censoring ? train.with_flipped_events() : train;
}

}  // namespace detail

namespace {

struct CoxFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  double loglik = 0.0;
  int iterations = 0;
  survival::StepFunction baseline;  // Breslow Lambda_0
};

// Breslow partial likelihood maximized by Newton-Raphson. Risk sets are
// {U >= t}, so tied events and censorings at t are all at risk at t.
CoxFit fit_cox_core(const Eigen::MatrixXd& x, std::span<const double> times,
                    std::span<const int> events, int max_iter, bool force_zero) {
  const std::size_t n = times.size();
  const auto p = x.cols();
  std::size_t total_events = 0;
  for (int d : events) total_events += (d == 1);
  if (total_events == 0) {
    throw Error(ErrorKind::unfittable, "cox: no outcome events in training data");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return times[i] > times[j]; });
  // Groups of tied times in descending order.
  std::vector<std::size_t> group_start;
  for (std::size_t k = 0; k < n; ++k) {
    if (k == 0 || times[order[k]] != times[order[k - 1]]) group_start.push_back(k);
  }
  group_start.push_back(n);

  auto objective = [&](const Eigen::VectorXd& beta, bool derivs, ahdml::detail::Objective& out) {
    Eigen::VectorXd eta = p > 0 ? Eigen::VectorXd(x * beta) : Eigen::VectorXd::Zero(n);
    const double shift = eta.maxCoeff();
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
    double ll = 0.0;
    if (derivs) {
      out.grad = Eigen::VectorXd::Zero(p);
      out.hess = Eigen::MatrixXd::Zero(p, p);
    }
    for (std::size_t g = 0; g + 1 < group_start.size(); ++g) {
      double d = 0.0;
      Eigen::VectorXd xsum = Eigen::VectorXd::Zero(p);
      for (std::size_t k = group_start[g]; k < group_start[g + 1]; ++k) {
        const auto i = static_cast<Eigen::Index>(order[k]);
        const double r = std::exp(eta[i] - shift);
        s0 += r;
        if (derivs && p > 0) {
          s1.noalias() += r * x.row(i).transpose();
          s2.selfadjointView<Eigen::Lower>().rankUpdate(x.row(i).transpose(), r);
        }
        if (events[order[k]] == 1) {
          d += 1.0;
          ll += eta[i];
          if (derivs && p > 0) xsum += x.row(i).transpose();
        }
      }
      if (d > 0.0) {
        ll -= d * (std::log(s0) + shift);
        if (derivs && p > 0) {
          Eigen::VectorXd mean = s1 / s0;
          out.grad += xsum - d * mean;
          Eigen::MatrixXd s2full = s2.selfadjointView<Eigen::Lower>();
          out.hess -= d * (s2full / s0 - mean * mean.transpose());
        }
      }
    }
    out.value = ll;
    return std::isfinite(ll);
  };

  CoxFit fit;
  fit.beta = Eigen::VectorXd::Zero(p);
  if (p > 0 && !force_zero) {
    ahdml::detail::NewtonOptions opt;
    opt.max_iter = max_iter;
    opt.grad_tol = 1e-8;
    auto res = ahdml::detail::newton_maximize(objective, fit.beta, opt);
    if (!res.converged) {
      throw NonConvergenceError("cox: Newton-Raphson did not converge in " +
                                    std::to_string(max_iter) + " iterations",
                                std::vector<double>(res.beta.data(),
                                                    res.beta.data() + res.beta.size()));
    }
    fit.beta = res.beta;
    fit.iterations = res.iterations;
  }
  ahdml::detail::Objective at;
  objective(fit.beta, p > 0, at);
  fit.loglik = at.value;
  fit.se = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
  if (p > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-at.hess);
    if (ldlt.info() == Eigen::Success) {
      Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
      for (Eigen::Index j = 0; j < p; ++j) fit.se[j] = std::sqrt(std::max(inv(j, j), 0.0));
    }
  }

  // Breslow baseline: dLambda_0(t) = d(t) / sum_{U >= t} exp(x'beta).
  Eigen::VectorXd eta = p > 0 ? Eigen::VectorXd(x * fit.beta) : Eigen::VectorXd::Zero(n);
  std::vector<double> jump_times, jumps;
  double s0 = 0.0;
  for (std::size_t g = 0; g + 1 < group_start.size(); ++g) {
    double d = 0.0;
    for (std::size_t k = group_start[g]; k < group_start[g + 1]; ++k) {
      s0 += std::exp(eta[static_cast<Eigen::Index>(order[k])]);
      d += events[order[k]] == 1 ? 1.0 : 0.0;
    }
    if (d > 0.0) {
      jump_times.push_back(times[order[group_start[g]]]);
      jumps.push_back(d / s0);
    }
  }
  std::reverse(jump_times.begin(), jump_times.end());
  std::reverse(jumps.begin(), jumps.end());
  std::partial_sum(jumps.begin(), jumps.end(), jumps.begin());
  fit.baseline = survival::StepFunction(std::move(jump_times), std::move(jumps), 0.0);
  return fit;
}

// Walk an ascending grid against a step function's knots.
void step_path(const survival::StepFunction& f, std::span<const double> grid, bool left,
               double scale, std::span<double> out) {
  auto knots = f.times();
  auto vals = f.values();
  std::size_t k = 0;
  double level = f.origin();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double t = grid[g];
    if (left) {
      while (k < knots.size() && knots[k] < t) level = vals[k++];
    } else {
      while (k < knots.size() && knots[k] <= t) level = vals[k++];
    }
    out[g] = level * scale;
  }
}

class CoxPredictor final : public SurvivalPredictor {
 public:
  struct Stratum {
    detail::SurvivalDesign design;
    Eigen::VectorXd beta;
    survival::StepFunction baseline;
  };

  // One stratum shared by both arms, or one per arm when stratified.
  explicit CoxPredictor(std::vector<Stratum> strata) : strata_(std::move(strata)) {}

  double cumulative_hazard(double t, int a, std::span<const double> w) const override {
    const auto& s = pick(a);
    return s.baseline(t) * std::exp(s.design.linear(s.beta, a, w));
  }
  double cumulative_hazard_left(double t, int a, std::span<const double> w) const override {
    const auto& s = pick(a);
    return s.baseline.left_limit(t) * std::exp(s.design.linear(s.beta, a, w));
  }
  void cumulative_hazard_path(std::span<const double> grid, int a, std::span<const double> w,
                              bool left, std::span<double> out) const override {
    const auto& s = pick(a);
    step_path(s.baseline, grid, left, std::exp(s.design.linear(s.beta, a, w)), out);
  }
  bool is_step() const override { return true; }

 private:
  const Stratum& pick(int a) const { return strata_.size() == 1 ? strata_[0] : strata_[a]; }
  std::vector<Stratum> strata_;
};

FitInfo make_info(const detail::SurvivalDesign& design, const CoxFit& fit,
                  const std::string& prefix = {}) {
  FitInfo info;
  auto names = design.names();
  for (std::size_t j = 0; j < names.size(); ++j) {
    info.names.push_back(prefix + names[j]);
    info.estimate.push_back(fit.beta[static_cast<Eigen::Index>(j)]);
    info.std_error.push_back(fit.se[static_cast<Eigen::Index>(j)]);
  }
  info.loglik = fit.loglik;
  info.iterations = fit.iterations;
  return info;
}

}  // namespace

ConditionalSurvivalModel fit_cox(const Dataset& train, Outcome outcome, bool interactions,
                                 Basis basis, double floor, CoxOptions options) {
  Dataset data = detail::outcome_view(train, outcome);
  detail::SurvivalDesign design(data, basis, interactions);
  Eigen::MatrixXd x = design.matrix(data);
  CoxFit fit = fit_cox_core(x, data.times(), data.events(), options.max_iter, options.force_zero);
  FitInfo info = make_info(design, fit);
  std::vector<CoxPredictor::Stratum> strata;
  strata.push_back({std::move(design), fit.beta, fit.baseline});
  LearnerSpec spec{interactions ? LearnerKind::cox_ph_interactions : LearnerKind::cox_ph, basis};
  return ConditionalSurvivalModel(spec, std::make_shared<CoxPredictor>(std::move(strata)), floor,
                                  std::move(info));
}

ConditionalSurvivalModel fit_cox_stratified(const Dataset& train, Outcome outcome, Basis basis,
                                            double floor) {
  Dataset data = detail::outcome_view(train, outcome);
  std::vector<CoxPredictor::Stratum> strata;
  FitInfo info;
  for (int arm = 0; arm <= 1; ++arm) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.a(i) == arm) rows.push_back(i);
    }
    Dataset part = data.subset(rows);
    if (part.empty()) {
      throw Error(ErrorKind::unfittable, "stratified cox: an arm has no training units");
    }
    detail::SurvivalDesign design(part, basis, false);
    Eigen::MatrixXd x = design.matrix(part);
    CoxFit fit = fit_cox_core(x, part.times(), part.events(), 100, false);
    FitInfo arm_info = make_info(design, fit, "arm" + std::to_string(arm) + ":");
    info.names.insert(info.names.end(), arm_info.names.begin(), arm_info.names.end());
    info.estimate.insert(info.estimate.end(), arm_info.estimate.begin(), arm_info.estimate.end());
    info.std_error.insert(info.std_error.end(), arm_info.std_error.begin(),
                          arm_info.std_error.end());
    info.loglik += fit.loglik;
    info.iterations = std::max(info.iterations, fit.iterations);
    strata.push_back({std::move(design), fit.beta, fit.baseline});
  }
  return ConditionalSurvivalModel(LearnerSpec{LearnerKind::cox_ph_stratified, basis},
                                  std::make_shared<CoxPredictor>(std::move(strata)), floor,
                                  std::move(info));
}

}  // namespace ahdml::nuisance
