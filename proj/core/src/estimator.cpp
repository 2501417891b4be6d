#include "ahdml/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <tuple>

#include <boost/math/distributions/normal.hpp>

#include "ahdml/eif.hpp"
#include "ahdml/error.hpp"
#include "ahdml/rng.hpp"

namespace ahdml::est {

using nuisance::NuisanceTriple;

std::pair<double, double> wald_interval(double theta, double se, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorKind::domain, "alpha must lie in (0, 1]");
  if (!(se > 0.0) || !std::isfinite(se)) throw Error(ErrorKind::domain, "se must be positive");
  const double z = boost::math::quantile(boost::math::normal(), 1.0 - alpha / 2.0);
  return {theta - z * se, theta + z * se};
}

namespace {

bool plan_feasible(const Dataset& data, std::span<const int> folds, int k) {
  std::vector<int> arms(static_cast<std::size_t>(2 * k), 0), events(static_cast<std::size_t>(2 * k), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto cell = static_cast<std::size_t>(2 * folds[i] + data.a(i));
    arms[cell] += 1;
    events[cell] += data.delta(i);
  }
  for (std::size_t c = 0; c < arms.size(); ++c) {
    if (arms[c] == 0 || events[c] == 0) return false;
  }
  return true;
}

void require_arms(const Dataset& data, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorKind::invalid_horizon, "tau must be > 0");
  for (int arm = 0; arm <= 1; ++arm) {
    if (data.count_arm(arm) == 0) {
      throw Error(ErrorKind::positivity, "no units in arm " + std::to_string(arm));
    }
    if (data.count_events(arm, tau) == 0) {
      throw Error(ErrorKind::degenerate_estimand,
                  "no events by tau in arm " + std::to_string(arm) + "; try a smaller tau");
    }
  }
}

void extrapolation_warnings(const Dataset& data, double tau, std::vector<std::string>& warnings) {
  for (int arm = 0; arm <= 1; ++arm) {
    double last = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.a(i) == arm && data.delta(i) == 1) last = std::max(last, data.u(i));
    }
    if (tau > last) {
      std::ostringstream os;
      os << "tau=" << tau << " exceeds the last event time " << last << " in arm " << arm
         << "; curve is extrapolated flat beyond the data";
      warnings.push_back(os.str());
    }
  }
}

double quantile7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double step_integral_on(std::span<const double> grid, std::span<const double> values) {
  double total = 0.0;
  for (std::size_t g = 0; g + 1 < grid.size(); ++g) total += values[g] * (grid[g + 1] - grid[g]);
  return total;
}

}  // namespace

CrossFitPlan make_plan(const Dataset& data, int k_folds, std::uint64_t seed) {
  if (k_folds < 2) throw Error(ErrorKind::config, "k_folds must be >= 2");
  for (int arm = 0; arm <= 1; ++arm) {
    if (data.count_arm(arm) == 0) {
      throw Error(ErrorKind::positivity, "no units in arm " + std::to_string(arm));
    }
    if (data.count_events(arm, std::numeric_limits<double>::infinity()) == 0) {
      throw Error(ErrorKind::degenerate_data, "no events in arm " + std::to_string(arm));
    }
  }
  CrossFitPlan plan;
  plan.k_folds = k_folds;
  plan.seed = seed;
  for (int attempt = 0; attempt <= kMaxReseeds; ++attempt) {
    const std::uint64_t s = attempt == 0 ? seed : derive_seed(seed, {0x7265666f6c64ULL,
                                                                     static_cast<std::uint64_t>(attempt)});
    plan.folds = assign_stratified_folds(data.arms(), k_folds, s);
    if (plan_feasible(data, plan.folds, k_folds)) {
      plan.reseeds = attempt;
      return plan;
    }
  }
  throw Error(ErrorKind::fold_infeasible,
              "no feasible fold partition after " + std::to_string(kMaxReseeds) + " reseeds");
}

Dataset horizon_view(const Dataset& data, double horizon, nuisance::Outcome outcome) {
  Dataset out(data.dim());
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double u = data.u(i);
    const int status = outcome == nuisance::Outcome::event ? data.delta(i) : 1 - data.delta(i);
    if (u > horizon) {
      out.add(data.w(i), data.a(i), horizon, 0);
    } else {
      out.add(data.w(i), data.a(i), u, status);
    }
  }
  return out;
}

NuisanceTriple fit_nuisances(const Dataset& train, const LearnerConfig& config,
                             std::uint64_t seed, double horizon) {
  if (!(horizon > 0.0)) throw Error(ErrorKind::invalid_horizon, "horizon must be > 0");
  NuisanceTriple out;
  auto prop = nuisance::select_propensity(train, config.propensity_bases, config.v_folds,
                                          derive_seed(seed, {1}), config.epsilon);
  out.propensity = std::make_shared<nuisance::PropensityModel>(std::move(prop.model));
  auto event = nuisance::select_learner(horizon_view(train, horizon, nuisance::Outcome::event),
                                        nuisance::Outcome::event, config.event_learners,
                                        config.v_folds, derive_seed(seed, {2}), config.epsilon_s);
  out.event = std::make_shared<nuisance::ConditionalSurvivalModel>(std::move(event.model));
  auto censor = nuisance::select_learner(horizon_view(train, horizon, nuisance::Outcome::censoring),
                                         nuisance::Outcome::event,
                                         config.censor_learners, config.v_folds,
                                         derive_seed(seed, {3}), config.epsilon);
  out.censor = std::make_shared<nuisance::ConditionalSurvivalModel>(std::move(censor.model));
  out.epsilon = config.epsilon;
  return out;
}

AhEstimate one_step(const Dataset& data, double tau, std::span<const double> grid,
                    const std::function<const NuisanceTriple&(std::size_t)>& nuisances,
                    double alpha) {
  const std::size_t n = data.size();
  const std::size_t m = grid.size();
  if (n == 0) throw Error(ErrorKind::degenerate_data, "empty dataset");
  if (std::abs(grid.back() - tau) > 1e-12 * std::max(1.0, tau)) {
    throw Error(ErrorKind::domain, "grid must end at tau");
  }
  eif::EifEvaluator eval(grid);
  std::vector<double> sums[2] = {std::vector<double>(m, 0.0), std::vector<double>(m, 0.0)};
  std::vector<double> phi_tau[2] = {std::vector<double>(n), std::vector<double>(n)};
  std::vector<double> phi_int[2] = {std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const NuisanceTriple& nuis = nuisances(i);
    for (int arm = 0; arm <= 1; ++arm) {
      eval.evaluate(data.w(i), data.a(i), data.u(i), data.delta(i), arm, nuis);
      auto phi = eval.phi();
      auto& s = sums[arm];
      for (std::size_t g = 0; g < m; ++g) s[g] += phi[g];
      phi_tau[arm][i] = phi[m - 1];
      phi_int[arm][i] = eval.phi_integral();
    }
  }

  AhEstimate est;
  est.method = "ah-dml";
  est.tau = tau;
  est.alpha = alpha;
  est.grid.assign(grid.begin(), grid.end());
  const double nn = static_cast<double>(n);
  std::vector<double> psi[2];
  for (int arm = 0; arm <= 1; ++arm) {
    auto& raw = est.raw_curve[arm];
    raw.resize(m);
    for (std::size_t g = 0; g < m; ++g) raw[g] = sums[arm][g] / nn;
    auto proj = survival::isotonic_project(raw, survival::Direction::non_increasing);
    for (auto& v : proj) v = std::clamp(v, 0.0, 1.0);
    const double s_tau = proj[m - 1];
    const double r = step_integral_on(grid, proj);
    auto& res = est.arm[arm];
    res.summary = survival::average_hazard(1.0 - s_tau, r, tau);
    psi[arm].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      psi[arm][i] = eif::theta_eif_value(phi_tau[arm][i], phi_int[arm][i], res.summary, s_tau, r);
    }
    est.curve[arm] = std::move(proj);
  }

  auto centered_sd = [&](auto value) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += value(i);
    mean /= nn;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = value(i) - mean;
      ss += d * d;
    }
    return std::sqrt(ss / nn);
  };

  for (int arm = 0; arm <= 1; ++arm) {
    auto& res = est.arm[arm];
    const double sd = centered_sd([&](std::size_t i) { return psi[arm][i]; });
    res.se = res.summary.ah * sd / std::sqrt(nn);
    if (res.se > 0.0) {
      std::tie(res.ci_low, res.ci_high) = wald_interval(res.summary.ah, res.se, alpha);
    } else {
      res.ci_low = res.ci_high = res.summary.ah;
    }
  }

  est.theta = survival::log_ah_ratio(est.arm[1].summary.ah, est.arm[0].summary.ah);
  est.rah = std::exp(est.theta);
  est.eif_values.resize(n);
  for (std::size_t i = 0; i < n; ++i) est.eif_values[i] = psi[1][i] - psi[0][i];
  est.arm_eif[0] = std::move(psi[0]);
  est.arm_eif[1] = std::move(psi[1]);
  est.se = centered_sd([&](std::size_t i) { return est.eif_values[i]; }) / std::sqrt(nn);
  if (est.se > 0.0) {
    std::tie(est.ci_low, est.ci_high) = wald_interval(est.theta, est.se, alpha);
  } else {
    est.se_available = false;
    est.ci_low = est.ci_high = est.theta;
  }
  return est;
}

AhEstimate ah_dml(const Dataset& data, double tau, const CrossFitPlan& plan,
                  const LearnerConfig& config) {
  require_arms(data, tau);
  if (plan.folds.size() != data.size()) {
    throw Error(ErrorKind::config, "cross-fit plan does not match the dataset size");
  }
  const auto grid = eif::make_grid(data, tau, config.grid_step);

  std::vector<NuisanceTriple> triples(static_cast<std::size_t>(plan.k_folds));
  std::vector<std::string> log;
  for (int k = 0; k < plan.k_folds; ++k) {
    std::vector<std::size_t> train_rows;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (plan.folds[i] != k) train_rows.push_back(i);
    }
    Dataset train = data.subset(train_rows);
    auto& triple = triples[static_cast<std::size_t>(k)];
    triple = fit_nuisances(train, config,
                           derive_seed(plan.seed, {0x6e756973ULL, static_cast<std::uint64_t>(k)}),
                           tau);
    triple.fold_id = k;
    triple.train_fingerprint = fingerprint_indices(train_rows);
    triple.train_rows = std::move(train_rows);
    std::ostringstream os;
    os << "fold " << k << " train=" << std::hex << triple.train_fingerprint << std::dec
       << ": propensity="
       << nuisance::to_string(static_cast<const nuisance::PropensityModel&>(*triple.propensity).basis())
       << " event=" << triple.event->spec().to_string()
       << " censor=" << triple.censor->spec().to_string();
    if (static_cast<const nuisance::PropensityModel&>(*triple.propensity).ridge_fallback()) {
      os << " (propensity ridge fallback)";
    }
    log.push_back(os.str());
  }

  AhEstimate est = one_step(
      data, tau, grid,
      [&](std::size_t i) -> const NuisanceTriple& {
        return triples[static_cast<std::size_t>(plan.folds[i])];
      },
      config.alpha);
  est.nuisance_log = std::move(log);
  for (const auto& t : triples) {
    if (static_cast<const nuisance::PropensityModel&>(*t.propensity).ridge_fallback()) {
      est.warnings.push_back("propensity separation in fold " + std::to_string(t.fold_id) +
                             "; ridge-stabilized fit used");
    }
  }
  extrapolation_warnings(data, tau, est.warnings);
  return est;
}

namespace {

struct PluginResult {
  double f[2] = {0, 0};
  double r[2] = {0, 0};
  std::vector<double> curve[2];
};

PluginResult plugin(const nuisance::ConditionalSurvivalModel& model, const Dataset& data,
                    std::span<const double> grid) {
  const std::size_t m = grid.size();
  PluginResult out;
  std::vector<double> lambda(m);
  for (int arm = 0; arm <= 1; ++arm) {
    auto& c = out.curve[arm];
    c.assign(m, 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
      model.cumulative_hazard_path(grid, arm, data.w(i), false, lambda);
      for (std::size_t g = 0; g < m; ++g) c[g] += std::max(std::exp(-lambda[g]), model.floor());
    }
    for (auto& v : c) v /= static_cast<double>(data.size());
    out.f[arm] = 1.0 - c[m - 1];
    out.r[arm] = step_integral_on(grid, c);
  }
  return out;
}

using Fitter = std::function<nuisance::ConditionalSurvivalModel(const Dataset&)>;

AhEstimate plugin_with_bootstrap(const Dataset& data, double tau, const Fitter& fit,
                                 const nuisance::ConditionalSurvivalModel& model, int reps,
                                 std::uint64_t seed, double alpha, std::string method) {
  const auto grid = eif::make_grid(data, tau, model.is_step() ? 0.0 : 0.01);
  const auto point = plugin(model, data, grid);

  AhEstimate est;
  est.method = std::move(method);
  est.tau = tau;
  est.alpha = alpha;
  est.grid = grid;
  for (int arm = 0; arm <= 1; ++arm) {
    est.arm[arm].summary = survival::average_hazard(point.f[arm], point.r[arm], tau);
    est.curve[arm] = point.curve[arm];
  }
  est.theta = survival::log_ah_ratio(est.arm[1].summary.ah, est.arm[0].summary.ah);
  est.rah = std::exp(est.theta);
  extrapolation_warnings(data, tau, est.warnings);

  if (reps <= 0) {
    est.se_available = false;
    est.se = std::numeric_limits<double>::quiet_NaN();
    est.ci_low = est.ci_high = std::numeric_limits<double>::quiet_NaN();
    for (auto& a : est.arm) {
      a.se = a.ci_low = a.ci_high = std::numeric_limits<double>::quiet_NaN();
    }
    est.warnings.push_back("bootstrap disabled; standard error unavailable");
    return est;
  }

  const std::size_t n = data.size();
  std::vector<double> boot_theta, boot_eta[2];
  int failed = 0;
  std::vector<std::size_t> rows(n);
  for (int b = 0; b < reps; ++b) {
    Rng rng(derive_seed(seed, {0x626f6f74ULL, static_cast<std::uint64_t>(b)}));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    bool ok = false;
    Dataset resample;
    for (int attempt = 0; attempt <= 20 && !ok; ++attempt) {
      for (auto& r : rows) r = pick(rng);
      resample = data.subset(rows);
      ok = resample.count_arm(0) > 0 && resample.count_arm(1) > 0;
    }
    if (!ok) {
      ++failed;
      continue;
    }
    try {
      const auto refit = fit(resample);
      const auto res = plugin(refit, resample, grid);
      const double e0 = survival::average_hazard(res.f[0], res.r[0], tau).ah;
      const double e1 = survival::average_hazard(res.f[1], res.r[1], tau).ah;
      boot_eta[0].push_back(e0);
      boot_eta[1].push_back(e1);
      boot_theta.push_back(std::log(e1) - std::log(e0));
    } catch (const Error&) {
      ++failed;
    }
  }
  if (failed > 0) {
    est.warnings.push_back(std::to_string(failed) + " bootstrap resamples failed and were dropped");
  }
  if (boot_theta.size() < 2) {
    est.se_available = false;
    est.se = est.ci_low = est.ci_high = std::numeric_limits<double>::quiet_NaN();
    return est;
  }
  auto sd = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
  };
  est.se = sd(boot_theta);
  est.ci_low = quantile7(boot_theta, alpha / 2.0);
  est.ci_high = quantile7(boot_theta, 1.0 - alpha / 2.0);
  for (int arm = 0; arm <= 1; ++arm) {
    est.arm[arm].se = sd(boot_eta[arm]);
    est.arm[arm].ci_low = quantile7(boot_eta[arm], alpha / 2.0);
    est.arm[arm].ci_high = quantile7(boot_eta[arm], 1.0 - alpha / 2.0);
  }
  return est;
}

}  // namespace

AhEstimate g_computation(const Dataset& data, double tau, const LearnerConfig& config,
                         int bootstrap_reps, std::uint64_t seed) {
  require_arms(data, tau);
  auto selection = nuisance::select_learner(horizon_view(data, tau, nuisance::Outcome::event),
                                            nuisance::Outcome::event, config.event_learners,
                                            config.v_folds, derive_seed(seed, {2}), 0.0);
  const nuisance::LearnerSpec chosen = config.event_learners[selection.selected];
  Fitter fit = [&](const Dataset& d) {
    return nuisance::fit_learner(horizon_view(d, tau, nuisance::Outcome::event),
                                 nuisance::Outcome::event, chosen, 0.0);
  };
  auto est = plugin_with_bootstrap(data, tau, fit, selection.model, bootstrap_reps, seed,
                                   config.alpha, "g-comp");
  est.nuisance_log.push_back("event=" + chosen.to_string());
  return est;
}

AhEstimate cox_marginal(const Dataset& data, double tau, int bootstrap_reps, std::uint64_t seed,
                        bool force_zero, double alpha) {
  require_arms(data, tau);
  nuisance::CoxOptions options;
  options.force_zero = force_zero;
  Fitter fit = [&](const Dataset& d) {
    return nuisance::fit_cox(d, nuisance::Outcome::event, false, nuisance::Basis::raw, 0.0, options);
  };
  const auto model = fit(data);
  return plugin_with_bootstrap(data, tau, fit, model, bootstrap_reps, seed, alpha, "cox-marginal");
}

MarginalizedRate marginalized_rate(std::span<const double> cuminc, std::span<const double> rmst) {
  if (cuminc.size() != rmst.size()) throw Error(ErrorKind::domain, "length mismatch");
  MarginalizedRate out;
  double total = 0.0;
  for (std::size_t i = 0; i < cuminc.size(); ++i) {
    if (!(rmst[i] > 0.0)) {
      ++out.skipped;
      continue;
    }
    total += cuminc[i] / rmst[i];
    ++out.used;
  }
  if (out.used == 0) throw Error(ErrorKind::degenerate_estimand, "every stratum has R = 0");
  out.rate = total / static_cast<double>(out.used);
  return out;
}

std::pair<MarginalizedRate, MarginalizedRate> marginalized_conditional_rate(
    const Dataset& data, double tau, const LearnerConfig& config, std::uint64_t seed) {
  require_arms(data, tau);
  auto selection = nuisance::select_learner(horizon_view(data, tau, nuisance::Outcome::event),
                                            nuisance::Outcome::event, config.event_learners,
                                            config.v_folds, derive_seed(seed, {2}), 0.0);
  const auto& model = selection.model;
  const auto grid = eif::make_grid(data, tau, model.is_step() ? 0.0 : 0.01);
  const std::size_t m = grid.size();
  std::vector<double> lambda(m), s(m);
  MarginalizedRate rates[2];
  for (int arm = 0; arm <= 1; ++arm) {
    std::vector<double> f(data.size()), r(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      model.cumulative_hazard_path(grid, arm, data.w(i), false, lambda);
      for (std::size_t g = 0; g < m; ++g) s[g] = std::exp(-lambda[g]);
      f[i] = 1.0 - s[m - 1];
      r[i] = step_integral_on(grid, s);
    }
    rates[arm] = marginalized_rate(f, r);
  }
  return {rates[0], rates[1]};
}

}  // namespace ahdml::est
