#include "ahdml/survival.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ahdml/error.hpp"

namespace ahdml::survival {

StepFunction::StepFunction(std::vector<double> times, std::vector<double> values,
                           double origin)
    : times_(std::move(times)), values_(std::move(values)), origin_(origin) {
  if (times_.size() != values_.size()) {
    throw Error(ErrorKind::domain, "step function: times/values length mismatch");
  }
  for (std::size_t k = 0; k < times_.size(); ++k) {
    if (!std::isfinite(times_[k]) || times_[k] < 0.0) {
      throw Error(ErrorKind::domain, "step function: knots must be finite and >= 0");
    }
    if (k > 0 && !(times_[k] > times_[k - 1])) {
      throw Error(ErrorKind::domain, "step function: knots must be strictly increasing");
    }
  }
}

double StepFunction::operator()(double t) const {
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return origin_;
  return values_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

double StepFunction::left_limit(double t) const {
  auto it = std::lower_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return origin_;
  return values_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

StepSurvivalCurve::StepSurvivalCurve(std::vector<double> times, std::vector<double> values) {
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorKind::domain, "survival curve values must lie in [0, 1]");
    }
  }
  fn_ = StepFunction(std::move(times), std::move(values), 1.0);
}

bool StepSurvivalCurve::is_monotone() const {
  double prev = 1.0;
  for (double v : fn_.values()) {
    if (v > prev) return false;
    prev = v;
  }
  return true;
}

double step_integral(const StepFunction& f, double tau) {
  if (!(tau > 0.0)) {
    throw Error(ErrorKind::invalid_horizon, "horizon must be > 0");
  }
  auto times = f.times();
  auto values = f.values();
  double total = 0.0;
  double left = 0.0;
  double level = f.origin();
  for (std::size_t k = 0; k < times.size() && times[k] < tau; ++k) {
    total += level * (times[k] - left);
    left = times[k];
    level = values[k];
  }
  total += level * (tau - left);
  return total;
}

double rmst(const StepSurvivalCurve& curve, double tau) {
  if (!(tau > 0.0)) {
    throw Error(ErrorKind::invalid_horizon, "rmst: horizon must be > 0");
  }
  StepFunction f({curve.times().begin(), curve.times().end()},
                 {curve.values().begin(), curve.values().end()}, 1.0);
  return step_integral(f, tau);
}

AhSummary average_hazard(double cuminc, double rmst_value, double tau) {
  if (!(tau > 0.0)) {
    throw Error(ErrorKind::invalid_horizon, "average_hazard: horizon must be > 0");
  }
  if (!(cuminc > 0.0)) {
    throw Error(ErrorKind::degenerate_estimand,
                "average_hazard: cumulative incidence is zero by the horizon");
  }
  if (!(rmst_value > 0.0)) {
    throw Error(ErrorKind::degenerate_estimand, "average_hazard: restricted mean is zero");
  }
  return AhSummary{cuminc, rmst_value, cuminc / rmst_value, tau};
}

AhSummary average_hazard(const StepSurvivalCurve& curve, double tau) {
  if (!(tau > 0.0)) {
    throw Error(ErrorKind::invalid_horizon, "average_hazard: horizon must be > 0");
  }
  return average_hazard(1.0 - curve(tau), rmst(curve, tau), tau);
}

double log_ah_ratio(double eta1, double eta0) {
  if (!(eta1 > 0.0) || !(eta0 > 0.0)) {
    throw Error(ErrorKind::domain, "log_ah_ratio: average hazards must be positive");
  }
  return std::log(eta1) - std::log(eta0);
}

std::vector<double> isotonic_project(std::span<const double> values, Direction direction,
                                     std::span<const double> weights) {
  const std::size_t n = values.size();
  if (n == 0) return {};
  if (!weights.empty() && weights.size() != n) {
    throw Error(ErrorKind::domain, "isotonic_project: weights length mismatch");
  }
  // Work in the non-decreasing frame; flip signs for non-increasing.
  const double sign = direction == Direction::non_increasing ? -1.0 : 1.0;
  struct Block {
    double mean;
    double weight;
    std::size_t count;
  };
  std::vector<Block> blocks;
  blocks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(ErrorKind::domain, "isotonic_project: non-finite input");
    }
    double w = weights.empty() ? 1.0 : weights[i];
    blocks.push_back({sign * values[i], w, 1});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].mean > blocks.back().mean) {
      Block top = blocks.back();
      blocks.pop_back();
      Block& prev = blocks.back();
      double wt = prev.weight + top.weight;
      prev.mean = (prev.mean * prev.weight + top.mean * top.weight) / wt;
      prev.weight = wt;
      prev.count += top.count;
    }
  }
  std::vector<double> out;
  out.reserve(n);
  for (const auto& b : blocks) out.insert(out.end(), b.count, sign * b.mean);
  return out;
}

namespace {

struct RiskTable {
  std::vector<double> times;    // distinct observed times
  std::vector<double> events;   // (weighted) events at each time
  std::vector<double> at_risk;  // (weighted) number with U >= t
};

RiskTable risk_table(std::span<const double> times, std::span<const int> events,
                     std::span<const double> weights) {
  const std::size_t n = times.size();
  if (events.size() != n || (!weights.empty() && weights.size() != n)) {
    throw Error(ErrorKind::domain, "risk table: input length mismatch");
  }
  bool any_positive = false;
  for (double u : times) any_positive = any_positive || u > 0.0;
  if (n == 0 || !any_positive) {
    throw Error(ErrorKind::degenerate_data, "no unit has positive follow-up time");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return times[i] < times[j]; });
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += weights.empty() ? 1.0 : weights[i];

  RiskTable table;
  double remaining = total;
  std::size_t k = 0;
  while (k < n) {
    const double t = times[order[k]];
    double d = 0.0;
    double leaving = 0.0;
    while (k < n && times[order[k]] == t) {
      double w = weights.empty() ? 1.0 : weights[order[k]];
      d += events[order[k]] == 1 ? w : 0.0;
      leaving += w;
      ++k;
    }
    // Events and censorings at t share the risk set {U >= t}; events are
    // counted first, censored units leave afterwards.
    table.times.push_back(t);
    table.events.push_back(d);
    table.at_risk.push_back(remaining);
    remaining -= leaving;
  }
  return table;
}

}  // namespace

StepSurvivalCurve km_estimate(std::span<const double> times, std::span<const int> events,
                              std::span<const double> weights) {
  RiskTable table = risk_table(times, events, weights);
  std::vector<double> values(table.times.size());
  double s = 1.0;
  for (std::size_t k = 0; k < table.times.size(); ++k) {
    if (table.events[k] > 0.0) s *= 1.0 - table.events[k] / table.at_risk[k];
    values[k] = std::clamp(s, 0.0, 1.0);
  }
  return StepSurvivalCurve(std::move(table.times), std::move(values));
}

StepSurvivalCurve km_estimate(const Dataset& data, std::span<const double> weights) {
  return km_estimate(data.times(), data.events(), weights);
}

StepFunction nelson_aalen(std::span<const double> times, std::span<const int> events,
                          std::span<const double> weights) {
  RiskTable table = risk_table(times, events, weights);
  std::vector<double> values(table.times.size());
  double cum = 0.0;
  for (std::size_t k = 0; k < table.times.size(); ++k) {
    if (table.events[k] > 0.0) cum += table.events[k] / table.at_risk[k];
    values[k] = cum;
  }
  return StepFunction(std::move(table.times), std::move(values), 0.0);
}

StepFunction nelson_aalen(const Dataset& data) {
  return nelson_aalen(data.times(), data.events());
}

StepSurvivalCurve sample_curve(const std::function<double(double)>& surv, double tau,
                               double step) {
  if (!(tau > 0.0)) throw Error(ErrorKind::invalid_horizon, "sample_curve: tau must be > 0");
  if (!(step > 0.0)) throw Error(ErrorKind::domain, "sample_curve: step must be > 0");
  const auto count = static_cast<std::size_t>(std::ceil(tau / step - 1e-9));
  std::vector<double> times;
  std::vector<double> values;
  times.reserve(count + 1);
  values.reserve(count + 1);
  for (std::size_t k = 0; k <= count; ++k) {
    double t = std::min(static_cast<double>(k) * step, tau);
    if (!times.empty() && t <= times.back()) continue;
    times.push_back(t);
    values.push_back(std::clamp(surv(t), 0.0, 1.0));
  }
  return StepSurvivalCurve(std::move(times), std::move(values));
}

}  // namespace ahdml::survival
