#include <algorithm>
#include <cmath>
#include <limits>
#include <array>
#include <map>
#include <set>
#include <numeric>

#include "ahdml/nuisance.hpp"
#include "ahdml/rng.hpp"
#include "design.hpp"

namespace ahdml {

std::vector<int> assign_stratified_folds(std::span<const int> labels, int k, std::uint64_t seed) {
  if (k < 1) throw Error(ErrorKind::config, "number of folds must be >= 1");
  Rng rng(seed);
  std::vector<int> folds(labels.size(), 0);
  for (int label = 0; label <= 1; ++label) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) idx.push_back(i);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    // Offset the second group so fold sizes stay balanced overall.
    const std::size_t offset = label == 0 ? 0 : labels.size();
    for (std::size_t j = 0; j < idx.size(); ++j) {
      folds[idx[j]] = static_cast<int>((j + offset) % static_cast<std::size_t>(k));
    }
  }
  return folds;
}

}  // namespace ahdml

namespace ahdml::nuisance {

std::string_view to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::cox_ph: return "cox-ph";
    case LearnerKind::cox_ph_interactions: return "cox-ph-interactions";
    case LearnerKind::cox_ph_stratified: return "cox-ph-stratified";
    case LearnerKind::weibull_aft: return "weibull-aft";
    case LearnerKind::exponential_aft: return "exponential-aft";
    case LearnerKind::loglogistic_aft: return "loglogistic-aft";
    case LearnerKind::stratified_km: return "stratified-km";
    case LearnerKind::closed_form: return "closed-form";
  }
  return "unknown";
}

LearnerSpec LearnerSpec::parse(std::string_view text) {
  LearnerSpec spec;
  auto colon = text.find(':');
  std::string_view kind = text.substr(0, colon);
  if (colon != std::string_view::npos) spec.basis = parse_basis(text.substr(colon + 1));
  static constexpr LearnerKind kinds[] = {
      LearnerKind::cox_ph,          LearnerKind::cox_ph_interactions,
      LearnerKind::cox_ph_stratified, LearnerKind::weibull_aft,
      LearnerKind::exponential_aft, LearnerKind::loglogistic_aft,
      LearnerKind::stratified_km};
  for (auto k : kinds) {
    if (nuisance::to_string(k) == kind) {
      spec.kind = k;
      return spec;
    }
  }
  throw Error(ErrorKind::config, "unknown learner '" + std::string(text) + "'");
}

std::string LearnerSpec::to_string() const {
  std::string out(nuisance::to_string(kind));
  if (kind != LearnerKind::stratified_km && kind != LearnerKind::closed_form) {
    out += ':';
    out += nuisance::to_string(basis);
  }
  return out;
}

void SurvivalPredictor::cumulative_hazard_path(std::span<const double> grid, int a,
                                               std::span<const double> w, bool left,
                                               std::span<double> out) const {
  for (std::size_t g = 0; g < grid.size(); ++g) {
    out[g] = left ? cumulative_hazard_left(grid[g], a, w) : cumulative_hazard(grid[g], a, w);
  }
}

ConditionalSurvivalModel::ConditionalSurvivalModel(
    LearnerSpec spec, std::shared_ptr<const SurvivalPredictor> predictor, double floor,
    FitInfo info)
    : spec_(spec), predictor_(std::move(predictor)), floor_(floor), info_(std::move(info)) {
  if (!(floor >= 0.0 && floor < 1.0)) {
    throw Error(ErrorKind::domain, "survival floor must lie in [0, 1)");
  }
}

double ConditionalSurvivalModel::survival(double t, int a, std::span<const double> w) const {
  return std::max(std::exp(-predictor_->cumulative_hazard(t, a, w)), floor_);
}

double ConditionalSurvivalModel::survival_left(double t, int a,
                                               std::span<const double> w) const {
  return std::max(std::exp(-predictor_->cumulative_hazard_left(t, a, w)), floor_);
}

namespace {

constexpr std::size_t kMaxPatternStrata = 32;

class StratifiedNaPredictor final : public SurvivalPredictor {
 public:
  using Key = std::pair<int, std::vector<double>>;

  StratifiedNaPredictor(std::map<Key, survival::StepFunction> strata,
                        std::array<survival::StepFunction, 2> arm_level, bool by_pattern)
      : strata_(std::move(strata)), arm_level_(std::move(arm_level)), by_pattern_(by_pattern) {}

  double cumulative_hazard(double t, int a, std::span<const double> w) const override {
    return lookup(a, w)(t);
  }
  double cumulative_hazard_left(double t, int a, std::span<const double> w) const override {
    return lookup(a, w).left_limit(t);
  }
  bool is_step() const override { return true; }

 private:
  const survival::StepFunction& lookup(int a, std::span<const double> w) const {
    if (by_pattern_) {
      auto it = strata_.find(Key{a, std::vector<double>(w.begin(), w.end())});
      if (it != strata_.end()) return it->second;
    }
    return arm_level_[static_cast<std::size_t>(a)];
  }

  std::map<Key, survival::StepFunction> strata_;
  std::array<survival::StepFunction, 2> arm_level_;
  bool by_pattern_;
};

survival::StepFunction na_or_zero(const Dataset& part) {
  if (part.empty()) return survival::StepFunction({}, {}, 0.0);
  bool positive = false;
  for (double u : part.times()) positive = positive || u > 0.0;
  if (!positive) return survival::StepFunction({}, {}, 0.0);
  return survival::nelson_aalen(part);
}

}  // namespace

ConditionalSurvivalModel fit_stratified_km(const Dataset& train, Outcome outcome, double floor) {
  Dataset data = detail::outcome_view(train, outcome);
  std::size_t events = 0;
  for (int d : data.events()) events += (d == 1);
  if (events == 0) throw Error(ErrorKind::unfittable, "stratified-km: no outcome events");

  std::map<StratifiedNaPredictor::Key, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto w = data.w(i);
    groups[{data.a(i), std::vector<double>(w.begin(), w.end())}].push_back(i);
  }
  std::set<std::vector<double>> patterns;
  for (const auto& [key, rows] : groups) patterns.insert(key.second);
  const bool by_pattern = patterns.size() <= kMaxPatternStrata;

  std::map<StratifiedNaPredictor::Key, survival::StepFunction> strata;
  if (by_pattern) {
    for (const auto& [key, rows] : groups) strata.emplace(key, na_or_zero(data.subset(rows)));
  }
  std::array<survival::StepFunction, 2> arm_level;
  for (int arm = 0; arm <= 1; ++arm) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.a(i) == arm) rows.push_back(i);
    }
    arm_level[static_cast<std::size_t>(arm)] = na_or_zero(data.subset(rows));
  }
  return ConditionalSurvivalModel(
      LearnerSpec{LearnerKind::stratified_km, Basis::raw},
      std::make_shared<StratifiedNaPredictor>(std::move(strata), std::move(arm_level), by_pattern),
      floor);
}

ConditionalSurvivalModel fit_learner(const Dataset& train, Outcome outcome,
                                     const LearnerSpec& spec, double floor) {
  switch (spec.kind) {
    case LearnerKind::cox_ph: return fit_cox(train, outcome, false, spec.basis, floor);
    case LearnerKind::cox_ph_interactions: return fit_cox(train, outcome, true, spec.basis, floor);
    case LearnerKind::cox_ph_stratified: return fit_cox_stratified(train, outcome, spec.basis, floor);
    case LearnerKind::weibull_aft:
      return fit_parametric_aft(train, outcome, AftFamily::weibull, spec.basis, floor);
    case LearnerKind::exponential_aft:
      return fit_parametric_aft(train, outcome, AftFamily::exponential, spec.basis, floor);
    case LearnerKind::loglogistic_aft:
      return fit_parametric_aft(train, outcome, AftFamily::loglogistic, spec.basis, floor);
    case LearnerKind::stratified_km: return fit_stratified_km(train, outcome, floor);
    case LearnerKind::closed_form: break;
  }
  throw Error(ErrorKind::config, "unhandled learner kind");
}

std::vector<double> likelihood_bins(const Dataset& data, Outcome outcome, int bins) {
  std::vector<double> event_times;
  double max_u = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int d = outcome == Outcome::event ? data.delta(i) : 1 - data.delta(i);
    if (d == 1) event_times.push_back(data.u(i));
    max_u = std::max(max_u, data.u(i));
  }
  std::sort(event_times.begin(), event_times.end());
  std::vector<double> edges{0.0};
  const int b = std::max(1, std::min<int>(bins, static_cast<int>(event_times.size())));
  for (int j = 1; j < b; ++j) {
    const std::size_t idx = event_times.size() * static_cast<std::size_t>(j) / static_cast<std::size_t>(b);
    const double e = event_times[std::min(idx, event_times.size() - 1)];
    if (e > edges.back()) edges.push_back(e);
  }
  if (max_u > edges.back()) edges.push_back(max_u);
  if (edges.size() == 1) edges.push_back(1.0);
  return edges;
}

double heldout_nll(const ConditionalSurvivalModel& model, const Dataset& test, Outcome outcome,
                   std::span<const double> edges) {
  if (edges.size() < 2) throw Error(ErrorKind::domain, "heldout_nll: need at least one bin");
  double total = 0.0;
  std::vector<double> cum(edges.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const int d = outcome == Outcome::event ? test.delta(i) : 1 - test.delta(i);
    const double u = test.u(i);
    const int a = test.a(i);
    auto w = test.w(i);
    const double lambda_u = model.cumulative_hazard(u, a, w);
    double loss = lambda_u;
    if (d == 1) {
      // Bin containing u: (edges[j-1], edges[j]]; times past the last edge
      // use the last bin.
      auto it = std::lower_bound(edges.begin() + 1, edges.end(), u);
      std::size_t j = it == edges.end() ? edges.size() - 1 : static_cast<std::size_t>(it - edges.begin());
      const double lo = edges[j - 1], hi = edges[j];
      const double rate = (model.cumulative_hazard(hi, a, w) - model.cumulative_hazard(lo, a, w)) /
                          (hi - lo);
      loss -= std::log(std::max(rate, 1e-12));
    }
    total += loss;
  }
  return total / static_cast<double>(std::max<std::size_t>(test.size(), 1));
}

LearnerSelection select_learner(const Dataset& train, Outcome outcome,
                                std::span<const LearnerSpec> candidates, int v_folds,
                                std::uint64_t seed, double floor) {
  if (candidates.empty()) throw Error(ErrorKind::config, "select_learner: no candidates");
  if (v_folds < 2) throw Error(ErrorKind::config, "select_learner: v_folds must be >= 2");
  std::vector<double> risk(candidates.size(), 0.0);
  if (candidates.size() > 1) {
    const auto edges = likelihood_bins(train, outcome);
    auto folds = assign_stratified_folds(train.arms(), v_folds, seed);
    std::vector<Dataset> fit_parts, hold_parts;
    for (int v = 0; v < v_folds; ++v) {
      std::vector<std::size_t> in, out;
      for (std::size_t i = 0; i < train.size(); ++i) (folds[i] == v ? out : in).push_back(i);
      fit_parts.push_back(train.subset(in));
      hold_parts.push_back(train.subset(out));
    }
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      double total = 0.0;
      try {
        for (int v = 0; v < v_folds; ++v) {
          auto model = fit_learner(fit_parts[v], outcome, candidates[c], floor);
          total += heldout_nll(model, hold_parts[v], outcome, edges) *
                   static_cast<double>(hold_parts[v].size());
        }
        risk[c] = total / static_cast<double>(train.size());
        if (!std::isfinite(risk[c])) risk[c] = std::numeric_limits<double>::infinity();
      } catch (const Error&) {
        risk[c] = std::numeric_limits<double>::infinity();
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < candidates.size(); ++c) {
    if (risk[c] < risk[best]) best = c;
  }
  if (!std::isfinite(risk[best])) {
    throw Error(ErrorKind::unfittable, "select_learner: every candidate failed");
  }
  return LearnerSelection{fit_learner(train, outcome, candidates[best], floor), std::move(risk),
                          best};
}

}  // namespace ahdml::nuisance
