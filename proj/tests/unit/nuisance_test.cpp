#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ahdml/error.hpp"
#include "ahdml/nuisance.hpp"
#include "ahdml/simgen.hpp"
#include "ahdml/survival.hpp"

namespace ahdml::nuisance {
namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

std::size_t index_of(const FitInfo& info, const std::string& name) {
  auto it = std::find(info.names.begin(), info.names.end(), name);
  EXPECT_NE(it, info.names.end()) << name;
  return static_cast<std::size_t>(it - info.names.begin());
}

// Exponential event and censoring times, no covariates beyond noise.
Dataset exponential_data(std::size_t n, double rate, double censor_rate, std::uint64_t seed,
                         std::size_t dim = 1) {
  Rng rng(seed);
  std::exponential_distribution<double> t(rate), c(censor_rate);
  std::normal_distribution<double> z;
  std::bernoulli_distribution arm(0.5);
  Dataset d(dim);
  std::vector<double> w(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : w) v = z(rng);
    const double ti = t(rng), ci = c(rng);
    d.add(w, arm(rng) ? 1 : 0, std::min(ti, ci), ti <= ci ? 1 : 0);
  }
  return d;
}

TEST(Propensity, TruncationRule) {
  EXPECT_EQ(truncate_propensity(0.001, 0.01), 0.01);
  EXPECT_EQ(truncate_propensity(0.999, 0.01), 0.99);
  EXPECT_EQ(truncate_propensity(0.4, 0.01), 0.4);
}

TEST(Propensity, BalancedIndependentArm) {
  const Dataset d = exponential_data(1000, 0.1, 0.05, 21, 2);
  const auto m = fit_propensity(d, Basis::raw, 0.01);
  double mean = 0.0, frac = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    mean += m.prob_treated(d.w(i));
    frac += d.a(i);
  }
  // The intercept score equation makes the fitted mean equal the arm share.
  EXPECT_NEAR(mean / d.size(), frac / d.size(), 1e-8);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(m.prob_treated(d.w(i)), frac / d.size(), 0.1);
}

TEST(Propensity, SlopeRecovery) {
  Rng rng(22);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  Dataset d(1);
  for (int i = 0; i < 5000; ++i) {
    const double w = z(rng);
    const int a = u(rng) < 1.0 / (1.0 + std::exp(-w)) ? 1 : 0;
    d.add(std::vector<double>{w}, a, 1.0, 1);
  }
  const auto m = fit_propensity(d, Basis::raw, 1e-6);
  const double slope = logit(m.prob_treated(std::vector<double>{1.0})) -
                       logit(m.prob_treated(std::vector<double>{0.0}));
  EXPECT_NEAR(slope, 1.0, 0.1);
}

TEST(Propensity, SingleArmIsUnfittable) {
  Dataset d(1);
  for (int i = 0; i < 10; ++i) d.add(std::vector<double>{double(i)}, 1, 1.0, 1);
  try {
    fit_propensity(d, Basis::raw);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unfittable);
  }
}

TEST(Propensity, TruncatedPredictionsRespectEpsilon) {
  Dataset d(1);
  for (int i = 0; i < 200; ++i) d.add(std::vector<double>{i / 10.0}, i >= 100 ? 1 : 0, 1.0, 1);
  const auto m = fit_propensity(d, Basis::raw, 0.025);
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> w{i / 10.0};
    EXPECT_GE(m.prob(1, w), 0.025);
    EXPECT_GE(m.prob(0, w), 0.025);
  }
}

TEST(Cox, NullCovariateWithinThreeSe) {
  const Dataset d = exponential_data(2000, 0.1, 0.05, 31, 2);
  const auto m = fit_cox(d, Outcome::event, false);
  const auto& info = m.info();
  for (std::size_t j = 0; j < info.estimate.size(); ++j) {
    EXPECT_LE(std::abs(info.estimate[j]), 3.0 * info.std_error[j]) << info.names[j];
  }
}

TEST(Cox, WeibullPhArmEffect) {
  const auto spec = sim::DgmSpec::preset(sim::DgmKind::ph_complex);
  const Dataset d = sim::sample(spec, 4000, 32);
  const auto m = fit_cox(d, Outcome::event, false);
  const auto& info = m.info();
  const std::size_t k = index_of(info, "a");
  EXPECT_LE(std::abs(info.estimate[k] - (spec.s1 - spec.s0)), 3.0 * info.std_error[k]);
}

TEST(Cox, ThreeUnitClosedForm) {
  // Times 1, 2, 3 with events at 1 and 2 and x = (1, 0, 1). The partial
  // likelihood r / (2r + 1) * 1 / (1 + r), r = exp(beta), peaks at r^2 = 1/2.
  Dataset d(1);
  d.add(std::vector<double>{1.0}, 0, 1.0, 1);
  d.add(std::vector<double>{0.0}, 0, 2.0, 1);
  d.add(std::vector<double>{1.0}, 0, 3.0, 0);
  const auto m = fit_cox(d, Outcome::event, false, Basis::raw, 0.0);
  const std::vector<double> x0{0.0}, x1{1.0};
  const double r = std::sqrt(0.5);
  for (double t : {1.0, 2.5}) {
    EXPECT_NEAR(m.cumulative_hazard(t, 0, x1) / m.cumulative_hazard(t, 0, x0), r, 1e-7);
  }
  EXPECT_NEAR(m.cumulative_hazard(1.0, 0, x0), 1.0 / (2.0 * r + 1.0), 1e-7);
  EXPECT_NEAR(m.cumulative_hazard(2.0, 0, x0), 1.0 / (2.0 * r + 1.0) + 1.0 / (1.0 + r), 1e-7);
  EXPECT_NEAR(m.predictor().cumulative_hazard_left(2.0, 0, x0), 1.0 / (2.0 * r + 1.0), 1e-7);
}

TEST(Cox, ForcedZeroReproducesNelsonAalen) {
  const Dataset d = exponential_data(300, 0.1, 0.05, 33, 2);
  const auto m = fit_cox(d, Outcome::event, false, Basis::raw, 0.0, CoxOptions{100, true});
  const auto na = survival::nelson_aalen(d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_NEAR(m.cumulative_hazard(d.u(i), d.a(i), d.w(i)), na(d.u(i)), 1e-12);
  }
}

TEST(Cox, CensoringOutcomeUsesFlippedIndicator) {
  const Dataset d = exponential_data(300, 0.1, 0.05, 34, 1);
  const auto m = fit_cox(d, Outcome::censoring, false, Basis::raw, 0.0, CoxOptions{100, true});
  const auto na = survival::nelson_aalen(d.with_flipped_events());
  for (double t : {1.0, 5.0, 10.0}) EXPECT_NEAR(m.cumulative_hazard(t, 0, d.w(0)), na(t), 1e-12);
}

TEST(Aft, ExponentialMatchesClosedFormMle) {
  const Dataset d = exponential_data(5000, 0.1, 0.05, 41, 0);
  const auto m = fit_parametric_aft(d, Outcome::event, AftFamily::exponential, Basis::raw, 0.0);
  double events = 0.0, exposure = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    events += d.delta(i);
    exposure += d.u(i);
  }
  const std::vector<double> none;
  // The arm column is present, so evaluate the pooled rate through arm 0 and 1
  // separately and compare each to its closed form.
  for (int arm = 0; arm <= 1; ++arm) {
    double e = 0.0, x = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.a(i) != arm) continue;
      e += d.delta(i);
      x += d.u(i);
    }
    const double rate = m.cumulative_hazard(1.0, arm, none);
    EXPECT_NEAR(rate, e / x, 1e-6 * e / x);
    EXPECT_LE(std::abs(rate - 0.1), 3.0 * rate / std::sqrt(e));
  }
  EXPECT_GT(events, 0.0);
  EXPECT_GT(exposure, 0.0);
}

TEST(Aft, WeibullShapeOnExponentialData) {
  const Dataset d = exponential_data(5000, 0.1, 0.05, 42, 1);
  const auto m = fit_parametric_aft(d, Outcome::event, AftFamily::weibull);
  const auto& info = m.info();
  const std::size_t k = index_of(info, "log_shape");
  EXPECT_LE(std::abs(info.estimate[k]), 3.0 * info.std_error[k]);
}

TEST(Aft, LoglogisticRecovery) {
  Rng rng(43);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::exponential_distribution<double> cens(0.02);
  const double mu = std::log(8.0), k = 2.0;
  Dataset d(0);
  for (int i = 0; i < 4000; ++i) {
    const double p = u(rng);
    const double t = std::exp(mu) * std::pow(p / (1.0 - p), 1.0 / k);
    const double c = cens(rng);
    d.add(std::vector<double>{}, 0, std::min(t, c), t <= c ? 1 : 0);
  }
  const auto m = fit_parametric_aft(d, Outcome::event, AftFamily::loglogistic);
  const auto& info = m.info();
  const std::size_t ic = index_of(info, "intercept"), is = index_of(info, "log_shape");
  EXPECT_LE(std::abs(info.estimate[ic] - mu), 3.0 * info.std_error[ic]);
  EXPECT_LE(std::abs(info.estimate[is] - std::log(k)), 3.0 * info.std_error[is]);
}

TEST(Learners, SpecRoundTrip) {
  for (const char* text : {"cox-ph:raw", "weibull-aft:poly2", "cox-ph-interactions:tensor",
                           "stratified-km"}) {
    EXPECT_EQ(LearnerSpec::parse(text).to_string(), text);
  }
  EXPECT_THROW(LearnerSpec::parse("random-forest"), Error);
}

TEST(Learners, SurvivalMonotoneAndFloored) {
  const auto spec = sim::DgmSpec::preset(sim::DgmKind::non_ph);
  const Dataset d = sim::sample(spec, 600, 44);
  const std::vector<LearnerSpec> all{
      {LearnerKind::cox_ph, Basis::raw},          {LearnerKind::cox_ph_interactions, Basis::raw},
      {LearnerKind::cox_ph_stratified, Basis::poly2}, {LearnerKind::weibull_aft, Basis::poly2},
      {LearnerKind::exponential_aft, Basis::raw}, {LearnerKind::loglogistic_aft, Basis::raw},
      {LearnerKind::stratified_km, Basis::raw}};
  for (const auto& ls : all) {
    for (Outcome o : {Outcome::event, Outcome::censoring}) {
      const auto m = fit_learner(d, o, ls, 0.005);
      for (std::size_t i = 0; i < 40; ++i) {
        for (int a = 0; a <= 1; ++a) {
          EXPECT_EQ(m.survival(0.0, a, d.w(i)), 1.0) << ls.to_string();
          double prev = 1.0;
          for (double t = 0.25; t <= 24.0; t += 0.25) {
            const double s = m.survival(t, a, d.w(i));
            EXPECT_LE(s, prev + 1e-15) << ls.to_string();
            EXPECT_GE(s, 0.005);
            prev = s;
          }
        }
      }
    }
  }
}

TEST(Learners, ClosedFormIsNotFittable) {
  const Dataset d = exponential_data(50, 0.1, 0.05, 45);
  EXPECT_THROW(fit_learner(d, Outcome::event, LearnerSpec{LearnerKind::closed_form, Basis::raw}),
               Error);
}

TEST(Selection, SingletonIsSelected) {
  const Dataset d = exponential_data(300, 0.1, 0.05, 51);
  const std::vector<LearnerSpec> c{{LearnerKind::exponential_aft, Basis::raw}};
  const auto s = select_learner(d, Outcome::event, c, 5, 1);
  EXPECT_EQ(s.selected, 0u);
  EXPECT_EQ(s.model.spec(), c[0]);
}

TEST(Selection, TieGoesToFirstListed) {
  const Dataset d = exponential_data(300, 0.1, 0.05, 52);
  const std::vector<LearnerSpec> c{{LearnerKind::weibull_aft, Basis::raw},
                                   {LearnerKind::weibull_aft, Basis::raw}};
  const auto s = select_learner(d, Outcome::event, c, 5, 2);
  ASSERT_EQ(s.cv_risk.size(), 2u);
  EXPECT_EQ(s.cv_risk[0], s.cv_risk[1]);
  EXPECT_EQ(s.selected, 0u);
}

TEST(Selection, PrefersExponentialOnExponentialData) {
  const std::vector<LearnerSpec> c{{LearnerKind::exponential_aft, Basis::raw},
                                   {LearnerKind::loglogistic_aft, Basis::raw}};
  int wins = 0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    const Dataset d = exponential_data(1000, 0.1, 0.05, 1000 + r);
    wins += select_learner(d, Outcome::event, c, 5, r).selected == 0 ? 1 : 0;
  }
  EXPECT_GE(wins, static_cast<int>(0.9 * reps));
}

TEST(Selection, AllCandidatesFailing) {
  Dataset d(1);
  for (int i = 0; i < 20; ++i) d.add(std::vector<double>{double(i)}, i % 2, 1.0 + i, 0);
  const std::vector<LearnerSpec> c{{LearnerKind::exponential_aft, Basis::raw},
                                   {LearnerKind::stratified_km, Basis::raw}};
  try {
    select_learner(d, Outcome::event, c, 5, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unfittable);
  }
}

TEST(ConditionalModel, RejectsInvalidFloor) {
  auto base = fit_learner(exponential_data(50, 0.1, 0.05, 46), Outcome::event,
                          LearnerSpec{LearnerKind::exponential_aft, Basis::raw});
  EXPECT_THROW(ConditionalSurvivalModel(base.spec(),
                                        std::shared_ptr<const SurvivalPredictor>(
                                            std::shared_ptr<const SurvivalPredictor>{},
                                            &base.predictor()),
                                        1.0),
               Error);
}

}  // namespace
}  // namespace ahdml::nuisance
