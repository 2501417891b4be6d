#include "ahdml/simgen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <thread>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "ahdml/error.hpp"

namespace ahdml::sim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double expit(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double draw_beta(Rng& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

bool is_warp(DgmKind kind) { return kind == DgmKind::non_ph || kind == DgmKind::cross_a; }

double eta_event(const DgmSpec& s, int a, std::span<const double> w) {
  const double x1 = (w[0] - 50.0) / 10.0, x2 = w[1] - 30.0, x3 = w[2] - 5.0;
  return s.s0 + (s.s1 - s.s0) * a + 0.2 * x1 - 0.15 * a * x1 + 0.2 * x3 - 0.15 * a * x3 +
         0.1 * x3 * x1 + 0.05 * x2 - 0.025 * a * x2;
}

double eta_censor_complex(const DgmSpec& s, int a, std::span<const double> w) {
  const double x1 = (w[0] - 50.0) / 10.0, x2 = w[1] - 30.0, x3 = w[2] - 5.0;
  return s.g0 + s.g_arm * a + 0.2 * x1 - 0.15 * a * x1 + 0.2 * x3 - 0.15 * a * x3 +
         0.1 * x3 * x1 + 0.05 * x2 - 0.025 * a * x2;
}

double eta_censor_linear(const DgmSpec& s, int a, std::span<const double> w) {
  return s.c0 + s.c_arm * a + s.c1 * (w[0] - 50.0) / 10.0 + s.c2 * (w[1] - 30.0) / 10.0 +
         s.c3 * (w[2] - 5.0);
}

double warp_censor_rate(const DgmSpec& s, int a, std::span<const double> w) {
  const double z = (w[2] - 5.0) / 4.0;
  return std::exp(s.warp_censor_beta1 + 0.3 * a + softplus((30.0 - w[0]) / 3.0) + z * z);
}

// Integral of exp(-lambda (y1 + slope (t - t1))) over [t1, t2].
double exp_linear_integral(double lambda, double y1, double slope, double t1, double t2) {
  if (t2 <= t1) return 0.0;
  const double k = lambda * slope;
  const double len = t2 - t1;
  const double base = std::exp(-lambda * y1);
  if (k * len < 1e-12) return base * len;
  return base * (-std::expm1(-k * len)) / k;
}

}  // namespace

std::string_view to_string(DgmKind kind) {
  switch (kind) {
    case DgmKind::ph: return "ph";
    case DgmKind::ph_complex: return "ph-complex";
    case DgmKind::non_ph: return "non-ph";
    case DgmKind::cross_a: return "cross-a";
  }
  return "unknown";
}

DgmKind parse_dgm_kind(std::string_view text) {
  for (auto k : {DgmKind::ph, DgmKind::ph_complex, DgmKind::non_ph, DgmKind::cross_a}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorKind::config, "unknown DGM '" + std::string(text) + "'");
}

DgmSpec DgmSpec::preset(DgmKind kind) {
  DgmSpec spec;
  spec.kind = kind;
  return spec;
}

DgmSpec DgmSpec::named(std::string_view name) {
  if (name == "null") {
    DgmSpec spec = preset(DgmKind::non_ph);
    spec.gamma_override = 1.0;
    return spec;
  }
  return preset(parse_dgm_kind(name));
}

std::string DgmSpec::name() const {
  if (kind == DgmKind::non_ph && gamma_override && *gamma_override == 1.0) return "null";
  return std::string(to_string(kind));
}

std::uint64_t DgmSpec::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  mix(static_cast<std::uint64_t>(kind));
  for (double v : {alpha, s0, s1, g0, g_arm, c0, c_arm, c1, c2, c3, beta0, beta_gamma, ramp,
                   cross_eps, warp_censor_beta1, admin_cap}) {
    mix(std::bit_cast<std::uint64_t>(v));
  }
  mix(gamma_override ? std::bit_cast<std::uint64_t>(*gamma_override) : 0x7ff8dead0000beefULL);
  return h;
}

void sample_covariate(Rng& rng, double* w) {
  const double w1 = 20.0 + 60.0 * draw_beta(rng, 1.1, 1.1);
  const double w3 = 10.0 * draw_beta(rng, 1.5 + std::abs(w1 - 50.0) / 20.0, 3.0);
  const double w2 = 18.0 + 32.0 * draw_beta(rng, 1.5 + w1 / 20.0, 6.0);
  w[0] = w1;
  w[1] = w2;
  w[2] = w3;
}

Dataset sample_covariates(std::size_t n, Rng& rng) {
  if (n < 1) throw Error(ErrorKind::domain, "sample_covariates: n must be >= 1");
  Dataset out(3);
  out.reserve(n);
  double w[3];
  for (std::size_t i = 0; i < n; ++i) {
    sample_covariate(rng, w);
    out.add(w, 0, 0.0, 0);
  }
  return out;
}

double propensity_true(std::span<const double> w) {
  return expit(-1.0 + std::log(1.0 + std::exp(-20.0 + w[0] / 10.0) + std::exp(-3.0 + w[2] / 2.0)));
}

WarpParams warp_params(const DgmSpec& spec, std::span<const double> w) {
  WarpParams p;
  const double s1 = softplus((w[0] - 55.0) / 5.0);
  const double s2 = softplus((w[1] - 30.0) / 3.0);
  p.gamma = spec.gamma_override ? *spec.gamma_override : expit(spec.beta_gamma + 0.5 * s1 + 0.25 * s2);
  p.iota = std::exp(2.0 - 0.5 * s1 - 0.1 * s2);
  p.ramp = spec.ramp;
  p.eps = spec.cross_eps;
  p.crossing = spec.kind == DgmKind::cross_a;
  return p;
}

double control_rate(const DgmSpec& spec, std::span<const double> w) {
  return std::exp(spec.beta0 - std::abs(w[0] - 60.0) / 10.0 - 2.0 * std::log(w[1]) + w[2] / 2.0);
}

double warp_derivative(const WarpParams& p, double t) {
  const double r = p.ramp, b = p.ramp + p.iota, g = p.gamma;
  if (p.crossing) {
    if (t <= r) return 1.0 - g;
    if (t <= b) return g;
    return 1.0 + p.eps * (1.0 - g);
  }
  if (t <= r) return 1.0 - t / r * (1.0 - g);
  if (t <= b) return g;
  return 1.0 - (1.0 - g) * b * b / (t * t);
}

double warp(const WarpParams& p, double t) {
  const double r = p.ramp, b = p.ramp + p.iota, g = p.gamma;
  if (p.crossing) {
    const double phi_r = (1.0 - g) * r;
    const double phi_b = phi_r + g * p.iota;
    if (t <= r) return (1.0 - g) * t;
    if (t <= b) return phi_r + g * (t - r);
    return phi_b + (1.0 + p.eps * (1.0 - g)) * (t - b);
  }
  const double phi_r = r * (1.0 + g) / 2.0;
  const double phi_b = phi_r + g * p.iota;
  if (t <= r) return t - (1.0 - g) * t * t / (2.0 * r);
  if (t <= b) return phi_r + g * (t - r);
  return phi_b + (t - b) - (1.0 - g) * b * (1.0 - b / t);
}

double warp_inverse(const WarpParams& p, double y) {
  if (y <= 0.0) return 0.0;
  const double r = p.ramp, b = p.ramp + p.iota, g = p.gamma;
  if (p.crossing) {
    const double phi_r = (1.0 - g) * r;
    const double phi_b = phi_r + g * p.iota;
    if (y <= phi_r) return y / (1.0 - g);
    if (y <= phi_b) return r + (y - phi_r) / g;
    return b + (y - phi_b) / (1.0 + p.eps * (1.0 - g));
  }
  const double phi_r = r * (1.0 + g) / 2.0;
  const double phi_b = phi_r + g * p.iota;
  if (y <= phi_r) return 2.0 * y / (1.0 + std::sqrt(std::max(0.0, 1.0 - 2.0 * (1.0 - g) * y / r)));
  if (y <= phi_b) return r + (y - phi_r) / g;
  const double big_b = b * (2.0 - g) + y - phi_b;
  return 0.5 * (big_b + std::sqrt(std::max(0.0, big_b * big_b - 4.0 * (1.0 - g) * b * b)));
}

double event_cumhaz(const DgmSpec& spec, double t, int a, std::span<const double> w) {
  if (t <= 0.0) return 0.0;
  if (!is_warp(spec.kind)) {
    return std::pow(t, spec.alpha) / spec.alpha * std::exp(eta_event(spec, a, w));
  }
  const double lambda = control_rate(spec, w);
  if (a == 0) return lambda * t;
  return lambda * warp(warp_params(spec, w), t);
}

double censor_cumhaz(const DgmSpec& spec, double t, int a, std::span<const double> w) {
  if (t <= 0.0) return 0.0;
  if (t > spec.admin_cap) return kInf;
  switch (spec.kind) {
    case DgmKind::ph: return t * std::exp(eta_censor_linear(spec, a, w));
    case DgmKind::ph_complex:
      return std::pow(t, spec.alpha) / spec.alpha * std::exp(eta_censor_complex(spec, a, w));
    case DgmKind::non_ph:
    case DgmKind::cross_a: return t * warp_censor_rate(spec, a, w);
  }
  return 0.0;
}

double event_quantile(const DgmSpec& spec, double target, int a, std::span<const double> w) {
  if (target <= 0.0) return 0.0;
  if (!is_warp(spec.kind)) {
    return std::pow(spec.alpha * target * std::exp(-eta_event(spec, a, w)), 1.0 / spec.alpha);
  }
  const double lambda = control_rate(spec, w);
  if (a == 0) return target / lambda;
  return warp_inverse(warp_params(spec, w), target / lambda);
}

namespace {

double censor_draw(const DgmSpec& spec, double e, int a, std::span<const double> w) {
  switch (spec.kind) {
    case DgmKind::ph: return e / std::exp(eta_censor_linear(spec, a, w));
    case DgmKind::ph_complex:
      return std::pow(spec.alpha * e * std::exp(-eta_censor_complex(spec, a, w)), 1.0 / spec.alpha);
    case DgmKind::non_ph:
    case DgmKind::cross_a: return e / warp_censor_rate(spec, a, w);
  }
  return kInf;
}

}  // namespace

Dataset sample(const DgmSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::domain, "sample: n must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  Dataset out(3);
  out.reserve(n);
  double w[3];
  for (std::size_t i = 0; i < n; ++i) {
    sample_covariate(rng, w);
    const int a = unif(rng) < propensity_true(w) ? 1 : 0;
    const double t = event_quantile(spec, expo(rng), a, w);
    const double c = std::min(censor_draw(spec, expo(rng), a, w), spec.admin_cap);
    if (t <= c) {
      out.add(w, a, t, 1);
    } else {
      out.add(w, a, c, 0);
    }
  }
  return out;
}

Counterfactuals sample_counterfactual(const DgmSpec& spec, int arm, std::size_t n,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::exponential_distribution<double> expo(1.0);
  Counterfactuals out{Dataset(3), {}};
  out.covariates.reserve(n);
  out.times.reserve(n);
  double w[3];
  for (std::size_t i = 0; i < n; ++i) {
    sample_covariate(rng, w);
    const double t = event_quantile(spec, expo(rng), arm, w);
    out.covariates.add(w, arm, t, 1);
    out.times.push_back(t);
  }
  return out;
}

ConditionalAh conditional_ah(const DgmSpec& spec, double tau, int a, std::span<const double> w) {
  if (!(tau > 0.0)) throw Error(ErrorKind::invalid_horizon, "conditional_ah: tau must be > 0");
  ConditionalAh out;
  if (!is_warp(spec.kind)) {
    const double alpha = spec.alpha;
    const double c = std::exp(eta_event(spec, a, w)) / alpha;
    const double x = c * std::pow(tau, alpha);
    out.cuminc = -std::expm1(-x);
    out.rmst = std::pow(c, -1.0 / alpha) / alpha * boost::math::tgamma_lower(1.0 / alpha, x);
    return out;
  }
  const double lambda = control_rate(spec, w);
  if (a == 0) {
    out.cuminc = -std::expm1(-lambda * tau);
    out.rmst = exp_linear_integral(lambda, 0.0, 1.0, 0.0, tau);
    return out;
  }
  const WarpParams p = warp_params(spec, w);
  const double r = p.ramp, b = p.ramp + p.iota;
  out.cuminc = -std::expm1(-lambda * warp(p, tau));
  auto surv = [&](double t) { return std::exp(-lambda * warp(p, t)); };
  using GL = boost::math::quadrature::gauss<double, 30>;
  double total = 0.0;
  const double t1 = std::min(r, tau), t2 = std::min(b, tau);
  if (p.crossing) {
    total += exp_linear_integral(lambda, 0.0, 1.0 - p.gamma, 0.0, t1);
    total += exp_linear_integral(lambda, warp(p, r), p.gamma, r, t2);
    total += exp_linear_integral(lambda, warp(p, b), 1.0 + p.eps * (1.0 - p.gamma), b, tau);
  } else {
    if (t1 > 0.0) total += GL::integrate(surv, 0.0, t1);
    total += exp_linear_integral(lambda, warp(p, r), p.gamma, r, t2);
    if (tau > b) total += GL::integrate(surv, b, tau);
  }
  out.rmst = total;
  return out;
}

TruthRecord truth_theta(const DgmSpec& spec, double tau, std::uint64_t n_oracle,
                        std::uint64_t seed, int workers) {
  if (!(tau > 0.0)) throw Error(ErrorKind::invalid_horizon, "truth_theta: tau must be > 0");
  if (n_oracle < static_cast<std::uint64_t>(kTruthBatches)) {
    throw Error(ErrorKind::domain, "truth_theta: n_oracle must be >= 20");
  }
  struct Batch {
    double f0 = 0, f1 = 0, r0 = 0, r1 = 0;
    std::uint64_t n = 0;
  };
  std::vector<Batch> batches(kTruthBatches);
  auto run_batch = [&](int b) {
    const std::uint64_t lo = n_oracle * static_cast<std::uint64_t>(b) / kTruthBatches;
    const std::uint64_t hi = n_oracle * static_cast<std::uint64_t>(b + 1) / kTruthBatches;
    Rng rng(derive_seed(seed, {0x7275746855ULL, static_cast<std::uint64_t>(b)}));
    Batch acc;
    double w[3];
    for (std::uint64_t i = lo; i < hi; ++i) {
      sample_covariate(rng, w);
      const auto c0 = conditional_ah(spec, tau, 0, w);
      const auto c1 = conditional_ah(spec, tau, 1, w);
      acc.f0 += c0.cuminc;
      acc.r0 += c0.rmst;
      acc.f1 += c1.cuminc;
      acc.r1 += c1.rmst;
    }
    acc.n = hi - lo;
    batches[static_cast<std::size_t>(b)] = acc;
  };
  const int nthreads = std::clamp(workers, 1, kTruthBatches);
  if (nthreads == 1) {
    for (int b = 0; b < kTruthBatches; ++b) run_batch(b);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) {
      pool.emplace_back([&, t] {
        for (int b = t; b < kTruthBatches; b += nthreads) run_batch(b);
      });
    }
    for (auto& th : pool) th.join();
  }

  Batch total;
  std::vector<double> be0, be1, bth;
  for (const auto& b : batches) {
    total.f0 += b.f0;
    total.f1 += b.f1;
    total.r0 += b.r0;
    total.r1 += b.r1;
    const double e0 = b.f0 / b.r0, e1 = b.f1 / b.r1;
    be0.push_back(e0);
    be1.push_back(e1);
    bth.push_back(std::log(e1) - std::log(e0));
  }
  auto batch_se = [](const std::vector<double>& v) {
    const double k = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= k;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / (k - 1.0) / k);
  };
  const double nn = static_cast<double>(n_oracle);
  TruthRecord rec;
  rec.tau = tau;
  rec.f0 = total.f0 / nn;
  rec.f1 = total.f1 / nn;
  rec.r0 = total.r0 / nn;
  rec.r1 = total.r1 / nn;
  rec.eta0 = rec.f0 / rec.r0;
  rec.eta1 = rec.f1 / rec.r1;
  rec.theta = std::log(rec.eta1) - std::log(rec.eta0);
  rec.mc_se_eta0 = batch_se(be0);
  rec.mc_se_eta1 = batch_se(be1);
  rec.mc_se_theta = batch_se(bth);
  rec.n_oracle = n_oracle;
  rec.seed = seed;
  return rec;
}

survival::StepSurvivalCurve truth_curve(const DgmSpec& spec, int arm, std::span<const double> grid,
                                        std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> acc(grid.size(), 0.0);
  double w[3];
  for (std::size_t i = 0; i < n; ++i) {
    sample_covariate(rng, w);
    for (std::size_t g = 0; g < grid.size(); ++g) acc[g] += std::exp(-event_cumhaz(spec, grid[g], arm, w));
  }
  for (auto& v : acc) v /= static_cast<double>(n);
  return survival::StepSurvivalCurve(std::vector<double>(grid.begin(), grid.end()), std::move(acc));
}

namespace {

class OracleEvent final : public nuisance::SurvivalPredictor {
 public:
  explicit OracleEvent(DgmSpec spec) : spec_(spec) {}
  double cumulative_hazard(double t, int a, std::span<const double> w) const override {
    return event_cumhaz(spec_, t, a, w);
  }

 private:
  DgmSpec spec_;
};

class OracleCensor final : public nuisance::SurvivalPredictor {
 public:
  explicit OracleCensor(DgmSpec spec) : spec_(spec) {}
  double cumulative_hazard(double t, int a, std::span<const double> w) const override {
    if (t >= spec_.admin_cap) return kInf;
    return censor_cumhaz(spec_, t, a, w);
  }
  double cumulative_hazard_left(double t, int a, std::span<const double> w) const override {
    return censor_cumhaz(spec_, t, a, w);
  }

 private:
  DgmSpec spec_;
};

class OraclePropensity final : public nuisance::PropensityPredictor {
 public:
  double prob_treated(std::span<const double> w) const override { return propensity_true(w); }
};

class ScaledHazard final : public nuisance::SurvivalPredictor {
 public:
  ScaledHazard(std::shared_ptr<const nuisance::SurvivalPredictor> base, double factor)
      : base_(std::move(base)), factor_(factor) {}
  double cumulative_hazard(double t, int a, std::span<const double> w) const override {
    return factor_ * base_->cumulative_hazard(t, a, w);
  }
  double cumulative_hazard_left(double t, int a, std::span<const double> w) const override {
    return factor_ * base_->cumulative_hazard_left(t, a, w);
  }
  bool is_step() const override { return base_->is_step(); }

 private:
  std::shared_ptr<const nuisance::SurvivalPredictor> base_;
  double factor_;
};

class ScaledPropensity final : public nuisance::PropensityPredictor {
 public:
  ScaledPropensity(std::shared_ptr<const nuisance::PropensityPredictor> base, double factor)
      : base_(std::move(base)), factor_(factor) {}
  double prob_treated(std::span<const double> w) const override {
    return std::clamp(factor_ * base_->prob_treated(w), 1e-6, 1.0 - 1e-6);
  }

 private:
  std::shared_ptr<const nuisance::PropensityPredictor> base_;
  double factor_;
};

}  // namespace

nuisance::NuisanceTriple oracle_nuisances(const DgmSpec& spec, double epsilon, double event_floor,
                                          double censor_floor) {
  using nuisance::ConditionalSurvivalModel;
  using nuisance::LearnerKind;
  using nuisance::LearnerSpec;
  nuisance::NuisanceTriple out;
  out.propensity = std::make_shared<OraclePropensity>();
  out.event = std::make_shared<ConditionalSurvivalModel>(
      LearnerSpec{LearnerKind::closed_form, nuisance::Basis::raw},
      std::make_shared<OracleEvent>(spec), event_floor);
  out.censor = std::make_shared<ConditionalSurvivalModel>(
      LearnerSpec{LearnerKind::closed_form, nuisance::Basis::raw},
      std::make_shared<OracleCensor>(spec), censor_floor);
  out.epsilon = epsilon;
  return out;
}

std::shared_ptr<const nuisance::SurvivalPredictor> scaled_hazard(
    std::shared_ptr<const nuisance::SurvivalPredictor> base, double factor) {
  return std::make_shared<ScaledHazard>(std::move(base), factor);
}

std::shared_ptr<const nuisance::PropensityPredictor> scaled_propensity(
    std::shared_ptr<const nuisance::PropensityPredictor> base, double factor) {
  return std::make_shared<ScaledPropensity>(std::move(base), factor);
}

}  // namespace ahdml::sim
