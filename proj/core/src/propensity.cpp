#include <algorithm>
#include <cmath>
#include <limits>

#include "ahdml/nuisance.hpp"
#include "ahdml/rng.hpp"
#include "newton.hpp"

namespace ahdml::nuisance {

double truncate_propensity(double raw, double epsilon) {
  return std::clamp(raw, epsilon, 1.0 - epsilon);
}

PropensityModel::PropensityModel(FeatureMap features, Eigen::VectorXd coef, double epsilon,
                                 bool ridge_fallback, int iterations)
    : features_(std::move(features)),
      coef_(std::move(coef)),
      epsilon_(epsilon),
      ridge_fallback_(ridge_fallback),
      iterations_(iterations) {
  if (!(epsilon > 0.0 && epsilon < 0.5)) {
    throw Error(ErrorKind::domain, "propensity truncation bound must lie in (0, 0.5)");
  }
}

double PropensityModel::prob_treated(std::span<const double> w) const {
  double eta = coef_[0];
  if (features_.size() > 0) {
    Eigen::VectorXd x = features_.transform(w);
    eta += coef_.tail(coef_.size() - 1).dot(x);
  }
  return 1.0 / (1.0 + std::exp(-eta));
}

double PropensityModel::prob(int a, std::span<const double> w) const {
  double p1 = truncate_propensity(prob_treated(w), epsilon_);
  return a == 1 ? p1 : 1.0 - p1;
}

namespace {

detail::NewtonResult logistic_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                  double ridge) {
  auto objective = [&](const Eigen::VectorXd& beta, bool derivs, ahdml::detail::Objective& out) {
    Eigen::VectorXd eta = x * beta;
    double ll = 0.0;
    Eigen::VectorXd resid(eta.size()), wts(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double e = eta[i];
      // log(1 + exp(e)) without overflow
      const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
      ll += y[i] * e - softplus;
      if (derivs) {
        const double p = 1.0 / (1.0 + std::exp(-e));
        resid[i] = y[i] - p;
        wts[i] = p * (1.0 - p);
      }
    }
    out.value = ll;
    if (derivs) {
      out.grad = x.transpose() * resid;
      out.hess = -(x.transpose() * wts.asDiagonal() * x);
    }
    return std::isfinite(ll);
  };
  ahdml::detail::NewtonOptions opt;
  opt.max_iter = 50;
  opt.grad_tol = 1e-8;
  opt.ridge = ridge;
  return ahdml::detail::newton_maximize(objective, Eigen::VectorXd::Zero(x.cols()), opt);
}

}  // namespace

PropensityModel fit_propensity(const Dataset& train, Basis basis, double epsilon) {
  const std::size_t n1 = train.count_arm(1);
  if (n1 == 0 || n1 == train.size()) {
    throw Error(ErrorKind::unfittable, "propensity: training data contain a single arm");
  }
  FeatureMap features(basis, train);
  const auto n = static_cast<Eigen::Index>(train.size());
  const auto p = static_cast<Eigen::Index>(features.size());
  Eigen::MatrixXd x(n, p + 1);
  x.col(0).setOnes();
  if (p > 0) x.rightCols(p) = features.transform_all(train);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = train.a(static_cast<std::size_t>(i));

  auto fit = logistic_fit(x, y, 0.0);
  bool ridge = false;
  if (!fit.converged || !fit.beta.allFinite() || fit.beta.cwiseAbs().maxCoeff() > 30.0) {
    // Quasi/complete separation: coefficients run off to infinity.
    fit = logistic_fit(x, y, kRidgeOnSeparation);
    ridge = true;
  }
  return PropensityModel(std::move(features), std::move(fit.beta), epsilon, ridge,
                         fit.iterations);
}

PropensitySelection select_propensity(const Dataset& train, std::span<const Basis> bases,
                                      int v_folds, std::uint64_t seed, double epsilon) {
  if (bases.empty()) throw Error(ErrorKind::config, "propensity: empty basis list");
  if (v_folds < 2) throw Error(ErrorKind::config, "propensity: v_folds must be >= 2");
  std::vector<double> risk(bases.size(), 0.0);
  if (bases.size() > 1) {
    auto folds = assign_stratified_folds(train.arms(), v_folds, seed);
    for (std::size_t b = 0; b < bases.size(); ++b) {
      double total = 0.0;
      try {
        for (int v = 0; v < v_folds; ++v) {
          std::vector<std::size_t> in, out;
          for (std::size_t i = 0; i < train.size(); ++i) {
            (folds[i] == v ? out : in).push_back(i);
          }
          auto model = fit_propensity(train.subset(in), bases[b], epsilon);
          for (std::size_t i : out) {
            total -= std::log(model.prob(train.a(i), train.w(i)));
          }
        }
        risk[b] = total / static_cast<double>(train.size());
      } catch (const Error&) {
        risk[b] = std::numeric_limits<double>::infinity();
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t b = 1; b < bases.size(); ++b) {
    if (risk[b] < risk[best]) best = b;
  }
  if (!std::isfinite(risk[best])) {
    throw Error(ErrorKind::unfittable, "propensity: no basis could be fitted");
  }
  return PropensitySelection{fit_propensity(train, bases[best], epsilon), std::move(risk), best};
}

double NuisanceTriple::pi(int a, std::span<const double> w) const {
  double p1 = truncate_propensity(propensity->prob_treated(w), epsilon);
  return a == 1 ? p1 : 1.0 - p1;
}

}  // namespace ahdml::nuisance
