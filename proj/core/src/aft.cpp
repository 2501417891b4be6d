#include <cmath>

#include <Eigen/Cholesky>

#include "ahdml/nuisance.hpp"
#include "design.hpp"
#include "newton.hpp"

namespace ahdml::nuisance {

namespace {

constexpr double kMinTime = 1e-10;

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

class AftPredictor final : public SurvivalPredictor {
 public:
  AftPredictor(AftFamily family, detail::SurvivalDesign design, double intercept,
               Eigen::VectorXd beta, double shape)
      : family_(family),
        design_(std::move(design)),
        intercept_(intercept),
        beta_(std::move(beta)),
        shape_(shape) {}

  double cumulative_hazard(double t, int a, std::span<const double> w) const override {
    return at(t, intercept_ + design_.linear(beta_, a, w));
  }

  void cumulative_hazard_path(std::span<const double> grid, int a, std::span<const double> w,
                              bool /*left*/, std::span<double> out) const override {
    const double lp = intercept_ + design_.linear(beta_, a, w);
    for (std::size_t g = 0; g < grid.size(); ++g) out[g] = at(grid[g], lp);
  }

 private:
  double at(double t, double lp) const {
    if (t <= 0.0) return 0.0;
    switch (family_) {
      case AftFamily::exponential: return t * std::exp(lp);
      case AftFamily::weibull: return std::exp(shape_ * std::log(t) + lp);
      case AftFamily::loglogistic: return softplus(shape_ * (std::log(t) - lp));
    }
    return 0.0;
  }

  AftFamily family_;
  detail::SurvivalDesign design_;
  double intercept_;
  Eigen::VectorXd beta_;
  double shape_;
};

LearnerKind kind_of(AftFamily f) {
  switch (f) {
    case AftFamily::exponential: return LearnerKind::exponential_aft;
    case AftFamily::weibull: return LearnerKind::weibull_aft;
    case AftFamily::loglogistic: return LearnerKind::loglogistic_aft;
  }
  return LearnerKind::weibull_aft;
}

}  // namespace

// Parameter layout: [intercept, beta..., log shape]; exponential has no
// shape parameter. Weibull and exponential use the proportional-hazards form
// Lambda = t^k exp(lp); log-logistic uses Lambda = log(1 + (t exp(-lp))^k).
ConditionalSurvivalModel fit_parametric_aft(const Dataset& train, Outcome outcome,
                                            AftFamily family, Basis basis, double floor) {
  Dataset data = detail::outcome_view(train, outcome);
  const std::size_t n = data.size();
  double events = 0.0, exposure = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    events += data.delta(i);
    exposure += data.u(i);
  }
  if (events == 0.0) {
    throw Error(ErrorKind::unfittable, "aft: no outcome events in training data");
  }
  detail::SurvivalDesign design(data, basis, false);
  const auto p = static_cast<Eigen::Index>(design.size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), p + 1);
  x.col(0).setOnes();
  if (p > 0) x.rightCols(p) = design.matrix(data);
  const bool has_shape = family != AftFamily::exponential;
  const Eigen::Index dim = p + 1 + (has_shape ? 1 : 0);

  Eigen::VectorXd logt(static_cast<Eigen::Index>(n)), delta(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    logt[static_cast<Eigen::Index>(i)] = std::log(std::max(data.u(i), kMinTime));
    delta[static_cast<Eigen::Index>(i)] = data.delta(i);
  }

  auto objective = [&](const Eigen::VectorXd& theta, bool derivs, ahdml::detail::Objective& out) {
    Eigen::VectorXd lp = x * theta.head(p + 1);
    const double s = has_shape ? theta[dim - 1] : 0.0;
    const double k = std::exp(s);
    double ll = 0.0;
    // Per-unit derivatives with respect to (lp, s).
    Eigen::VectorXd d_lp(lp.size()), d_s(lp.size()), h_ll(lp.size()), h_ls(lp.size()),
        h_ss(lp.size());
    for (Eigen::Index i = 0; i < lp.size(); ++i) {
      const double z = logt[i];
      const double d = delta[i];
      if (family == AftFamily::loglogistic) {
        const double u = k * (z - lp[i]);
        ll += d * (u + s - z) - (1.0 + d) * softplus(u);
        if (derivs) {
          const double sg = sigmoid(u);
          const double g1 = d - (1.0 + d) * sg;
          const double g2 = -(1.0 + d) * sg * (1.0 - sg);
          d_lp[i] = -k * g1;
          d_s[i] = u * g1 + d;
          h_ll[i] = k * k * g2;
          h_ls[i] = -k * u * g2 - k * g1;
          h_ss[i] = g2 * u * u + g1 * u;
        }
      } else {
        const double kz = k * z;
        const double cum = std::exp(kz + lp[i]);
        ll += d * (s + (k - 1.0) * z + lp[i]) - cum;
        if (derivs) {
          d_lp[i] = d - cum;
          d_s[i] = d * (1.0 + kz) - cum * kz;
          h_ll[i] = -cum;
          h_ls[i] = -cum * kz;
          h_ss[i] = d * kz - cum * kz * kz - cum * kz;
        }
      }
    }
    out.value = ll;
    if (!std::isfinite(ll)) return false;
    if (derivs) {
      out.grad.resize(dim);
      out.hess.resize(dim, dim);
      out.grad.head(p + 1) = x.transpose() * d_lp;
      out.hess.topLeftCorner(p + 1, p + 1) = x.transpose() * h_ll.asDiagonal() * x;
      if (has_shape) {
        out.grad[dim - 1] = d_s.sum();
        Eigen::VectorXd cross = x.transpose() * h_ls;
        out.hess.block(0, dim - 1, p + 1, 1) = cross;
        out.hess.block(dim - 1, 0, 1, p + 1) = cross.transpose();
        out.hess(dim - 1, dim - 1) = h_ss.sum();
      }
    }
    return true;
  };

  Eigen::VectorXd start = Eigen::VectorXd::Zero(dim);
  const double rate = events / std::max(exposure, kMinTime);
  start[0] = family == AftFamily::loglogistic ? -std::log(rate) : std::log(rate);
  ahdml::detail::NewtonOptions opt;
  opt.max_iter = 100;
  opt.grad_tol = 1e-8;
  auto res = ahdml::detail::newton_maximize(objective, start, opt);
  if (!res.converged) {
    throw NonConvergenceError("aft: Newton did not converge",
                              std::vector<double>(res.beta.data(), res.beta.data() + dim));
  }

  FitInfo info;
  ahdml::detail::Objective at;
  objective(res.beta, true, at);
  Eigen::MatrixXd cov = (-at.hess).ldlt().solve(Eigen::MatrixXd::Identity(dim, dim));
  info.names.push_back("intercept");
  for (auto& nm : design.names()) info.names.push_back(nm);
  if (has_shape) info.names.push_back("log_shape");
  for (Eigen::Index j = 0; j < dim; ++j) {
    info.estimate.push_back(res.beta[j]);
    info.std_error.push_back(std::sqrt(std::max(cov(j, j), 0.0)));
  }
  info.loglik = res.value;
  info.iterations = res.iterations;

  const double shape = has_shape ? std::exp(res.beta[dim - 1]) : 1.0;
  auto predictor = std::make_shared<AftPredictor>(family, design, res.beta[0],
                                                  Eigen::VectorXd(res.beta.segment(1, p)), shape);
  return ConditionalSurvivalModel(LearnerSpec{kind_of(family), basis}, std::move(predictor), floor,
                                  std::move(info));
}

}  // namespace ahdml::nuisance
