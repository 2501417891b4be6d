#include "newton.hpp"

#include <cmath>

#include <Eigen/Cholesky>

namespace ahdml::detail {

namespace {

bool evaluate(const ObjectiveFn& f, const Eigen::VectorXd& beta, bool derivs, double ridge,
              Objective& out) {
  if (!f(beta, derivs, out) || !std::isfinite(out.value)) return false;
  if (ridge > 0.0) {
    out.value -= 0.5 * ridge * beta.squaredNorm();
    if (derivs) {
      out.grad -= ridge * beta;
      out.hess.diagonal().array() -= ridge;
    }
  }
  return true;
}

}  // namespace

NewtonResult newton_maximize(const ObjectiveFn& f, Eigen::VectorXd start,
                             const NewtonOptions& options) {
  NewtonResult result;
  result.beta = std::move(start);
  Objective cur;
  if (!evaluate(f, result.beta, true, options.ridge, cur)) {
    result.value = -INFINITY;
    return result;
  }
  Objective trial;
  const auto p = result.beta.size();
  for (int iter = 0; iter < options.max_iter; ++iter) {
    result.iterations = iter;
    result.max_grad = p > 0 ? cur.grad.cwiseAbs().maxCoeff() : 0.0;
    if (result.max_grad < options.grad_tol) {
      result.converged = true;
      break;
    }
    Eigen::MatrixXd neg_h = -cur.hess;
    Eigen::VectorXd step;
    double damping = 0.0;
    for (int attempt = 0; attempt < 12; ++attempt) {
      Eigen::MatrixXd m = neg_h;
      if (damping > 0.0) m.diagonal().array() += damping;
      Eigen::LLT<Eigen::MatrixXd> llt(m);
      if (llt.info() == Eigen::Success) {
        step = llt.solve(cur.grad);
        if (step.allFinite()) break;
      }
      damping = damping == 0.0 ? 1e-8 * (1.0 + neg_h.diagonal().cwiseAbs().maxCoeff())
                               : damping * 100.0;
      step.resize(0);
    }
    if (step.size() == 0) step = cur.grad;  // steepest ascent

    const double decrement = cur.grad.dot(step);
    if (decrement < 1e-14 * (1.0 + std::abs(cur.value))) {
      result.converged = true;
      break;
    }
    double s = 1.0;
    bool improved = false;
    for (int half = 0; half < 40; ++half) {
      Eigen::VectorXd cand = result.beta + s * step;
      if (evaluate(f, cand, false, options.ridge, trial) &&
          trial.value >= cur.value - 1e-12 * (1.0 + std::abs(cur.value))) {
        result.beta = std::move(cand);
        improved = true;
        break;
      }
      s *= 0.5;
    }
    if (!improved) break;
    evaluate(f, result.beta, true, options.ridge, cur);
    result.iterations = iter + 1;
  }
  result.value = cur.value;
  result.max_grad = p > 0 ? cur.grad.cwiseAbs().maxCoeff() : 0.0;
  if (result.max_grad < options.grad_tol) result.converged = true;
  return result;
}

}  // namespace ahdml::detail
