#pragma once

#include <functional>

#include <Eigen/Core>

namespace ahdml::detail {

struct Objective {
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

// Evaluates a concave objective at beta. Returns false when the value is not
// finite. Derivatives are only required when `derivs` is true.
using ObjectiveFn = std::function<bool(const Eigen::VectorXd& beta, bool derivs, Objective& out)>;

struct NewtonOptions {
  int max_iter = 100;
  double grad_tol = 1e-8;
  double ridge = 0.0;  // added to -H, and as -ridge/2 |beta|^2 to the value
};

struct NewtonResult {
  Eigen::VectorXd beta;
  double value = 0.0;
  double max_grad = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Damped Newton ascent with backtracking line search.
NewtonResult newton_maximize(const ObjectiveFn& f, Eigen::VectorXd start,
                             const NewtonOptions& options);

}  // namespace ahdml::detail
