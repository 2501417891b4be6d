#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "ahdml/dataset.hpp"

namespace ahdml::nuisance {

// Covariate expansion applied before any learner sees W.
//   raw     : w
//   poly2   : w, w^2, pairwise products
//   tensor  : w, pairwise products
enum class Basis { raw, poly2, tensor };

std::string_view to_string(Basis b);
Basis parse_basis(std::string_view name);

// Expands and standardizes covariates. Centering/scaling constants are
// learned on the training rows only.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(Basis basis, const Dataset& train);

  Basis basis() const { return basis_; }
  std::size_t size() const { return mean_.size(); }

  void transform(std::span<const double> w, std::span<double> out) const;
  Eigen::VectorXd transform(std::span<const double> w) const;
  Eigen::MatrixXd transform_all(const Dataset& data) const;

 private:
  // Standardize raw w, then expand into `out`.
  void expand_standardized(std::span<const double> w, std::span<double> out) const;

  Basis basis_ = Basis::raw;
  std::size_t input_dim_ = 0;
  std::vector<double> raw_mean_;
  std::vector<double> raw_sd_;
  std::vector<double> mean_;
  std::vector<double> scale_;
};

}  // namespace ahdml::nuisance
