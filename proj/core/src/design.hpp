#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ahdml/dataset.hpp"
#include "ahdml/nuisance.hpp"

namespace ahdml::nuisance::detail {

// Regression row for the survival learners: [a] [phi(w)] [a * phi(w)].
// The arm column is dropped when the training data contain one arm only.
class SurvivalDesign {
 public:
  SurvivalDesign() = default;
  SurvivalDesign(const Dataset& train, Basis basis, bool interactions)
      : features_(basis, train), interactions_(interactions) {
    const std::size_t n1 = train.count_arm(1);
    use_arm_ = n1 > 0 && n1 < train.size();
    if (!use_arm_) interactions_ = false;
  }

  std::size_t size() const {
    return (use_arm_ ? 1 : 0) + features_.size() * (interactions_ ? 2 : 1);
  }

  void row(int a, std::span<const double> w, std::span<double> out) const {
    std::size_t k = 0;
    if (use_arm_) out[k++] = a;
    const std::size_t p = features_.size();
    if (p > 0) {
      features_.transform(w, out.subspan(k, p));
      if (interactions_) {
        for (std::size_t j = 0; j < p; ++j) out[k + p + j] = a * out[k + j];
      }
    }
  }

  Eigen::MatrixXd matrix(const Dataset& data) const {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(size()));
    std::vector<double> buf(size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      row(data.a(i), data.w(i), buf);
      for (std::size_t j = 0; j < buf.size(); ++j) {
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = buf[j];
      }
    }
    return x;
  }

  double linear(const Eigen::VectorXd& beta, int a, std::span<const double> w) const {
    const std::size_t p = size();
    if (p == 0) return 0.0;
    double buf[64];
    std::vector<double> heap;
    std::span<double> out;
    if (p <= 64) {
      out = std::span<double>(buf, p);
    } else {
      heap.resize(p);
      out = heap;
    }
    row(a, w, out);
    double s = 0.0;
    for (std::size_t j = 0; j < p; ++j) s += beta[static_cast<Eigen::Index>(j)] * out[j];
    return s;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    if (use_arm_) out.emplace_back("a");
    for (std::size_t j = 0; j < features_.size(); ++j) out.push_back("x" + std::to_string(j + 1));
    if (interactions_) {
      for (std::size_t j = 0; j < features_.size(); ++j) {
        out.push_back("a:x" + std::to_string(j + 1));
      }
    }
    return out;
  }

  bool uses_arm() const { return use_arm_; }

 private:
  FeatureMap features_;
  bool interactions_ = false;
  bool use_arm_ = false;
};

Dataset outcome_view(const Dataset& train, Outcome outcome);

}  // namespace ahdml::nuisance::detail
