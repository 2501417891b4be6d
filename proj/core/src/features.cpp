#include "ahdml/features.hpp"

#include <cmath>
#include <string>

#include "ahdml/error.hpp"

namespace ahdml::nuisance {

std::string_view to_string(Basis b) {
  switch (b) {
    case Basis::raw: return "raw";
    case Basis::poly2: return "poly2";
    case Basis::tensor: return "tensor";
  }
  return "raw";
}

Basis parse_basis(std::string_view name) {
  if (name == "raw") return Basis::raw;
  if (name == "poly2") return Basis::poly2;
  if (name == "tensor") return Basis::tensor;
  throw Error(ErrorKind::config, "unknown covariate basis '" + std::string(name) + "'");
}

namespace {

std::size_t expanded_size(Basis basis, std::size_t d) {
  const std::size_t pairs = d < 2 ? 0 : d * (d - 1) / 2;
  switch (basis) {
    case Basis::raw: return d;
    case Basis::poly2: return 2 * d + pairs;
    case Basis::tensor: return d + pairs;
  }
  return d;
}

}  // namespace

void FeatureMap::expand_standardized(std::span<const double> w, std::span<double> out) const {
  // Small fixed buffer is enough for the covariate dimensions used here;
  // fall back to the heap otherwise.
  double stack[16];
  std::vector<double> heap;
  double* z = stack;
  if (input_dim_ > 16) {
    heap.resize(input_dim_);
    z = heap.data();
  }
  for (std::size_t j = 0; j < input_dim_; ++j) z[j] = (w[j] - raw_mean_[j]) / raw_sd_[j];

  std::size_t k = 0;
  for (std::size_t j = 0; j < input_dim_; ++j) out[k++] = z[j];
  if (basis_ == Basis::poly2) {
    for (std::size_t j = 0; j < input_dim_; ++j) out[k++] = z[j] * z[j];
  }
  if (basis_ != Basis::raw) {
    for (std::size_t i = 0; i < input_dim_; ++i) {
      for (std::size_t j = i + 1; j < input_dim_; ++j) out[k++] = z[i] * z[j];
    }
  }
}

FeatureMap::FeatureMap(Basis basis, const Dataset& train)
    : basis_(basis), input_dim_(train.dim()) {
  const std::size_t p = expanded_size(basis, input_dim_);
  mean_.assign(p, 0.0);
  scale_.assign(p, 1.0);
  raw_mean_.assign(input_dim_, 0.0);
  raw_sd_.assign(input_dim_, 1.0);
  if (train.empty() || p == 0) return;

  const double n = static_cast<double>(train.size());
  std::vector<double> var(input_dim_, 0.0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto w = train.w(i);
    for (std::size_t j = 0; j < input_dim_; ++j) raw_mean_[j] += w[j] / n;
  }
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto w = train.w(i);
    for (std::size_t j = 0; j < input_dim_; ++j) {
      var[j] += (w[j] - raw_mean_[j]) * (w[j] - raw_mean_[j]) / n;
    }
  }
  for (std::size_t j = 0; j < input_dim_; ++j) {
    raw_sd_[j] = var[j] > 1e-24 ? std::sqrt(var[j]) : 1.0;
  }

  std::vector<double> buf(p);
  std::vector<double> sum(p, 0.0), sumsq(p, 0.0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    expand_standardized(train.w(i), buf);
    for (std::size_t k = 0; k < p; ++k) {
      sum[k] += buf[k];
      sumsq[k] += buf[k] * buf[k];
    }
  }
  for (std::size_t k = 0; k < p; ++k) {
    mean_[k] = sum[k] / n;
    double v = sumsq[k] / n - mean_[k] * mean_[k];
    scale_[k] = v > 1e-12 ? std::sqrt(v) : 1.0;
  }
}

void FeatureMap::transform(std::span<const double> w, std::span<double> out) const {
  if (w.size() != input_dim_ || out.size() != mean_.size()) {
    throw Error(ErrorKind::domain, "feature map: dimension mismatch");
  }
  expand_standardized(w, out);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = (out[k] - mean_[k]) / scale_[k];
}

Eigen::VectorXd FeatureMap::transform(std::span<const double> w) const {
  Eigen::VectorXd x(static_cast<Eigen::Index>(size()));
  transform(w, std::span<double>(x.data(), size()));
  return x;
}

Eigen::MatrixXd FeatureMap::transform_all(const Dataset& data) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(size()));
  Eigen::VectorXd row(static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    transform(data.w(i), std::span<double>(row.data(), size()));
    x.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return x;
}

}  // namespace ahdml::nuisance
