#include "ahdml/dataset.hpp"

#include <cmath>
#include <string>

#include "ahdml/error.hpp"

namespace ahdml {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_horizon: return "invalid-horizon";
    case ErrorKind::degenerate_estimand: return "degenerate-estimand";
    case ErrorKind::degenerate_data: return "degenerate-data";
    case ErrorKind::domain: return "domain";
    case ErrorKind::unfittable: return "unfittable";
    case ErrorKind::non_convergence: return "non-convergence";
    case ErrorKind::invalid_perturbation: return "invalid-perturbation";
    case ErrorKind::positivity: return "positivity";
    case ErrorKind::fold_infeasible: return "fold-infeasible";
    case ErrorKind::parse: return "parse";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

void Dataset::reserve(std::size_t n) {
  w_.reserve(n * dim_);
  a_.reserve(n);
  u_.reserve(n);
  delta_.reserve(n);
}

void Dataset::add(std::span<const double> w, int a, double u, int delta) {
  if (w.size() != dim_) {
    throw Error(ErrorKind::domain, "covariate dimension mismatch: expected " +
                                       std::to_string(dim_) + ", got " +
                                       std::to_string(w.size()));
  }
  if (!std::isfinite(u) || u < 0.0) {
    throw Error(ErrorKind::domain, "follow-up time must be finite and >= 0");
  }
  if ((a != 0 && a != 1) || (delta != 0 && delta != 1)) {
    throw Error(ErrorKind::domain, "treatment and event indicator must be 0/1");
  }
  w_.insert(w_.end(), w.begin(), w.end());
  a_.push_back(a);
  u_.push_back(u);
  delta_.push_back(delta);
}

ObservedUnit Dataset::unit(std::size_t i) const {
  auto wi = w(i);
  return ObservedUnit{{wi.begin(), wi.end()}, a_[i], u_[i], delta_[i]};
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out(dim_);
  out.reserve(rows.size());
  for (std::size_t i : rows) {
    out.w_.insert(out.w_.end(), w_.begin() + i * dim_, w_.begin() + (i + 1) * dim_);
    out.a_.push_back(a_[i]);
    out.u_.push_back(u_[i]);
    out.delta_.push_back(delta_[i]);
  }
  return out;
}

Dataset Dataset::with_flipped_events() const {
  Dataset out = *this;
  for (auto& d : out.delta_) d = 1 - d;
  return out;
}

std::size_t Dataset::count_arm(int arm) const {
  std::size_t c = 0;
  for (int a : a_) c += (a == arm);
  return c;
}

std::size_t Dataset::count_events(int arm, double horizon) const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < size(); ++i) {
    c += (a_[i] == arm && delta_[i] == 1 && u_[i] <= horizon);
  }
  return c;
}

std::uint64_t fingerprint_indices(std::span<const std::size_t> rows) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t r : rows) {
    for (int b = 0; b < 8; ++b) {
      h ^= (static_cast<std::uint64_t>(r) >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace ahdml
