#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ahdml {

// One subject's record O = (W, A, U, Delta).
struct ObservedUnit {
  std::vector<double> w;
  int a = 0;
  double u = 0.0;
  int delta = 0;

  // N(t) = 1{U <= t, Delta = 1}
  int counting(double t) const { return (u <= t && delta == 1) ? 1 : 0; }
  // Y(t) = 1{U >= t}
  int at_risk(double t) const { return u >= t ? 1 : 0; }
};

// Column-oriented dataset with a fixed covariate dimension.
class Dataset {
 public:
  explicit Dataset(std::size_t dim = 0) : dim_(dim) {}

  void reserve(std::size_t n);
  void add(std::span<const double> w, int a, double u, int delta);
  void add(const ObservedUnit& unit) { add(unit.w, unit.a, unit.u, unit.delta); }

  std::size_t size() const { return a_.size(); }
  std::size_t dim() const { return dim_; }
  bool empty() const { return a_.empty(); }

  std::span<const double> w(std::size_t i) const {
    return {w_.data() + i * dim_, dim_};
  }
  int a(std::size_t i) const { return a_[i]; }
  double u(std::size_t i) const { return u_[i]; }
  int delta(std::size_t i) const { return delta_[i]; }

  std::span<const int> arms() const { return a_; }
  std::span<const double> times() const { return u_; }
  std::span<const int> events() const { return delta_; }

  ObservedUnit unit(std::size_t i) const;
  Dataset subset(std::span<const std::size_t> rows) const;

  // Copy with the event indicator flipped (1 - delta); used to fit the
  // censoring mechanism with the same machinery as the event mechanism.
  Dataset with_flipped_events() const;

  std::size_t count_arm(int arm) const;
  std::size_t count_events(int arm, double horizon) const;

 private:
  std::size_t dim_;
  std::vector<double> w_;
  std::vector<int> a_;
  std::vector<double> u_;
  std::vector<int> delta_;
};

// Order-sensitive FNV-1a fingerprint of an index set.
std::uint64_t fingerprint_indices(std::span<const std::size_t> rows);

}  // namespace ahdml
