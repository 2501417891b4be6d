#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ahdml {

enum class ErrorKind {
  invalid_horizon,
  degenerate_estimand,
  degenerate_data,
  domain,
  unfittable,
  non_convergence,
  invalid_perturbation,
  positivity,
  fold_infeasible,
  parse,
  config,
};

std::string_view to_string(ErrorKind kind);

// Every library failure is reported through this type; `kind()` is the
// machine-readable part surfaced by the CLI.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ahdml
