#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace ahdml::cli {

struct RunConfig {
  std::string mode;  // estimate | simulate | truth | summarize

  std::string data;
  std::vector<std::string> dgms{"ph", "ph-complex", "non-ph", "cross-a"};
  std::vector<double> taus{12.0};
  int folds = 5;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string out;

  std::vector<std::string> propensity_bases{"raw", "poly2"};
  std::vector<std::string> event_learners{"cox-ph:raw", "cox-ph-stratified:poly2",
                                          "weibull-aft:poly2"};
  std::vector<std::string> censor_learners{"cox-ph:raw", "exponential-aft:poly2"};
  int v_folds = 5;
  double epsilon = 0.025;
  double epsilon_s = 0.005;
  double alpha = 0.05;
  double grid_step = 0.25;

  std::vector<std::string> comparators;
  int bootstrap = 200;
  std::uint64_t n_oracle = 2'000'000;
  std::vector<std::size_t> sizes{500, 1000};
  int replicates = 200;
  std::vector<std::string> estimators{"ah-dml", "g-comp", "cox-marginal"};

  std::string checkpoint;
  std::string truth_cache = ".ahdml-truth-cache";
  std::string results;
  std::string layout = "ratio-grid";
  std::string plot_out;
  std::string eif_out;
};

// Canonical JSON of the settings that determine results (paths and worker
// count excluded) and its FNV-1a hex digest.
std::string config_json(const RunConfig& config);
std::string config_fingerprint(const RunConfig& config);

// Entry point shared by the executable and the tests. Returns the process
// exit code; machine-readable errors go to `err` as JSON.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ahdml::cli
