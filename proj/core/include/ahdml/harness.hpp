#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "ahdml/estimator.hpp"
#include "ahdml/simgen.hpp"

namespace ahdml::harness {

enum class Method { ah_dml, g_comp, cox_marginal };
std::string_view to_string(Method m);
Method parse_method(std::string_view text);

enum class Target { eta0, eta1, theta };
std::string_view to_string(Target t);
Target parse_target(std::string_view text);

struct GridSpec {
  std::vector<sim::DgmSpec> dgms;
  std::vector<std::size_t> sizes{500, 750, 1000, 1250, 1500};
  int replicates = 1000;
  double tau = 12.0;
  std::vector<Method> estimators{Method::ah_dml, Method::g_comp, Method::cox_marginal};
  std::uint64_t base_seed = 20240601;
  int k_folds = 5;
  int bootstrap_reps = 200;
  std::uint64_t n_oracle = sim::kDefaultOracleDraws;
  est::LearnerConfig learners;

  // 200 replicates, n in {500, 1000}, all four DGMs.
  static GridSpec desk();
  // Full-scale grid: 1000 replicates, five sample sizes.
  static GridSpec full();

  // Hash of everything except the replicate count, so a run can be
  // extended by resuming with more replicates.
  std::uint64_t fingerprint() const;
};

struct ResultRow {
  std::string dgm;
  std::size_t n = 0;
  Method estimator = Method::ah_dml;
  int replicate = 0;
  Target target = Target::theta;
  double estimate = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double truth = 0.0;
  bool covered = false;
  bool failed = false;
  std::string error;
};

using TruthProvider = std::function<sim::TruthRecord(const sim::DgmSpec&, double tau)>;
// Hook deciding whether a replicate's estimator should be forced to fail.
using FailureInjector =
    std::function<bool(const sim::DgmSpec&, std::size_t n, Method m, int replicate)>;

struct RunOptions {
  int workers = 1;
  std::string checkpoint_path;  // empty: no checkpointing
  TruthProvider truth;          // default: sim::truth_theta with the grid's n_oracle
  FailureInjector inject_failure;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

// Runs every (dgm, n, replicate) task, applying all estimators to the same
// simulated dataset, and returns rows sorted by (dgm, n, estimator,
// replicate, target). Replicate seeds are base_seed XOR replicate index; the
// table does not depend on the worker count. With a checkpoint path,
// completed tasks are appended as NDJSON and skipped on resume.
std::vector<ResultRow> run_grid(const GridSpec& grid, const RunOptions& options = {});

struct CellSummary {
  std::string dgm;
  std::size_t n = 0;
  Method estimator = Method::ah_dml;
  Target target = Target::theta;
  double percent_bias = 0.0;  // absolute bias when truth == 0 (see flag)
  bool bias_is_absolute = false;
  double variance_x100 = 0.0;  // sample variance of estimates, x100
  double mse_x100 = 0.0;       // mean squared error around truth, x100
  double coverage = 0.0;
  std::size_t replicates = 0;  // successful replicates
  std::size_t failures = 0;
  double truth = 0.0;
};

std::vector<CellSummary> summarize(const std::vector<ResultRow>& rows);

// Stable text form of the result table and its FNV-1a hash. The reader
// skips leading '#' comment lines.
void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(std::istream& in);
std::uint64_t table_fingerprint(const std::vector<ResultRow>& rows);

void write_summary_csv(std::ostream& out, const std::vector<CellSummary>& cells);

enum class PlotLayout { ratio_grid, arm_grid };
PlotLayout parse_layout(std::string_view text);

// Long-format CSV (dgm, n, estimator, target, metric, value) with four
// metrics per cell: percent_bias, variance_x100, mse_x100, coverage.
// ratio-grid keeps theta cells, arm-grid keeps eta0/eta1 cells.
void emit_plotdata(std::ostream& out, const std::vector<CellSummary>& cells, PlotLayout layout);
std::vector<CellSummary> parse_plotdata(std::istream& in);

}  // namespace ahdml::harness
