#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ahdml/error.hpp"
#include "ahdml/harness.hpp"
#include "ahdml/rng.hpp"

namespace ahdml::harness {
namespace {

GridSpec small_grid(int replicates, std::vector<Method> estimators = {Method::ah_dml}) {
  GridSpec g;
  g.dgms = {sim::DgmSpec::preset(sim::DgmKind::non_ph)};
  g.sizes = {300};
  g.replicates = replicates;
  g.estimators = std::move(estimators);
  g.bootstrap_reps = 5;
  g.base_seed = 4242;
  return g;
}

RunOptions quick_truth() {
  RunOptions o;
  o.truth = [](const sim::DgmSpec& spec, double tau) { return sim::truth_theta(spec, tau, 20000, 1); };
  return o;
}

std::string temp_path(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ahdml_harness_" + name);
  std::filesystem::remove(p);
  return p.string();
}

ResultRow theta_row(int replicate, double estimate, double truth, double half_width) {
  ResultRow r;
  r.dgm = "ph";
  r.n = 100;
  r.replicate = replicate;
  r.estimate = estimate;
  r.truth = truth;
  r.se = half_width / 1.96;
  r.ci_low = estimate - half_width;
  r.ci_high = estimate + half_width;
  r.covered = r.ci_low <= truth && truth <= r.ci_high;
  return r;
}

TEST(RunGrid, ThreeTargetsPerReplicate) {
  const auto rows = run_grid(small_grid(3), quick_truth());
  ASSERT_EQ(rows.size(), 9u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].replicate, static_cast<int>(i / 3));
    EXPECT_EQ(rows[i].target, static_cast<Target>(i % 3));
    EXPECT_FALSE(rows[i].failed);
    EXPECT_EQ(rows[i].dgm, "non-ph");
    EXPECT_EQ(rows[i].n, 300u);
  }
}

TEST(RunGrid, DeterministicAcrossRunsAndWorkers) {
  const auto grid = small_grid(4, {Method::ah_dml, Method::cox_marginal});
  auto one = quick_truth();
  auto many = quick_truth();
  many.workers = 8;
  const auto a = run_grid(grid, one);
  const auto b = run_grid(grid, one);
  const auto c = run_grid(grid, many);
  EXPECT_EQ(a.size(), 24u);
  EXPECT_EQ(table_fingerprint(a), table_fingerprint(b));
  EXPECT_EQ(table_fingerprint(a), table_fingerprint(c));
}

TEST(RunGrid, ReplicatesDiffer) {
  const auto rows = run_grid(small_grid(2), quick_truth());
  EXPECT_NE(rows[2].estimate, rows[5].estimate);
}

TEST(RunGrid, InjectedFailureIsIsolated) {
  const auto grid = small_grid(3, {Method::ah_dml, Method::cox_marginal});
  const auto clean = run_grid(grid, quick_truth());
  auto opts = quick_truth();
  opts.inject_failure = [](const sim::DgmSpec&, std::size_t, Method m, int rep) {
    return m == Method::ah_dml && rep == 1;
  };
  const auto dirty = run_grid(grid, opts);
  ASSERT_EQ(clean.size(), dirty.size());
  int failed = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const bool hit = dirty[i].estimator == Method::ah_dml && dirty[i].replicate == 1;
    if (hit) {
      EXPECT_TRUE(dirty[i].failed);
      EXPECT_FALSE(dirty[i].error.empty());
      ++failed;
    } else {
      EXPECT_FALSE(dirty[i].failed);
      EXPECT_EQ(dirty[i].estimate, clean[i].estimate);
      EXPECT_EQ(dirty[i].ci_low, clean[i].ci_low);
    }
  }
  EXPECT_EQ(failed, 3);
  const auto cells = summarize(dirty);
  for (const auto& c : cells) {
    EXPECT_EQ(c.failures, c.estimator == Method::ah_dml ? 1u : 0u);
    EXPECT_EQ(c.replicates, c.estimator == Method::ah_dml ? 2u : 3u);
  }
}

TEST(RunGrid, CheckpointResumeExtendsReplicates) {
  const std::string path = temp_path("resume.ndjson");
  auto opts = quick_truth();
  opts.checkpoint_path = path;
  int computed = 0;
  opts.inject_failure = [&](const sim::DgmSpec&, std::size_t, Method, int) {
    ++computed;
    return false;
  };
  run_grid(small_grid(2), opts);
  EXPECT_EQ(computed, 2);
  computed = 0;
  const auto resumed = run_grid(small_grid(4), opts);
  EXPECT_EQ(computed, 2);
  computed = 0;
  const auto again = run_grid(small_grid(4), opts);
  EXPECT_EQ(computed, 0);
  const auto fresh = run_grid(small_grid(4), quick_truth());
  EXPECT_EQ(table_fingerprint(resumed), table_fingerprint(fresh));
  EXPECT_EQ(table_fingerprint(again), table_fingerprint(fresh));

  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 5);
  std::filesystem::remove(path);
}

TEST(RunGrid, CheckpointFromOtherGridRejected) {
  const std::string path = temp_path("other.ndjson");
  auto opts = quick_truth();
  opts.checkpoint_path = path;
  run_grid(small_grid(1), opts);
  auto other = small_grid(1);
  other.tau = 10.0;
  EXPECT_THROW(run_grid(other, opts), Error);
  std::filesystem::remove(path);
}

TEST(RunGrid, RejectsEmptyGrid) {
  auto g = small_grid(1);
  g.estimators.clear();
  EXPECT_THROW(run_grid(g, quick_truth()), Error);
}

TEST(GridSpec, FingerprintIgnoresReplicateCount) {
  EXPECT_EQ(small_grid(2).fingerprint(), small_grid(40).fingerprint());
  auto g = small_grid(2);
  g.base_seed += 1;
  EXPECT_NE(g.fingerprint(), small_grid(2).fingerprint());
}

TEST(GridSpec, Profiles) {
  const auto desk = GridSpec::desk();
  EXPECT_EQ(desk.replicates, 200);
  EXPECT_EQ(desk.sizes, (std::vector<std::size_t>{500, 1000}));
  EXPECT_EQ(desk.dgms.size(), 4u);
  const auto full = GridSpec::full();
  EXPECT_EQ(full.replicates, 1000);
  EXPECT_EQ(full.sizes, (std::vector<std::size_t>{500, 750, 1000, 1250, 1500}));
  EXPECT_EQ(full.tau, 12.0);
}

TEST(Summarize, ExactEstimates) {
  std::vector<ResultRow> rows;
  for (int r = 0; r < 10; ++r) rows.push_back(theta_row(r, 0.7, 0.7, 0.1));
  const auto cells = summarize(rows);
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_NEAR(cells[0].percent_bias, 0.0, 1e-12);
  EXPECT_NEAR(cells[0].variance_x100, 0.0, 1e-12);
  EXPECT_NEAR(cells[0].mse_x100, 0.0, 1e-12);
  EXPECT_EQ(cells[0].coverage, 1.0);
  EXPECT_EQ(cells[0].replicates, 10u);
}

TEST(Summarize, AlternatingAroundTruth) {
  const int n = 10;
  std::vector<ResultRow> rows;
  for (int r = 0; r < n; ++r) rows.push_back(theta_row(r, r % 2 == 0 ? 0.0 : 2.0, 1.0, 0.5));
  const auto c = summarize(rows).at(0);
  EXPECT_NEAR(c.percent_bias, 0.0, 1e-12);
  EXPECT_NEAR(c.variance_x100, 100.0 * n / (n - 1.0), 1e-10);
  EXPECT_NEAR(c.mse_x100, 100.0, 1e-10);
  EXPECT_EQ(c.coverage, 0.0);
}

TEST(Summarize, ZeroTruthReportsAbsoluteBias) {
  std::vector<ResultRow> rows{theta_row(0, 0.1, 0.0, 0.2), theta_row(1, 0.3, 0.0, 0.2)};
  const auto c = summarize(rows).at(0);
  EXPECT_TRUE(c.bias_is_absolute);
  EXPECT_NEAR(c.percent_bias, 0.2, 1e-15);
}

TEST(Summarize, FailuresExcluded) {
  std::vector<ResultRow> rows{theta_row(0, 1.0, 1.0, 0.1), theta_row(1, 5.0, 1.0, 0.1)};
  rows[1].failed = true;
  rows.push_back(theta_row(2, std::nan(""), 1.0, 0.1));
  const auto c = summarize(rows).at(0);
  EXPECT_EQ(c.replicates, 1u);
  EXPECT_EQ(c.failures, 2u);
  EXPECT_EQ(c.percent_bias, 0.0);
}

TEST(Summarize, NormalCalibration) {
  Rng rng(17);
  const double truth = -0.4, se = 0.12;
  std::normal_distribution<double> draw(truth, se);
  const int n = 4000;
  std::vector<ResultRow> rows;
  for (int r = 0; r < n; ++r) rows.push_back(theta_row(r, draw(rng), truth, 1.959964 * se));
  const auto c = summarize(rows).at(0);
  const double binom_se = std::sqrt(0.95 * 0.05 / n);
  EXPECT_NEAR(c.coverage, 0.95, 3.0 * binom_se);
  EXPECT_NEAR(c.variance_x100, 100.0 * se * se, 100.0 * se * se * 3.0 * std::sqrt(2.0 / n));
  EXPECT_NEAR(c.percent_bias, 0.0, 100.0 * 3.0 * se / std::sqrt(n) / std::abs(truth));
}

// MSE decomposes as squared bias plus the population variance, so it
// dominates the sample variance rescaled by (k - 1) / k.
TEST(Summarize, MseDominatesVariance) {
  Rng rng(3);
  std::normal_distribution<double> norm;
  std::uniform_int_distribution<int> size(2, 40);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = size(rng);
    const double truth = norm(rng);
    std::vector<ResultRow> rows;
    for (int r = 0; r < k; ++r) rows.push_back(theta_row(r, truth + 0.3 * norm(rng) + 0.1, truth, 0.2));
    const auto c = summarize(rows).at(0);
    EXPECT_GE(c.mse_x100 - c.variance_x100 * (k - 1.0) / k, -1e-12);
    EXPECT_GE(c.coverage, 0.0);
    EXPECT_LE(c.coverage, 1.0);
  }
}

TEST(Summarize, CellsKeyedSeparately) {
  std::vector<ResultRow> rows{theta_row(0, 1.0, 1.0, 0.1), theta_row(0, 2.0, 2.0, 0.1)};
  rows[1].estimator = Method::g_comp;
  EXPECT_EQ(summarize(rows).size(), 2u);
}

TEST(ResultsCsv, RoundTrip) {
  auto opts = quick_truth();
  opts.inject_failure = [](const sim::DgmSpec&, std::size_t, Method, int rep) { return rep == 0; };
  const auto rows = run_grid(small_grid(2), opts);
  std::stringstream ss;
  ss << "# produced by a test\n";
  write_results_csv(ss, rows);
  const auto back = read_results_csv(ss);
  EXPECT_EQ(table_fingerprint(back), table_fingerprint(rows));
  EXPECT_TRUE(back[0].failed);
}

TEST(ResultsCsv, ReportsLineNumbers) {
  std::stringstream ss;
  ss << "# c\n"
     << "dgm,n,estimator,replicate,target,estimate,se,ci_low,ci_high,truth,covered,failed,error\n"
     << "ph,100,ah-dml,0,theta,0.1,0.1,0,0.2,0.1,1,0,\n"
     << "ph,100,ah-dml,1,theta,0.1\n";
  try {
    read_results_csv(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
  std::stringstream bad("dgm,n\n");
  EXPECT_THROW(read_results_csv(bad), Error);
}

std::vector<CellSummary> sample_cells() {
  std::vector<CellSummary> cells;
  const Method methods[] = {Method::ah_dml, Method::g_comp};
  const Target targets[] = {Target::eta0, Target::eta1, Target::theta};
  double v = 0.1;
  for (Method m : methods) {
    for (Target t : targets) {
      CellSummary c;
      c.dgm = "cross-a";
      c.n = 500;
      c.estimator = m;
      c.target = t;
      c.percent_bias = -v / 3.0;
      c.variance_x100 = v * 7.1;
      c.mse_x100 = v * 7.3 + 1e-9;
      c.coverage = 0.935 + v / 100.0;
      cells.push_back(c);
      v += 0.37;
    }
  }
  return cells;
}

TEST(PlotData, EmptyIsHeaderOnly) {
  std::stringstream ss;
  emit_plotdata(ss, {}, PlotLayout::ratio_grid);
  EXPECT_EQ(ss.str(), "dgm,n,estimator,target,metric,value\n");
  EXPECT_TRUE(parse_plotdata(ss).empty());
}

TEST(PlotData, FourRowsPerCell) {
  const auto cells = sample_cells();
  for (auto layout : {PlotLayout::ratio_grid, PlotLayout::arm_grid}) {
    std::stringstream ss;
    emit_plotdata(ss, cells, layout);
    std::string line;
    int rows = -1;
    while (std::getline(ss, line)) ++rows;
    EXPECT_EQ(rows, (layout == PlotLayout::ratio_grid ? 2 : 4) * 4);
  }
}

TEST(PlotData, RoundTripIsExact) {
  const auto cells = sample_cells();
  for (auto layout : {PlotLayout::ratio_grid, PlotLayout::arm_grid}) {
    std::stringstream ss;
    ss << "# config_fingerprint=abc\n";
    emit_plotdata(ss, cells, layout);
    const auto back = parse_plotdata(ss);
    std::size_t j = 0;
    for (const auto& c : cells) {
      if ((c.target == Target::theta) != (layout == PlotLayout::ratio_grid)) continue;
      ASSERT_LT(j, back.size());
      const auto& b = back[j++];
      EXPECT_EQ(b.dgm, c.dgm);
      EXPECT_EQ(b.n, c.n);
      EXPECT_EQ(b.estimator, c.estimator);
      EXPECT_EQ(b.target, c.target);
      EXPECT_EQ(b.percent_bias, c.percent_bias);
      EXPECT_EQ(b.variance_x100, c.variance_x100);
      EXPECT_EQ(b.mse_x100, c.mse_x100);
      EXPECT_EQ(b.coverage, c.coverage);
    }
    EXPECT_EQ(j, back.size());
  }
}

TEST(PlotData, RejectsUnknownMetric) {
  std::stringstream ss("dgm,n,estimator,target,metric,value\nph,1,ah-dml,theta,width,1\n");
  EXPECT_THROW(parse_plotdata(ss), Error);
  EXPECT_THROW(parse_layout("spiral"), Error);
}

TEST(Names, RoundTrip) {
  for (auto m : {Method::ah_dml, Method::g_comp, Method::cox_marginal}) {
    EXPECT_EQ(parse_method(to_string(m)), m);
  }
  for (auto t : {Target::eta0, Target::eta1, Target::theta}) EXPECT_EQ(parse_target(to_string(t)), t);
  EXPECT_THROW(parse_method("kaplan"), Error);
}

}  // namespace
}  // namespace ahdml::harness
