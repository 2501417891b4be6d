#include "ahdml/harness.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "ahdml/csv.hpp"
#include "ahdml/error.hpp"
#include "ahdml/rng.hpp"

namespace ahdml::harness {

using nlohmann::json;

std::string_view to_string(Method m) {
  switch (m) {
    case Method::ah_dml: return "ah-dml";
    case Method::g_comp: return "g-comp";
    case Method::cox_marginal: return "cox-marginal";
  }
  return "unknown";
}

Method parse_method(std::string_view text) {
  for (auto m : {Method::ah_dml, Method::g_comp, Method::cox_marginal}) {
    if (to_string(m) == text) return m;
  }
  throw Error(ErrorKind::config, "unknown estimator '" + std::string(text) + "'");
}

std::string_view to_string(Target t) {
  switch (t) {
    case Target::eta0: return "eta0";
    case Target::eta1: return "eta1";
    case Target::theta: return "theta";
  }
  return "unknown";
}

Target parse_target(std::string_view text) {
  for (auto t : {Target::eta0, Target::eta1, Target::theta}) {
    if (to_string(t) == text) return t;
  }
  throw Error(ErrorKind::parse, "unknown target '" + std::string(text) + "'");
}

PlotLayout parse_layout(std::string_view text) {
  if (text == "ratio-grid") return PlotLayout::ratio_grid;
  if (text == "arm-grid") return PlotLayout::arm_grid;
  throw Error(ErrorKind::config, "unknown plot layout '" + std::string(text) + "'");
}

GridSpec GridSpec::desk() {
  GridSpec g;
  for (auto k : {sim::DgmKind::ph, sim::DgmKind::ph_complex, sim::DgmKind::non_ph, sim::DgmKind::cross_a}) {
    g.dgms.push_back(sim::DgmSpec::preset(k));
  }
  g.sizes = {500, 1000};
  g.replicates = 200;
  return g;
}

GridSpec GridSpec::full() {
  GridSpec g = desk();
  g.sizes = {500, 750, 1000, 1250, 1500};
  g.replicates = 1000;
  return g;
}

namespace {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string learner_signature(const est::LearnerConfig& c) {
  std::ostringstream os;
  os << "prop:";
  for (auto b : c.propensity_bases) os << nuisance::to_string(b) << ';';
  os << "event:";
  for (const auto& l : c.event_learners) os << l.to_string() << ';';
  os << "censor:";
  for (const auto& l : c.censor_learners) os << l.to_string() << ';';
  os << "v=" << c.v_folds << " eps=" << csv::format_double(c.epsilon)
     << " eps_s=" << csv::format_double(c.epsilon_s) << " step=" << csv::format_double(c.grid_step)
     << " alpha=" << csv::format_double(c.alpha);
  return os.str();
}

}  // namespace

std::uint64_t GridSpec::fingerprint() const {
  std::ostringstream os;
  for (const auto& d : dgms) os << d.name() << ':' << d.fingerprint() << ';';
  os << "|n:";
  for (auto n : sizes) os << n << ';';
  os << "|tau=" << csv::format_double(tau) << "|est:";
  for (auto m : estimators) os << to_string(m) << ';';
  os << "|seed=" << base_seed << "|k=" << k_folds << "|B=" << bootstrap_reps
     << "|oracle=" << n_oracle << '|' << learner_signature(learners);
  return fnv1a(os.str());
}

namespace {

constexpr Target kTargets[] = {Target::eta0, Target::eta1, Target::theta};

double truth_of(const sim::TruthRecord& t, Target target) {
  switch (target) {
    case Target::eta0: return t.eta0;
    case Target::eta1: return t.eta1;
    case Target::theta: return t.theta;
  }
  return 0.0;
}

est::AhEstimate run_estimator(Method m, const Dataset& data, const GridSpec& grid,
                              std::uint64_t seed) {
  switch (m) {
    case Method::ah_dml:
      return est::ah_dml(data, grid.tau, est::make_plan(data, grid.k_folds, seed), grid.learners);
    case Method::g_comp:
      return est::g_computation(data, grid.tau, grid.learners, grid.bootstrap_reps, seed);
    case Method::cox_marginal:
      return est::cox_marginal(data, grid.tau, grid.bootstrap_reps, seed, false,
                               grid.learners.alpha);
  }
  throw Error(ErrorKind::config, "unhandled estimator");
}

struct TaskKey {
  std::size_t dgm;
  std::size_t size;
  int replicate;
};

std::vector<ResultRow> run_task(const GridSpec& grid, const TaskKey& key,
                                const sim::TruthRecord& truth, const RunOptions& options) {
  const auto& spec = grid.dgms[key.dgm];
  const std::size_t n = grid.sizes[key.size];
  const std::uint64_t rep_seed = grid.base_seed ^ static_cast<std::uint64_t>(key.replicate);
  const Dataset data = sim::sample(spec, n, derive_seed(rep_seed, {spec.fingerprint(), n}));

  std::vector<ResultRow> rows;
  for (std::size_t mi = 0; mi < grid.estimators.size(); ++mi) {
    const Method m = grid.estimators[mi];
    ResultRow base;
    base.dgm = spec.name();
    base.n = n;
    base.estimator = m;
    base.replicate = key.replicate;
    try {
      if (options.inject_failure && options.inject_failure(spec, n, m, key.replicate)) {
        throw Error(ErrorKind::config, "injected failure");
      }
      const std::uint64_t seed =
          derive_seed(rep_seed, {spec.fingerprint(), n, static_cast<std::uint64_t>(m) + 1});
      const auto e = run_estimator(m, data, grid, seed);
      for (Target t : kTargets) {
        ResultRow row = base;
        row.target = t;
        row.truth = truth_of(truth, t);
        if (t == Target::theta) {
          row.estimate = e.theta;
          row.se = e.se;
          row.ci_low = e.ci_low;
          row.ci_high = e.ci_high;
        } else {
          const auto& arm = e.arm[t == Target::eta0 ? 0 : 1];
          row.estimate = arm.summary.ah;
          row.se = arm.se;
          row.ci_low = arm.ci_low;
          row.ci_high = arm.ci_high;
        }
        row.covered = row.ci_low <= row.truth && row.truth <= row.ci_high;
        rows.push_back(std::move(row));
      }
    } catch (const std::exception& ex) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      for (Target t : kTargets) {
        ResultRow row = base;
        row.target = t;
        row.truth = truth_of(truth, t);
        row.estimate = row.se = row.ci_low = row.ci_high = nan;
        row.failed = true;
        row.error = ex.what();
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

json row_to_json(const ResultRow& r) {
  // Doubles go through the shortest round-trip text form so NaN survives.
  return json{{"dgm", r.dgm},
              {"n", r.n},
              {"estimator", std::string(to_string(r.estimator))},
              {"replicate", r.replicate},
              {"target", std::string(to_string(r.target))},
              {"estimate", csv::format_double(r.estimate)},
              {"se", csv::format_double(r.se)},
              {"ci_low", csv::format_double(r.ci_low)},
              {"ci_high", csv::format_double(r.ci_high)},
              {"truth", csv::format_double(r.truth)},
              {"covered", r.covered},
              {"failed", r.failed},
              {"error", r.error}};
}

ResultRow row_from_json(const json& j) {
  ResultRow r;
  r.dgm = j.at("dgm").get<std::string>();
  r.n = j.at("n").get<std::size_t>();
  r.estimator = parse_method(j.at("estimator").get<std::string>());
  r.replicate = j.at("replicate").get<int>();
  r.target = parse_target(j.at("target").get<std::string>());
  r.estimate = csv::parse_double(j.at("estimate").get<std::string>());
  r.se = csv::parse_double(j.at("se").get<std::string>());
  r.ci_low = csv::parse_double(j.at("ci_low").get<std::string>());
  r.ci_high = csv::parse_double(j.at("ci_high").get<std::string>());
  r.truth = csv::parse_double(j.at("truth").get<std::string>());
  r.covered = j.at("covered").get<bool>();
  r.failed = j.at("failed").get<bool>();
  r.error = j.at("error").get<std::string>();
  return r;
}

using TaskId = std::tuple<std::string, std::size_t, int>;

std::map<TaskId, std::vector<ResultRow>> load_checkpoint(const std::string& path,
                                                        std::uint64_t fingerprint) {
  std::map<TaskId, std::vector<ResultRow>> done;
  std::ifstream in(path);
  if (!in) return done;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      // A torn final line from an interrupted writer is dropped.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw Error(ErrorKind::parse, "checkpoint line " + std::to_string(lineno) + " is not JSON");
    }
    const auto type = j.at("type").get<std::string>();
    if (type == "meta") {
      if (j.at("grid").get<std::string>() != std::to_string(fingerprint)) {
        throw Error(ErrorKind::config,
                    "checkpoint '" + path + "' belongs to a different grid configuration");
      }
    } else if (type == "task") {
      std::vector<ResultRow> rows;
      for (const auto& r : j.at("rows")) rows.push_back(row_from_json(r));
      done[{j.at("dgm").get<std::string>(), j.at("n").get<std::size_t>(),
            j.at("replicate").get<int>()}] = std::move(rows);
    }
  }
  return done;
}

}  // namespace

std::vector<ResultRow> run_grid(const GridSpec& grid, const RunOptions& options) {
  if (grid.dgms.empty() || grid.sizes.empty() || grid.estimators.empty()) {
    throw Error(ErrorKind::config, "grid needs at least one dgm, size and estimator");
  }
  if (grid.replicates < 0) throw Error(ErrorKind::config, "replicates must be >= 0");

  std::vector<sim::TruthRecord> truths;
  for (const auto& spec : grid.dgms) {
    truths.push_back(options.truth ? options.truth(spec, grid.tau)
                                   : sim::truth_theta(spec, grid.tau, grid.n_oracle));
  }

  std::vector<TaskKey> tasks;
  for (std::size_t d = 0; d < grid.dgms.size(); ++d) {
    for (std::size_t s = 0; s < grid.sizes.size(); ++s) {
      for (int r = 0; r < grid.replicates; ++r) tasks.push_back({d, s, r});
    }
  }
  std::vector<std::vector<ResultRow>> results(tasks.size());
  std::vector<char> complete(tasks.size(), 0);

  const std::uint64_t fp = grid.fingerprint();
  std::ofstream checkpoint;
  if (!options.checkpoint_path.empty()) {
    const bool exists = std::filesystem::exists(options.checkpoint_path);
    auto done = exists ? load_checkpoint(options.checkpoint_path, fp)
                       : std::map<TaskId, std::vector<ResultRow>>{};
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const auto& k = tasks[t];
      auto it = done.find({grid.dgms[k.dgm].name(), grid.sizes[k.size], k.replicate});
      if (it != done.end()) {
        results[t] = std::move(it->second);
        complete[t] = 1;
      }
    }
    checkpoint.open(options.checkpoint_path, std::ios::app);
    if (!checkpoint) {
      throw Error(ErrorKind::config, "cannot open checkpoint '" + options.checkpoint_path + "'");
    }
    if (!exists) {
      checkpoint << json{{"type", "meta"}, {"grid", std::to_string(fp)}}.dump() << '\n';
      checkpoint.flush();
    }
  }

  std::vector<std::size_t> pending;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (!complete[t]) pending.push_back(t);
  }
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> finished{tasks.size() - pending.size()};
  std::mutex writer;
  auto worker = [&] {
    while (true) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= pending.size()) return;
      const std::size_t t = pending[idx];
      const auto& k = tasks[t];
      results[t] = run_task(grid, k, truths[k.dgm], options);
      std::lock_guard<std::mutex> lock(writer);
      if (checkpoint.is_open()) {
        json rows = json::array();
        for (const auto& r : results[t]) rows.push_back(row_to_json(r));
        checkpoint << json{{"type", "task"},
                           {"dgm", grid.dgms[k.dgm].name()},
                           {"n", grid.sizes[k.size]},
                           {"replicate", k.replicate},
                           {"rows", rows}}
                          .dump()
                   << '\n';
        checkpoint.flush();
      }
      const std::size_t count = ++finished;
      if (options.progress) options.progress(count, tasks.size());
    }
  };
  const int nthreads = std::max(1, std::min<int>(options.workers, static_cast<int>(pending.size())));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Assemble in (dgm, n, estimator, replicate, target) order.
  std::vector<ResultRow> table;
  const std::size_t per_size = static_cast<std::size_t>(grid.replicates);
  for (std::size_t d = 0; d < grid.dgms.size(); ++d) {
    for (std::size_t s = 0; s < grid.sizes.size(); ++s) {
      const std::size_t first = (d * grid.sizes.size() + s) * per_size;
      for (Method m : grid.estimators) {
        for (std::size_t r = 0; r < per_size; ++r) {
          for (const auto& row : results[first + r]) {
            if (row.estimator == m) table.push_back(row);
          }
        }
      }
    }
  }
  return table;
}

std::vector<CellSummary> summarize(const std::vector<ResultRow>& rows) {
  using Key = std::tuple<std::string, std::size_t, Method, Target>;
  std::vector<Key> order;
  std::map<Key, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) {
    Key key{r.dgm, r.n, r.estimator, r.target};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&r);
  }
  std::vector<CellSummary> out;
  for (const auto& key : order) {
    const auto& members = groups[key];
    CellSummary c;
    std::tie(c.dgm, c.n, c.estimator, c.target) = key;
    c.truth = members.front()->truth;
    double sum = 0.0, covered = 0.0;
    std::vector<double> est;
    for (const auto* r : members) {
      if (r->failed || !std::isfinite(r->estimate)) {
        ++c.failures;
        continue;
      }
      est.push_back(r->estimate);
      sum += r->estimate;
      covered += r->covered ? 1.0 : 0.0;
    }
    c.replicates = est.size();
    if (!est.empty()) {
      const double k = static_cast<double>(est.size());
      const double mean = sum / k;
      double ss = 0.0, se2 = 0.0;
      for (double x : est) {
        ss += (x - mean) * (x - mean);
        se2 += (x - c.truth) * (x - c.truth);
      }
      if (c.truth == 0.0) {
        c.percent_bias = mean - c.truth;
        c.bias_is_absolute = true;
      } else {
        c.percent_bias = 100.0 * (mean - c.truth) / std::abs(c.truth);
      }
      c.variance_x100 = est.size() > 1 ? 100.0 * ss / (k - 1.0) : 0.0;
      c.mse_x100 = 100.0 * se2 / k;
      c.coverage = covered / k;
    }
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

constexpr std::string_view kResultHeader =
    "dgm,n,estimator,replicate,target,estimate,se,ci_low,ci_high,truth,covered,failed,error";

std::string sanitize(std::string s) {
  for (auto& ch : s) {
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  }
  return s;
}

}  // namespace

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << kResultHeader << '\n';
  for (const auto& r : rows) {
    out << r.dgm << ',' << r.n << ',' << to_string(r.estimator) << ',' << r.replicate << ','
        << to_string(r.target) << ',' << csv::format_double(r.estimate) << ','
        << csv::format_double(r.se) << ',' << csv::format_double(r.ci_low) << ','
        << csv::format_double(r.ci_high) << ',' << csv::format_double(r.truth) << ','
        << (r.covered ? 1 : 0) << ',' << (r.failed ? 1 : 0) << ',' << sanitize(r.error) << '\n';
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.front() == '#') continue;
    header = line == kResultHeader;
    break;
  }
  if (!header) {
    throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": not a result table header");
  }
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    const auto f = csv::split_line(line);
    if (f.size() != 13) {
      throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": expected 13 fields");
    }
    try {
      ResultRow r;
      r.dgm = f[0];
      r.n = static_cast<std::size_t>(std::stoull(f[1]));
      r.estimator = parse_method(f[2]);
      r.replicate = std::stoi(f[3]);
      r.target = parse_target(f[4]);
      r.estimate = csv::parse_double(f[5]);
      r.se = csv::parse_double(f[6]);
      r.ci_low = csv::parse_double(f[7]);
      r.ci_high = csv::parse_double(f[8]);
      r.truth = csv::parse_double(f[9]);
      r.covered = f[10] == "1";
      r.failed = f[11] == "1";
      r.error = f[12];
      rows.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

std::uint64_t table_fingerprint(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  write_results_csv(os, rows);
  return fnv1a(os.str());
}

void write_summary_csv(std::ostream& out, const std::vector<CellSummary>& cells) {
  out << "dgm,n,estimator,target,percent_bias,bias_is_absolute,variance_x100,mse_x100,coverage,"
         "replicates,failures,truth\n";
  for (const auto& c : cells) {
    out << c.dgm << ',' << c.n << ',' << to_string(c.estimator) << ',' << to_string(c.target)
        << ',' << csv::format_double(c.percent_bias) << ',' << (c.bias_is_absolute ? 1 : 0) << ','
        << csv::format_double(c.variance_x100) << ',' << csv::format_double(c.mse_x100) << ','
        << csv::format_double(c.coverage) << ',' << c.replicates << ',' << c.failures << ','
        << csv::format_double(c.truth) << '\n';
  }
}

namespace {

constexpr std::string_view kPlotHeader = "dgm,n,estimator,target,metric,value";

bool in_layout(Target t, PlotLayout layout) {
  return layout == PlotLayout::ratio_grid ? t == Target::theta : t != Target::theta;
}

}  // namespace

void emit_plotdata(std::ostream& out, const std::vector<CellSummary>& cells, PlotLayout layout) {
  out << kPlotHeader << '\n';
  for (const auto& c : cells) {
    if (!in_layout(c.target, layout)) continue;
    const std::pair<std::string_view, double> metrics[] = {{"percent_bias", c.percent_bias},
                                                           {"variance_x100", c.variance_x100},
                                                           {"mse_x100", c.mse_x100},
                                                           {"coverage", c.coverage}};
    for (const auto& [name, value] : metrics) {
      out << c.dgm << ',' << c.n << ',' << to_string(c.estimator) << ',' << to_string(c.target)
          << ',' << name << ',' << csv::format_double(value) << '\n';
    }
  }
}

std::vector<CellSummary> parse_plotdata(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.front() == '#') continue;
    header = line == kPlotHeader;
    break;
  }
  if (!header) {
    throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": not a plot-data header");
  }
  std::vector<CellSummary> cells;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    const auto f = csv::split_line(line);
    if (f.size() != 6) {
      throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": expected 6 fields");
    }
    const std::size_t n = static_cast<std::size_t>(std::stoull(f[1]));
    const Method m = parse_method(f[2]);
    const Target t = parse_target(f[3]);
    if (cells.empty() || cells.back().dgm != f[0] || cells.back().n != n ||
        cells.back().estimator != m || cells.back().target != t) {
      CellSummary c;
      c.dgm = f[0];
      c.n = n;
      c.estimator = m;
      c.target = t;
      cells.push_back(std::move(c));
    }
    auto& c = cells.back();
    const double v = csv::parse_double(f[5]);
    if (f[4] == "percent_bias") {
      c.percent_bias = v;
    } else if (f[4] == "variance_x100") {
      c.variance_x100 = v;
    } else if (f[4] == "mse_x100") {
      c.mse_x100 = v;
    } else if (f[4] == "coverage") {
      c.coverage = v;
    } else {
      throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": unknown metric '" + f[4] + "'");
    }
  }
  return cells;
}

}  // namespace ahdml::harness
