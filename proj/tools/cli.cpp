#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ahdml/csv.hpp"
#include "ahdml/error.hpp"
#include "ahdml/estimator.hpp"
#include "ahdml/harness.hpp"
#include "ahdml/rng.hpp"
#include "ahdml/simgen.hpp"

namespace ahdml::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kTruthCacheVersion = 1;

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

json resolved(const RunConfig& c) {
  json j{{"mode", c.mode},
         {"tau", c.taus},
         {"folds", c.folds},
         {"seed", c.seed ? json(*c.seed) : json(nullptr)},
         {"propensity_bases", c.propensity_bases},
         {"event_learners", c.event_learners},
         {"censor_learners", c.censor_learners},
         {"v_folds", c.v_folds},
         {"epsilon", c.epsilon},
         {"epsilon_s", c.epsilon_s},
         {"alpha", c.alpha},
         {"grid_step", c.grid_step}};
  if (c.mode == "estimate") {
    j["data"] = c.data;
    j["comparators"] = c.comparators;
    j["bootstrap"] = c.bootstrap;
  } else if (c.mode == "simulate") {
    j["dgm"] = c.dgms;
    j["sizes"] = c.sizes;
    j["replicates"] = c.replicates;
    j["estimators"] = c.estimators;
    j["bootstrap"] = c.bootstrap;
    j["n_oracle"] = c.n_oracle;
  } else if (c.mode == "truth") {
    j["dgm"] = c.dgms;
    j["n_oracle"] = c.n_oracle;
  } else if (c.mode == "summarize") {
    j["results"] = c.results;
    j["layout"] = c.layout;
  }
  return j;
}

json runtime(const RunConfig& c) {
  return json{{"workers", c.workers},     {"out", c.out},           {"checkpoint", c.checkpoint},
              {"truth_cache", c.truth_cache}, {"plot_out", c.plot_out}, {"eif_out", c.eif_out}};
}

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::config, what); }

// Parses every textual setting so that nothing fails after compute starts.
est::LearnerConfig learner_config(const RunConfig& c) {
  est::LearnerConfig lc;
  lc.propensity_bases.clear();
  for (const auto& b : c.propensity_bases) lc.propensity_bases.push_back(nuisance::parse_basis(b));
  lc.event_learners.clear();
  for (const auto& l : c.event_learners) lc.event_learners.push_back(nuisance::LearnerSpec::parse(l));
  lc.censor_learners.clear();
  for (const auto& l : c.censor_learners) lc.censor_learners.push_back(nuisance::LearnerSpec::parse(l));
  if (lc.propensity_bases.empty()) config_error("propensity-bases must not be empty");
  if (lc.event_learners.empty()) config_error("event-learners must not be empty");
  if (lc.censor_learners.empty()) config_error("censor-learners must not be empty");
  lc.v_folds = c.v_folds;
  lc.epsilon = c.epsilon;
  lc.epsilon_s = c.epsilon_s;
  lc.alpha = c.alpha;
  lc.grid_step = c.grid_step;
  return lc;
}

void validate(const RunConfig& c) {
  if (c.taus.empty()) config_error("at least one tau is required");
  for (double t : c.taus) {
    if (!(t > 0.0) || !std::isfinite(t)) config_error("tau must be positive and finite");
  }
  if (c.folds < 2) config_error("folds must be >= 2");
  if (c.workers < 1) config_error("workers must be >= 1");
  if (c.v_folds < 2) config_error("v-folds must be >= 2");
  if (!(c.epsilon > 0.0 && c.epsilon < 0.5)) config_error("epsilon must lie in (0, 0.5)");
  if (!(c.epsilon_s >= 0.0 && c.epsilon_s < 1.0)) config_error("epsilon-s must lie in [0, 1)");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) config_error("alpha must lie in (0, 1)");
  if (!(c.grid_step >= 0.0)) config_error("grid-step must be >= 0");
  if (c.bootstrap < 0) config_error("bootstrap must be >= 0");
  learner_config(c);
  for (const auto& m : c.comparators) {
    if (harness::parse_method(m) == harness::Method::ah_dml) {
      config_error("ah-dml always runs; list only comparators");
    }
  }

  if (c.mode == "estimate") {
    if (c.data.empty()) config_error("estimate requires --data");
  } else if (c.mode == "simulate" || c.mode == "truth") {
    if (!c.seed) config_error(c.mode + " requires an explicit --seed");
    if (c.dgms.empty()) config_error("at least one dgm is required");
    for (const auto& d : c.dgms) sim::DgmSpec::named(d);
    if (c.n_oracle == 0) config_error("n-oracle must be positive");
    if (c.mode == "simulate") {
      if (c.taus.size() != 1) config_error("simulate takes a single tau");
      if (c.sizes.empty()) config_error("at least one sample size is required");
      if (c.replicates < 1) config_error("replicates must be >= 1");
      if (c.estimators.empty()) config_error("at least one estimator is required");
      for (const auto& e : c.estimators) harness::parse_method(e);
    }
  } else if (c.mode == "summarize") {
    if (c.results.empty()) config_error("summarize requires --results");
    harness::parse_layout(c.layout);
  }
}

// Writes to `path`, or to `fallback` when the path is empty.
template <typename Fn>
void emit(const std::string& path, std::ostream& fallback, Fn&& write) {
  if (path.empty()) {
    write(fallback);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) config_error("cannot open '" + path + "' for writing");
  write(f);
  if (!f) config_error("write to '" + path + "' failed");
}

void csv_preamble(std::ostream& os, const RunConfig& c) {
  os << "# config=" << resolved(c).dump() << '\n';
  os << "# config_fingerprint=" << config_fingerprint(c) << '\n';
}

json arm_json(int a, const est::ArmResult& r) {
  return json{{"arm", a},
              {"cuminc", r.summary.cuminc},
              {"rmst", r.summary.rmst},
              {"ah", r.summary.ah},
              {"se", r.se},
              {"ci_low", r.ci_low},
              {"ci_high", r.ci_high}};
}

json estimate_json(const est::AhEstimate& e) {
  json j{{"comparison", "arm 1 vs arm 0"},
         {"method", e.method},
         {"tau", e.tau},
         {"alpha", e.alpha},
         {"theta", e.theta},
         {"rah", e.rah},
         {"se", e.se},
         {"ci_low", e.ci_low},
         {"ci_high", e.ci_high},
         {"se_available", e.se_available},
         {"arms", json::array({arm_json(0, e.arm[0]), arm_json(1, e.arm[1])})},
         {"warnings", e.warnings},
         {"nuisance_log", e.nuisance_log},
         {"grid", e.grid},
         {"curve0", e.curve[0]},
         {"curve1", e.curve[1]}};
  if (!e.raw_curve[0].empty()) {
    j["raw_curve0"] = e.raw_curve[0];
    j["raw_curve1"] = e.raw_curve[1];
  }
  return j;
}

int cmd_estimate(const RunConfig& c, std::ostream& out) {
  const Dataset data = csv::read_dataset_file(c.data);
  const auto lc = learner_config(c);
  const std::uint64_t seed = c.seed.value_or(0);

  json estimates = json::array();
  std::vector<est::AhEstimate> dml;
  for (double tau : c.taus) {
    try {
      auto e = est::ah_dml(data, tau, est::make_plan(data, c.folds, seed), lc);
      estimates.push_back(estimate_json(e));
      for (const auto& name : c.comparators) {
        const auto m = harness::parse_method(name);
        const std::uint64_t s = derive_seed(seed, {static_cast<std::uint64_t>(m) + 1});
        const auto cmp = m == harness::Method::g_comp
                             ? est::g_computation(data, tau, lc, c.bootstrap, s)
                             : est::cox_marginal(data, tau, c.bootstrap, s, false, c.alpha);
        estimates.push_back(estimate_json(cmp));
      }
      dml.push_back(std::move(e));
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::degenerate_estimand) throw;
      std::string msg = std::string(err.what()) + " (tau=" + csv::format_double(tau) + ")";
      if (msg.find("smaller tau") == std::string::npos) {
        msg += "; reliable estimation needs adequate follow-up, try a smaller tau";
      }
      throw Error(err.kind(), msg);
    }
  }

  if (!c.eif_out.empty()) {
    emit(c.eif_out, out, [&](std::ostream& os) {
      csv_preamble(os, c);
      os << "tau,unit_id,eif_arm0,eif_arm1,theta_eif\n";
      for (const auto& e : dml) {
        for (std::size_t i = 0; i < e.eif_values.size(); ++i) {
          os << csv::format_double(e.tau) << ',' << i << ',' << csv::format_double(e.arm_eif[0][i])
             << ',' << csv::format_double(e.arm_eif[1][i]) << ','
             << csv::format_double(e.eif_values[i]) << '\n';
        }
      }
    });
  }

  const json doc{{"config", resolved(c)},
                 {"runtime", runtime(c)},
                 {"config_fingerprint", config_fingerprint(c)},
                 {"estimates", estimates}};
  emit(c.out, out, [&](std::ostream& os) { os << doc.dump(2) << '\n'; });
  return 0;
}

json truth_to_json(const sim::TruthRecord& t) {
  auto s = [](double x) { return csv::format_double(x); };
  return json{{"tau", s(t.tau)},         {"eta0", s(t.eta0)},   {"eta1", s(t.eta1)},
              {"theta", s(t.theta)},     {"mc_se_eta0", s(t.mc_se_eta0)},
              {"mc_se_eta1", s(t.mc_se_eta1)}, {"mc_se_theta", s(t.mc_se_theta)},
              {"f0", s(t.f0)},           {"f1", s(t.f1)},       {"r0", s(t.r0)},
              {"r1", s(t.r1)},           {"n_oracle", t.n_oracle}, {"seed", t.seed}};
}

sim::TruthRecord truth_from_json(const json& j) {
  auto d = [&](const char* k) { return csv::parse_double(j.at(k).get<std::string>()); };
  sim::TruthRecord t;
  t.tau = d("tau");
  t.eta0 = d("eta0");
  t.eta1 = d("eta1");
  t.theta = d("theta");
  t.mc_se_eta0 = d("mc_se_eta0");
  t.mc_se_eta1 = d("mc_se_eta1");
  t.mc_se_theta = d("mc_se_theta");
  t.f0 = d("f0");
  t.f1 = d("f1");
  t.r0 = d("r0");
  t.r1 = d("r1");
  t.n_oracle = j.at("n_oracle").get<std::uint64_t>();
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

// On-disk truth records keyed by (dgm fingerprint, tau, n_oracle). Stale
// or unreadable entries are recomputed and a notice goes to `err`.
class TruthCache {
 public:
  TruthCache(std::string dir, std::uint64_t n_oracle, std::uint64_t seed, int workers,
             std::ostream& err)
      : dir_(std::move(dir)), n_oracle_(n_oracle), seed_(seed), workers_(workers), err_(err) {}

  sim::TruthRecord get(const sim::DgmSpec& spec, double tau) {
    std::lock_guard lock(mu_);
    const fs::path path = fs::path(dir_) / ("truth-" + hex64(spec.fingerprint()) + "-" +
                                            csv::format_double(tau) + "-" +
                                            std::to_string(n_oracle_) + ".json");
    if (fs::exists(path)) {
      std::string reason;
      try {
        std::ifstream in(path);
        const json j = json::parse(in);
        if (j.at("version").get<int>() != kTruthCacheVersion) {
          reason = "version mismatch";
        } else if (j.at("record").at("seed").get<std::uint64_t>() != seed_) {
          reason = "seed mismatch";
        } else {
          last_cached_ = true;
          return truth_from_json(j.at("record"));
        }
      } catch (const std::exception& e) {
        reason = std::string("unreadable: ") + e.what();
      }
      err_ << "notice: truth cache entry " << path.string() << " " << reason << ", recomputing\n";
    }
    last_cached_ = false;
    const auto t = sim::truth_theta(spec, tau, n_oracle_, seed_, workers_);
    std::error_code ec;
    fs::create_directories(dir_, ec);
    const json j{{"version", kTruthCacheVersion},
                 {"dgm", spec.name()},
                 {"dgm_fingerprint", hex64(spec.fingerprint())},
                 {"record", truth_to_json(t)}};
    const fs::path tmp = path.string() + ".tmp";
    {
      std::ofstream f(tmp);
      f << j.dump(2) << '\n';
    }
    fs::rename(tmp, path, ec);
    if (ec) err_ << "notice: could not write truth cache " << path.string() << "\n";
    return t;
  }

  bool last_cached() const { return last_cached_; }

 private:
  std::string dir_;
  std::uint64_t n_oracle_;
  std::uint64_t seed_;
  int workers_;
  std::ostream& err_;
  std::mutex mu_;
  bool last_cached_ = false;
};

int cmd_truth(const RunConfig& c, std::ostream& out, std::ostream& err) {
  TruthCache cache(c.truth_cache, c.n_oracle, *c.seed, c.workers, err);
  json records = json::array();
  for (const auto& name : c.dgms) {
    const auto spec = sim::DgmSpec::named(name);
    for (double tau : c.taus) {
      const auto t = cache.get(spec, tau);
      if (cache.last_cached()) err << "notice: " << name << " tau=" << tau << " served from cache\n";
      json r = truth_to_json(t);
      r["dgm"] = name;
      r["dgm_fingerprint"] = hex64(spec.fingerprint());
      records.push_back(std::move(r));
    }
  }
  const json doc{{"config", resolved(c)},
                 {"runtime", runtime(c)},
                 {"config_fingerprint", config_fingerprint(c)},
                 {"truth", records}};
  emit(c.out, out, [&](std::ostream& os) { os << doc.dump(2) << '\n'; });
  return 0;
}

int cmd_simulate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  harness::GridSpec grid;
  grid.dgms.clear();
  for (const auto& d : c.dgms) grid.dgms.push_back(sim::DgmSpec::named(d));
  grid.sizes = c.sizes;
  grid.replicates = c.replicates;
  grid.tau = c.taus.front();
  grid.estimators.clear();
  for (const auto& e : c.estimators) grid.estimators.push_back(harness::parse_method(e));
  grid.base_seed = *c.seed;
  grid.k_folds = c.folds;
  grid.bootstrap_reps = c.bootstrap;
  grid.n_oracle = c.n_oracle;
  grid.learners = learner_config(c);

  TruthCache cache(c.truth_cache, c.n_oracle, *c.seed, c.workers, err);
  harness::RunOptions opts;
  opts.workers = c.workers;
  opts.checkpoint_path = c.checkpoint;
  if (opts.checkpoint_path.empty() && !c.out.empty()) opts.checkpoint_path = c.out + ".ckpt";
  opts.truth = [&](const sim::DgmSpec& spec, double tau) { return cache.get(spec, tau); };

  const auto rows = harness::run_grid(grid, opts);
  emit(c.out, out, [&](std::ostream& os) {
    csv_preamble(os, c);
    harness::write_results_csv(os, rows);
  });
  return 0;
}

int cmd_summarize(const RunConfig& c, std::ostream& out) {
  std::ifstream in(c.results);
  if (!in) throw Error(ErrorKind::parse, "cannot open '" + c.results + "'");
  std::string source_fp;
  {
    std::string line;
    std::streampos start = in.tellg();
    while (std::getline(in, line) && !line.empty() && line.front() == '#') {
      constexpr std::string_view key = "# config_fingerprint=";
      if (line.starts_with(key)) source_fp = line.substr(key.size());
    }
    in.clear();
    in.seekg(start);
  }
  const auto cells = harness::summarize(harness::read_results_csv(in));

  auto preamble = [&](std::ostream& os) {
    csv_preamble(os, c);
    if (!source_fp.empty()) os << "# source_config_fingerprint=" << source_fp << '\n';
  };
  emit(c.out, out, [&](std::ostream& os) {
    preamble(os);
    harness::write_summary_csv(os, cells);
  });
  if (!c.plot_out.empty()) {
    emit(c.plot_out, out, [&](std::ostream& os) {
      preamble(os);
      harness::emit_plotdata(os, cells, harness::parse_layout(c.layout));
    });
  }
  return 0;
}

void write_error(std::ostream& err, std::string_view kind, const std::string& message) {
  err << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

std::string config_json(const RunConfig& config) { return resolved(config).dump(); }

std::string config_fingerprint(const RunConfig& config) {
  return hex64(fnv1a(config_json(config)));
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig c;
  std::uint64_t seed = 0;

  CLI::App app{"Average-hazard estimation and simulation"};
  app.name("ahdml");
  app.set_config("--config", "", "INI file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);

  app.add_option("--data", c.data, "Input CSV (w_1..w_d,a,u,delta)");
  app.add_option("--tau", c.taus, "Horizon(s)")->delimiter(',');
  app.add_option("--folds", c.folds, "Cross-fitting folds");
  auto* seed_opt = app.add_option("--seed", seed, "Random seed");
  app.add_option("--workers", c.workers, "Worker threads");
  app.add_option("--out", c.out, "Output path (stdout when empty)");
  app.add_option("--dgm", c.dgms, "Simulation DGMs")->delimiter(',');
  app.add_option("--sizes", c.sizes, "Simulation sample sizes")->delimiter(',');
  app.add_option("--replicates", c.replicates, "Replicates per cell");
  app.add_option("--estimators", c.estimators, "Estimators in simulate")->delimiter(',');
  app.add_option("--comparators", c.comparators, "Comparators in estimate")->delimiter(',');
  app.add_option("--bootstrap", c.bootstrap, "Bootstrap resamples for plug-in methods");
  app.add_option("--n-oracle", c.n_oracle, "Covariate draws for truth");
  app.add_option("--propensity-bases", c.propensity_bases)->delimiter(',');
  app.add_option("--event-learners", c.event_learners)->delimiter(',');
  app.add_option("--censor-learners", c.censor_learners)->delimiter(',');
  app.add_option("--v-folds", c.v_folds, "Inner folds for learner selection");
  app.add_option("--epsilon", c.epsilon, "Propensity truncation");
  app.add_option("--epsilon-s", c.epsilon_s, "Survival floor");
  app.add_option("--alpha", c.alpha, "CI level is 1 - alpha");
  app.add_option("--grid-step", c.grid_step, "Evaluation grid refinement (0 disables)");
  app.add_option("--checkpoint", c.checkpoint, "Simulation checkpoint (default: <out>.ckpt)");
  app.add_option("--truth-cache", c.truth_cache, "Truth cache directory");
  app.add_option("--results", c.results, "Result table for summarize");
  app.add_option("--layout", c.layout, "Plot layout: ratio-grid or arm-grid");
  app.add_option("--plot-out", c.plot_out, "Plot-data CSV path");
  app.add_option("--eif-out", c.eif_out, "Per-unit EIF CSV path");

  for (const char* name : {"estimate", "simulate", "truth", "summarize"}) {
    app.add_subcommand(name)->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    write_error(err, "config", e.what());
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  c.mode = app.get_subcommands().front()->get_name();
  if (seed_opt->count() > 0) c.seed = seed;

  try {
    validate(c);
    if (c.mode == "estimate") return cmd_estimate(c, out);
    if (c.mode == "simulate") return cmd_simulate(c, out, err);
    if (c.mode == "truth") return cmd_truth(c, out, err);
    return cmd_summarize(c, out);
  } catch (const Error& e) {
    write_error(err, to_string(e.kind()), e.what());
    return 1;
  } catch (const std::exception& e) {
    write_error(err, "internal", e.what());
    return 3;
  }
}

}  // namespace ahdml::cli
