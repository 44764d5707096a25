#pragma once

// mcml fit | simulate | bench
//   exit 0: success (a fit that hit max_iterations still succeeds)
//   exit 1: invalid input or usage
//   exit 2: numerical failure

#include <mcml/io.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace mcml::cli {

enum class Command { Fit, Simulate, Bench };

struct RunConfig {
  Command command = Command::Fit;
  std::string input_path;
  std::string output_dir = ".";
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::optional<int> replicates;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitNumerical = 2;

namespace detail {

inline io::AppConfig load(const RunConfig& rc) {
  std::optional<io::fs::path> path;
  if (rc.config_path) path = *rc.config_path;
  io::AppConfig c = io::load_config(path, rc.overrides);
  if (rc.seed) {
    c.fit.seed = *rc.seed;
    c.scenario.base_seed = *rc.seed;
  }
  if (rc.replicates) c.scenario.replicates = *rc.replicates;
  c.scenario.fit_config = c.fit;
  c.scenario.validate();
  return c;
}

inline Family family_for(const io::AppConfig& c, const io::Dataset& ds) {
  if (c.family == FamilyKind::PoissonLog) {
    mcml::detail::require(ds.trials.size() == 0,
                          "dataset has a trials column but family.kind is poisson");
    return Family::poisson();
  }
  mcml::detail::require(ds.trials.size() > 0,
                        "family.kind is binomial but the dataset has no trials column");
  return Family::binomial(ds.trials);
}

inline std::string timing_json(double seconds) {
  io::JsonWriter w;
  w.begin_object().field("wall_time_seconds", seconds).end_object();
  return w.str();
}

}  // namespace detail

inline int run_fit(const RunConfig& rc, std::ostream& out) {
  const io::AppConfig c = detail::load(rc);
  const io::Dataset ds = io::read_dataset_csv(rc.input_path);
  const Family family = detail::family_for(c, ds);
  FitConfig fc = c.fit;
  fc.record_trace = true;
  const FitResult res = fit(ds.data, family, fc);
  const io::fs::path dir = rc.output_dir;
  io::write_atomic(dir / "result.json", io::result_json(res, ds.data, c));
  io::write_atomic(dir / "trace.csv", io::trace_csv(res));
  io::write_atomic(dir / "timing.json", detail::timing_json(res.wall_time_seconds));
  out << "fit: " << (res.converged ? "converged" : "not converged") << " after "
      << res.n_iterations << " iterations (m = " << res.m_samples << ")\n";
  for (const auto& w : res.warnings) out << "warning: " << w << '\n';
  return kExitOk;
}

inline int run_simulate(const RunConfig& rc, std::ostream& out) {
  const io::AppConfig c = detail::load(rc);
  const io::fs::path dir = rc.output_dir;
  for (int r = 0; r < c.scenario.replicates; ++r) {
    const SimulatedData sim = simulate_scenario(c.scenario, r);
    char name[32];
    std::snprintf(name, sizeof name, "dataset_%04d.csv", r);
    io::write_atomic(dir / name, io::dataset_csv(sim.data, sim.family));
  }
  out << "simulate: wrote " << c.scenario.replicates << " dataset(s) to " << dir.string() << '\n';
  return kExitOk;
}

inline int run_bench(const RunConfig& rc, std::ostream& out) {
  const io::AppConfig c = detail::load(rc);
  const auto results = run_replications(c.scenario, rc.workers);
  const SummaryRow row = summarize_results(results, truth_of(c.scenario));
  const io::fs::path dir = rc.output_dir;
  io::write_atomic(dir / "summary.csv", io::summary_csv(c.scenario, row));
  io::write_atomic(dir / "replicates.csv", io::replicates_csv(results));
  io::JsonWriter w;
  w.begin_object().field("mean_time_s", row.mean_time_s).key("replicate_time_s").begin_array();
  for (const auto& r : results) w.value(r.wall_time_seconds);
  w.end_array().end_object();
  io::write_atomic(dir / "timing.json", w.str());
  out << "bench: " << row.n_success << " succeeded, " << row.n_failed << " failed, "
      << row.n_trimmed << " trimmed\n";
  return kExitOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Monte Carlo maximum likelihood for spatial GLMMs"};
  app.require_subcommand(1);
  RunConfig rc;

  auto common = [&rc](CLI::App* sub) {
    sub->add_option("--config", rc.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", rc.output_dir, "output directory");
    sub->add_option("--seed", rc.seed, "seed override");
    sub->add_option("--set", rc.overrides, "dotted key=value config override")
        ->allow_extra_args(false);
  };
  CLI::App* fit_cmd = app.add_subcommand("fit", "fit a dataset CSV");
  common(fit_cmd);
  fit_cmd->add_option("--data", rc.input_path, "dataset CSV")->required()->check(CLI::ExistingFile);
  CLI::App* sim_cmd = app.add_subcommand("simulate", "write simulated datasets");
  common(sim_cmd);
  sim_cmd->add_option("--replicates", rc.replicates, "number of datasets")->check(CLI::PositiveNumber);
  CLI::App* bench_cmd = app.add_subcommand("bench", "run a simulation scenario");
  common(bench_cmd);
  bench_cmd->add_option("--replicates", rc.replicates, "number of replicates")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--workers", rc.workers, "worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  }

  try {
    if (app.got_subcommand(fit_cmd)) return run_fit(rc, out);
    if (app.got_subcommand(sim_cmd)) return run_simulate(rc, out);
    return run_bench(rc, out);
  } catch (const InvalidInput& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const NumericalFailure& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const io::fs::filesystem_error& e) {
    err << "file error: " << e.what() << '\n';
    return kExitInvalid;
  }
}

}  // namespace mcml::cli
