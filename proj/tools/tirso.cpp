// Command-line front end for the experiment harness.
//
//   tirso run --preset fig2 --desk-scale --out results/fig2
//   tirso run experiment.json --set run.runs=5 --set estimators.lambdas=[1e-4]
//   tirso simulate --preset fig2 --count 3 --out data/
//   tirso ingest sensors.csv --interval 10 --out sensors_uniform.csv
//   tirso metrics results/fig2
//   tirso check-bounds results/fig2
//
// Exit status: 0 on success, 1 when a run fails or a certified bound check
// does not hold, 2 on usage or configuration errors.

#include <tirso/harness/experiment.hpp>
#include <tirso/harness/ingest.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>

namespace fs = std::filesystem;
using namespace tirso;
using io::Json;

namespace {

struct ConfigArgs {
  std::string file;
  std::string preset_name;
  bool desk_scale = false;
  std::vector<std::string> overrides;
  std::optional<Index> runs, length, workers;
  std::optional<std::uint64_t> seed;
  std::string regret;

  void attach(CLI::App* app) {
    app->add_option("config", file, "JSON experiment config")->check(CLI::ExistingFile);
    app->add_option("--preset", preset_name, "Start from a named preset");
    app->add_flag("--desk-scale", desk_scale, "Use the reduced desk-scale preset");
    app->add_option("--set", overrides, "Override a config field, e.g. --set model.n_nodes=8")->take_all();
    app->add_option("--runs", runs, "Monte Carlo runs");
    app->add_option("--length", length, "Samples per run");
    app->add_option("--seed", seed, "Master seed");
    app->add_option("--workers", workers, "Worker threads (0 = all cores)");
    app->add_option("--regret", regret, "Regret tracking")->check(CLI::IsMember({"none", "static", "dynamic"}));
  }

  ExperimentConfig resolve() const {
    ExperimentConfig base;
    if (!preset_name.empty()) base = preset(preset_name, desk_scale);
    Json j = to_json(base);
    if (!file.empty()) j = to_json(config_from_json(io::read_json(file), base));
    if (runs) j["run"]["runs"] = *runs;
    if (length) j["run"]["length"] = *length;
    if (seed) j["run"]["seed"] = *seed;
    if (workers) j["run"]["workers"] = *workers;
    if (!regret.empty()) j["run"]["regret"] = regret;
    for (const auto& o : overrides) apply_override(j, o);
    ExperimentConfig cfg = config_from_json(j);
    cfg.validate();
    return cfg;
  }
};

fs::path output_directory(const std::string& flag, const ExperimentConfig& cfg) {
  if (!flag.empty()) return flag;
  if (!cfg.output.directory.empty()) return cfg.output.directory;
  if (const char* env = std::getenv("TIRSO_OUT_DIR")) return fs::path(env) / cfg.name;
  return fs::path("results") / cfg.name;
}

std::string fmt(double v) { return std::isfinite(v) ? io::format_double(v) : "-"; }

void print_summary(const ExperimentResult& r) {
  std::printf("%-48s %5s %12s %12s %12s %12s\n", "variant", "runs", "nmsd", "eier", "eier@0", "nmse");
  for (const auto& v : r.variants)
    std::printf("%-48s %5ld %12s %12s %12s %12s\n", v.variant.label.c_str(), static_cast<long>(v.completed_runs), fmt(v.nmsd_window).c_str(),
                fmt(v.detection.eier).c_str(), fmt(v.detection.eier_at_zero).c_str(), fmt(v.nmse_window.empty() ? kUndefined : v.nmse_window.front()).c_str());
  for (const auto& a : r.attrition)
    std::fprintf(stderr, "run %ld%s%s failed: %s\n", static_cast<long>(a.run), a.variant.empty() ? "" : " ", a.variant.c_str(), a.message.c_str());
}

int report_checks(const std::vector<BoundRecord>& checks) {
  Index certified = 0, failed = 0;
  for (const auto& b : checks) {
    if (!b.result.certified) continue;
    ++certified;
    if (b.result.passed) continue;
    ++failed;
    std::printf("FAIL %s run %ld node %ld: %s > %s %s\n", b.check.c_str(), static_cast<long>(b.run), static_cast<long>(b.node), fmt(b.result.lhs).c_str(),
                fmt(b.result.rhs).c_str(), b.result.note.c_str());
  }
  std::printf("bound checks: %ld certified, %ld failed, %ld not certified\n", static_cast<long>(certified), static_cast<long>(failed),
              static_cast<long>(checks.size()) - static_cast<long>(certified));
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online sparse VAR topology identification experiments"};
  app.require_subcommand(1);

  ConfigArgs run_args;
  std::string run_out;
  bool run_check = false, list = false;
  auto* run = app.add_subcommand("run", "Run an experiment config or preset");
  run_args.attach(run);
  run->add_option("-o,--out", run_out, "Artifact directory (default $TIRSO_OUT_DIR/<name> or results/<name>)");
  run->add_flag("--check-bounds", run_check, "Exit 1 if a certified bound check fails");
  run->add_flag("--list-presets", list, "Print the preset names and exit");

  ConfigArgs sim_args;
  std::string sim_out = ".";
  Index sim_count = 1;
  auto* simulate = app.add_subcommand("simulate", "Write synthetic series and ground truth");
  sim_args.attach(simulate);
  simulate->add_option("-o,--out", sim_out, "Output directory");
  simulate->add_option("--count", sim_count, "Number of runs to emit")->check(CLI::PositiveNumber);

  std::string ingest_in, ingest_out, time_column;
  double interval = 10;
  std::vector<std::string> columns;
  auto* ingest = app.add_subcommand("ingest", "Resample and normalise a wide CSV");
  ingest->add_option("input", ingest_in, "CSV with a timestamp column and one column per series")->required()->check(CLI::ExistingFile);
  ingest->add_option("-o,--out", ingest_out, "Output series CSV")->required();
  ingest->add_option("--interval", interval, "Sampling interval of the grid");
  ingest->add_option("--columns", columns, "Series to keep")->delimiter(',');
  ingest->add_option("--time-column", time_column, "Timestamp column (default: first)");

  std::string metrics_dir;
  auto* metrics = app.add_subcommand("metrics", "Recompute metrics from stored iterates");
  metrics->add_option("directory", metrics_dir, "Artifact directory")->required()->check(CLI::ExistingDirectory);

  std::string bounds_dir, bounds_report;
  auto* bounds = app.add_subcommand("check-bounds", "Evaluate regret and tracking bounds on stored series");
  bounds->add_option("directory", bounds_dir, "Artifact directory")->required()->check(CLI::ExistingDirectory);
  bounds->add_option("--report", bounds_report, "Write the full report as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) {
      if (list) {
        for (const auto& n : preset_names()) std::printf("%s\n", n.c_str());
        return 0;
      }
      ExperimentConfig cfg = run_args.resolve();
      const fs::path dir = output_directory(run_out, cfg);
      const ExperimentResult r = run_experiment(cfg, dir);
      print_summary(r);
      std::printf("artifacts: %s\n", dir.string().c_str());
      int status = r.attrition.empty() ? 0 : 1;
      if (run_check) {
        std::vector<BoundRecord> all;
        for (const auto& v : r.variants) all.insert(all.end(), v.bound_checks.begin(), v.bound_checks.end());
        status = std::max(status, report_checks(all));
      }
      return status;
    }
    if (*simulate) {
      const ExperimentConfig cfg = sim_args.resolve();
      if (!cfg.has_truth()) throw std::invalid_argument("simulate needs a synthetic scenario");
      const fs::path dir = sim_out;
      for (Index r = 0; r < sim_count; ++r) {
        const RunData d = generate_run_data(cfg, r);
        char name[32];
        std::snprintf(name, sizeof name, "run_%04ld", static_cast<long>(r));
        io::write_series_csv(dir / (std::string(name) + ".csv"), d.samples);
        const io::GroundTruth g{cfg.model.noise_std, d.seed, *d.mask, VarParameters<double>::from_regression_matrix(d.truth_at(0), cfg.model.order)};
        io::write_json(dir / (std::string(name) + "_truth.json"), io::truth_to_json(g));
        if (d.unstable) std::fprintf(stderr, "%s: simulated process is unstable\n", name);
      }
      return 0;
    }
    if (*ingest) {
      IngestOptions opts;
      opts.sampling_interval = interval;
      opts.columns = columns;
      opts.time_column = time_column;
      const IngestedSeries s = ingest_csv(ingest_in, opts);
      io::write_series_csv(ingest_out, s.samples);
      Json meta = {{"source", s.source}, {"names", s.names}, {"sampling_interval", s.sampling_interval}, {"start", s.grid(0)}, {"samples", s.samples.rows()}};
      meta["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
      meta["std"] = std::vector<double>(s.std.data(), s.std.data() + s.std.size());
      fs::path sidecar = ingest_out;
      sidecar.replace_extension(".json");
      io::write_json(sidecar, meta);
      std::printf("%ld samples x %zu series -> %s\n", static_cast<long>(s.samples.rows()), s.names.size(), ingest_out.c_str());
      return 0;
    }
    if (*metrics) {
      const Json j = recompute_metrics(metrics_dir);
      for (const auto& [label, m] : j.items())
        std::printf("%-48s nmsd %s\n", label.c_str(), m.contains("nmsd_window_mean") ? m["nmsd_window_mean"].dump().c_str() : "-");
      return 0;
    }
    if (*bounds) {
      Json report;
      const auto checks = check_bounds_from_artifacts(bounds_dir, &report);
      if (!bounds_report.empty()) io::write_json(bounds_report, report);
      return report_checks(checks);
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
