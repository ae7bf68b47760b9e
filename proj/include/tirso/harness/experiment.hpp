#pragma once

// Monte Carlo experiment runner: configuration, presets, per-run data
// generation, estimator sweeps, ensemble metrics and artifact output.

#include <tirso/dense.hpp>
#include <tirso/estimators.hpp>
#include <tirso/metrics.hpp>
#include <tirso/model.hpp>
#include <tirso/regret.hpp>
#include <tirso/harness/io.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tirso {

enum class Scenario { Stationary, SmoothTransition, Drifting, RealCsv };
enum class Algorithm { Tiso, Tirso, Osgd, PgdTirso };
enum class RegretMode { None, Static, Dynamic };

std::string to_string(Scenario s);
std::string to_string(Algorithm a);
std::string to_string(RegretMode m);

struct ScheduleSpec {
  enum class Kind { Constant, Lipschitz, Diminishing, Doubling, Adaptive };
  Kind kind = Kind::Adaptive;
  /// Constant: alpha. Lipschitz: c in alpha = c / L, with L the largest
  /// lambda_max(Phi[t]) of the run for the recursive-loss algorithms and the
  /// largest ||g[t]||^2 for TISO and OSGD. Diminishing: beta_tilde. Doubling and
  /// adaptive: c. For diminishing and doubling a value <= 0 takes the constant
  /// from the run's certificate (beta_tilde, resp. c = sqrt(t0) / L).
  double value = 0.25;
  /// First doubling window.
  Index t0 = 8;

  std::string label() const;
  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

struct ModelSpec {
  Index n_nodes = 12;
  Index order = 2;
  double edge_prob = 0.2;
  double noise_std = 0.005;
  double target_radius = 0.9;
  double kappa = 0.99;
  Index t_break = 1000;
  double drift_std = 1e-3;
  double drift_radius_cap = 0.95;
  Index burn_in = 200;
};

struct EstimatorSpec {
  std::vector<Algorithm> algorithms{Algorithm::Tiso, Algorithm::Tirso};
  std::vector<double> lambdas{1e-6};
  std::vector<double> forgetting{0.99};
  double init_phi_scale = 0.01;
  std::vector<ScheduleSpec> schedules{ScheduleSpec{}};
  Index pgd_iterations = 5;
};

struct RunSpec {
  Index length = 3000;
  Index runs = 30;
  std::uint64_t seed = 1;
  /// Averaging window [T1, T2]; negative values count from the end. Defaults
  /// are T / 3 and T - 1.
  std::optional<Index> window_first;
  std::optional<Index> window_last;
  /// 0 uses every hardware thread.
  Index workers = 0;
  /// Group-norm snapshots for the detection metrics, taken inside the window.
  Index snapshot_stride = 10;
  std::vector<Index> horizons{1};
  RegretMode regret = RegretMode::None;
};

struct DataSpec {
  std::string path;
  double sampling_interval = 10.0;
  std::vector<std::string> columns;
  std::string time_column;
};

struct OutputSpec {
  std::string directory;
  /// Per-run rows of metrics.csv keep every metric_stride-th step plus the last.
  Index metric_stride = 10;
  Index iterate_stride = 10;
  bool iterates = false;
  bool checkpoints = false;
  bool graphs = true;
  /// "none", "first" or "all" runs' series and truth sidecars.
  std::string series = "first";
  /// Subset of {nmsd, nmse, detection} written to metrics.csv.
  std::vector<std::string> metrics{"nmsd", "nmse", "detection"};
};

struct ExperimentConfig {
  std::string name = "custom";
  bool desk_scale = false;
  Scenario scenario = Scenario::Stationary;
  ModelSpec model;
  EstimatorSpec estimators;
  RunSpec run;
  DataSpec data;
  OutputSpec output;

  Index window_first() const;
  Index window_last() const;
  bool has_truth() const { return scenario != Scenario::RealCsv; }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

io::Json to_json(const ExperimentConfig& cfg);
/// Keys missing from `j` keep the value in `base`; unknown keys are errors.
ExperimentConfig config_from_json(const io::Json& j, const ExperimentConfig& base = {});
/// Applies `dotted.key=value`; the value is parsed as JSON, else taken as a string.
void apply_override(io::Json& j, const std::string& assignment);

std::vector<std::string> preset_names();
/// Throws std::invalid_argument listing the known presets for other names.
ExperimentConfig preset(const std::string& name, bool desk_scale = false);

struct Variant {
  Algorithm algorithm = Algorithm::Tirso;
  double lambda = 0;
  double forgetting = 0.99;
  ScheduleSpec schedule;
  std::string label;
};

/// Cross product algorithms x lambdas x forgetting x schedules, in that nesting.
std::vector<Variant> expand_variants(const ExperimentConfig& cfg);

/// Data of one Monte Carlo run. `truth` holds the N x NP regression matrix
/// per sample, or a single entry for a constant process; empty for real data.
struct RunData {
  std::uint64_t seed = 0;
  MatrixXd samples;
  std::optional<AdjacencyMask> mask;
  std::vector<MatrixXd> truth;
  bool unstable = false;

  const MatrixXd& truth_at(Index t) const { return truth.size() == 1 ? truth.front() : truth[static_cast<std::size_t>(t)]; }
};

std::uint64_t run_seed(const ExperimentConfig& cfg, Index run);
RunData generate_run_data(const ExperimentConfig& cfg, Index run);
/// Real-data scenario: ingests data.path and truncates to run.length rows.
RunData load_real_data(const ExperimentConfig& cfg);

/// Resolves a schedule for one run; `cert` is needed by the certificate-driven kinds.
StepSizeSchedule resolve_schedule(const ScheduleSpec& spec, const BoundsCertificate* cert, Algorithm algorithm);
bool needs_certificate(const ScheduleSpec& spec);
EstimatorConfig estimator_config(const ExperimentConfig& cfg, const Variant& v, const StepSizeSchedule& schedule);

struct BoundRecord {
  std::string check;
  Index run = 0;
  /// -1 for checks on the node sum.
  Index node = -1;
  BoundCheck result;
};

struct DetectionSummary {
  bool available = false;
  ThresholdCalibration equal_rates;
  double false_alarm = kUndefined;
  double miss = kUndefined;
  double eier = kUndefined;
  double false_alarm_at_zero = kUndefined;
  double miss_at_zero = kUndefined;
  double eier_at_zero = kUndefined;
  BalancedThreshold balanced;
  /// (delta, avg P_FA, avg P_MD), delta increasing.
  std::vector<std::array<double, 3>> roc;
  /// Ensemble rates per slot at the equal-rates threshold and at 0.
  DetectionRates at_delta;
  DetectionRates at_zero;
};

struct TransitionSummary {
  bool available = false;
  double pre_break = kUndefined;
  Index peak_t = -1;
  double peak = kUndefined;
  /// First t after the peak with NMSD <= peak / 2; -1 if never.
  Index recovery_t = -1;
};

struct VariantSummary {
  Variant variant;
  Index completed_runs = 0;
  /// Ensemble NMSD per sample; empty without ground truth.
  VectorXd nmsd;
  double nmsd_window = kUndefined;
  double nmsd_final = kUndefined;
  /// First t with NMSD <= NMSD[0] / 2; -1 if never.
  Index nmsd_half_time = -1;
  /// Per horizon: ensemble NMSE indexed by target time, its window mean and
  /// the per-variable window NMSE.
  std::vector<VectorXd> nmse;
  std::vector<double> nmse_window;
  std::vector<VectorXd> nmse_per_variable;
  DetectionSummary detection;
  TransitionSummary transition;
  double zero_groups_mean = kUndefined;
  std::vector<BoundRecord> bound_checks;
  io::Json regret = io::Json::array();
  Index degenerate_steps = 0;
  Index approximate_eigen = 0;
};

struct Attrition {
  Index run = 0;
  std::string variant;
  std::string message;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<std::uint64_t> seeds;
  std::vector<VariantSummary> variants;
  /// Genie predictor NMSE per horizon (true coefficients); empty for real data.
  std::vector<VectorXd> genie_nmse;
  std::vector<double> genie_nmse_window;
  std::vector<Attrition> attrition;
  io::Json summary;
  std::optional<std::filesystem::path> directory;

  const VariantSummary& find(Algorithm a, double lambda, double forgetting) const;
  /// Variant of algorithm `a` minimising `key` in {"nmsd_window", "eier_at_zero", "nmse_window"}.
  const VariantSummary* best(Algorithm a, const std::string& key) const;
  /// Certified bound checks that failed, across all variants.
  std::vector<BoundRecord> failed_checks() const;
};

/// Runs the experiment. Artifacts are written when cfg.output.directory is
/// set (or `directory` overrides it).
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::optional<std::filesystem::path> directory = std::nullopt);

/// Re-runs every variant on the stored series of an artifact directory with
/// regret tracking and returns the bound-check verdicts.
std::vector<BoundRecord> check_bounds_from_artifacts(const std::filesystem::path& dir, io::Json* report = nullptr);

/// Recomputes NMSD and detection metrics from stored iterates and truth;
/// the returned JSON is also written to metrics_recomputed.json.
io::Json recompute_metrics(const std::filesystem::path& dir);

}  // namespace tirso
