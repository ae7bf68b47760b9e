#include <tirso/harness/experiment.hpp>
#include <tirso/harness/ingest.hpp>

#include <tirso/graph.hpp>
#include <tirso/oracle.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <thread>
#include <variant>

namespace tirso {

namespace fs = std::filesystem;
using io::Json;

namespace {

constexpr int kFormatVersion = 1;

std::string run_name(Index run) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "run_%04ld", static_cast<long>(run));
  return buf;
}

Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json vector_json(const VectorXd& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(finite_or_null(v(i)));
  return out;
}

Json certificate_json(const BoundsCertificate& c) {
  return {{"b_y", c.b_y},
          {"l_max", c.l_max},
          {"l_instant", c.l_instant},
          {"l_cap", c.l_cap},
          {"beta_tilde", c.beta_tilde},
          {"beta", c.beta},
          {"kappa_phi", finite_or_null(c.kappa_phi)},
          {"b_a", finite_or_null(c.b_a)},
          {"b_a_tilde", finite_or_null(c.b_a_tilde)},
          {"g_tilde", finite_or_null(c.g_tilde)},
          {"lipschitz_within_cap", c.lipschitz_within_cap},
          {"recursive_eigen_positive", c.recursive_eigen_positive},
          {"sample_eigen_positive", c.sample_eigen_positive}};
}

Json bound_json(const BoundRecord& b) {
  return {{"check", b.check},
          {"run", b.run},
          {"node", b.node},
          {"certified", b.result.certified},
          {"passed", b.result.passed},
          {"lhs", finite_or_null(b.result.lhs)},
          {"rhs", finite_or_null(b.result.rhs)},
          {"note", b.result.note}};
}

// Row-major flattening of an N x NP matrix, prefixed by t.
void append_flat_row(MatrixXd& rows, Index r, Index t, const MatrixXd& m) {
  rows(r, 0) = static_cast<double>(t);
  Index k = 1;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) rows(r, k++) = m(i, j);
}

MatrixXd unflatten(const MatrixXd& rows, Index r, Index n_rows, Index n_cols) {
  MatrixXd m(n_rows, n_cols);
  Index k = 1;
  for (Index i = 0; i < n_rows; ++i)
    for (Index j = 0; j < n_cols; ++j) m(i, j) = rows(r, k++);
  return m;
}

bool is_recursive(Algorithm a) { return a == Algorithm::Tirso || a == Algorithm::PgdTirso; }

using AnyEstimator = std::variant<Tiso<double>, Tirso<double>, Osgd<double>, PgdTirso<double>>;

AnyEstimator make_estimator(Algorithm a, const EstimatorConfig& cfg, Index pgd_iterations) {
  switch (a) {
    case Algorithm::Tiso:
      return Tiso<double>(cfg);
    case Algorithm::Tirso:
      return Tirso<double>(cfg);
    case Algorithm::Osgd:
      return Osgd<double>(cfg);
    case Algorithm::PgdTirso:
      return PgdTirso<double>(cfg, pgd_iterations);
  }
  throw std::logic_error("unhandled algorithm");
}

struct VariantRun {
  bool ok = true;
  std::string error;
  VectorXd nmsd_num, nmsd_den;
  std::vector<VectorXd> nmse_num, nmse_den;
  std::vector<VectorXd> var_err, var_energy;
  std::vector<NormSample> norms;
  Index zero_groups = 0;
  MatrixXd final_coeffs;
  std::optional<TirsoState<double>> final_state;
  EstimatorConfig estimator;
  std::vector<std::pair<Index, MatrixXd>> iterates;
  std::vector<BoundRecord> checks;
  Json regret;
  Index degenerate = 0, approximate = 0;
};

struct RunOutput {
  bool ok = true;
  std::string error;
  std::uint64_t seed = 0;
  std::optional<MatrixXd> samples;
  std::optional<AdjacencyMask> mask;
  MatrixXd truth_first, truth_last;
  bool time_varying = false;
  std::vector<std::pair<Index, MatrixXd>> truth_iterates;
  std::vector<std::pair<double, BoundsCertificate>> certificates;
  std::vector<VariantRun> variants;
  std::vector<VectorXd> genie_num, genie_den;
};

struct StreamOptions {
  bool keep_state = false;
  bool keep_iterates = false;
  RegretMode regret = RegretMode::None;
};

// Streams one run's data through one variant and collects every per-run metric.
VariantRun stream_variant(const ExperimentConfig& cfg, const Variant& v, const RunData& data, Index run,
                          const BoundsCertificate* cert, const StreamOptions& opt) {
  VariantRun out;
  const StepSizeSchedule schedule = resolve_schedule(v.schedule, cert, v.algorithm);
  const EstimatorConfig ecfg = estimator_config(cfg, v, schedule);
  out.estimator = ecfg;
  const GroupLayout layout = ecfg.layout();
  const Index total = data.samples.rows(), order = layout.order, n_nodes = layout.n_nodes;
  const Index t1 = cfg.window_first(), t2 = std::min(cfg.window_last(), total - 1);
  const bool truth = !data.truth.empty();
  const auto& horizons = cfg.run.horizons;

  if (truth) {
    out.nmsd_num = VectorXd::Zero(total);
    out.nmsd_den = VectorXd::Zero(total);
  }
  for (std::size_t h = 0; h < horizons.size(); ++h) {
    out.nmse_num.push_back(VectorXd::Zero(total));
    out.nmse_den.push_back(VectorXd::Zero(total));
    out.var_err.push_back(VectorXd::Zero(n_nodes));
    out.var_energy.push_back(VectorXd::Zero(n_nodes));
  }

  std::optional<RegretTracker<double>> tracker;
  const bool dynamic = opt.regret == RegretMode::Dynamic && is_recursive(v.algorithm);
  if (opt.regret != RegretMode::None) {
    const auto loss = is_recursive(v.algorithm) ? RegretTracker<double>::Loss::Recursive : RegretTracker<double>::Loss::Instantaneous;
    tracker.emplace(layout, ecfg.regularization_weights(), loss, dynamic);
  }
  const auto* doubling = std::get_if<step::Doubling>(&schedule);
  std::vector<std::pair<Index, double>> boundaries;

  AnyEstimator any = make_estimator(v.algorithm, ecfg, cfg.estimators.pgd_iterations);
  std::visit(
      [&](auto& est) {
        for (Index t = 0; t < total; ++t) {
          const auto y = data.samples.row(t).transpose();
          if (!est.ready()) {
            est.step(y);
          } else {
            est.prepare(y);
            if (tracker) tracker->observe(est);
            est.commit();
            if (tracker && doubling && t > doubling->t0 && doubling_window(t, doubling->t0) != doubling_window(t + 1, doubling->t0))
              boundaries.emplace_back(t, tracker->report().static_regret.sum());
          }
          const MatrixXd& a = est.coefficients();
          if (truth) {
            const MatrixXd& tr = data.truth_at(t);
            out.nmsd_num(t) = (a - tr).squaredNorm();
            out.nmsd_den(t) = tr.squaredNorm();
            if (t >= t1 && t <= t2 && (t - t1) % cfg.run.snapshot_stride == 0)
              out.norms.push_back({t, group_norm_matrix(a, layout), data.mask->entries()});
          }
          if (t >= order - 1) {
            const auto params = VarParameters<double>::from_regression_matrix(a, order);
            const auto history = data.samples.middleRows(t - order + 1, order);
            for (std::size_t h = 0; h < horizons.size(); ++h) {
              const Index target = t + horizons[h];
              if (target >= total) continue;
              const VectorXd err = data.samples.row(target).transpose() - h_step_predict<double>(params, history, horizons[h]);
              out.nmse_num[h](target) += err.squaredNorm();
              out.nmse_den[h](target) += data.samples.row(target).squaredNorm();
              if (target >= t1 && target <= t2) {
                out.var_err[h] += err.cwiseAbs2();
                out.var_energy[h] += data.samples.row(target).transpose().cwiseAbs2();
              }
            }
          }
          if (opt.keep_iterates && (t % cfg.output.iterate_stride == 0 || t == total - 1)) out.iterates.emplace_back(t, a);
        }
        if (!est.coefficients().allFinite()) throw std::runtime_error("estimate diverged (non-finite coefficients)");
        out.final_coeffs = est.coefficients();
        out.zero_groups = count_zero_groups(est.coefficients(), layout);
        out.degenerate = est.degenerate_step_count();
        out.approximate = est.approximate_eigen_count();
        if constexpr (std::is_same_v<std::decay_t<decltype(est)>, Tirso<double>>)
          if (opt.keep_state) out.final_state = est.state();
      },
      any);

  if (tracker && tracker->terms() > 0) {
    const RegretReport r = tracker->report();
    Json j = {{"run", run},
              {"terms", tracker->terms()},
              {"online_loss", vector_json(r.online_loss)},
              {"comparator_loss", vector_json(r.comparator_loss)},
              {"static_regret", vector_json(r.static_regret)},
              {"comparator_converged", r.comparator_converged}};
    if (!boundaries.empty()) {
      Json b = Json::array();
      for (const auto& [t, reg] : boundaries) b.push_back({t, reg});
      j["window_boundaries"] = std::move(b);
    }
    if (dynamic) {
      j["dynamic_regret"] = vector_json(r.dynamic_regret);
      j["path_length"] = vector_json(r.path_length);
      j["max_minimizer_step"] = vector_json(r.max_minimizer_step);
    }
    out.regret = std::move(j);

    const Index nodes = n_nodes;
    if (cert && is_recursive(v.algorithm) && std::holds_alternative<step::Diminishing>(schedule))
      for (Index n = 0; n < nodes; ++n)
        out.checks.push_back({"logarithmic_regret", run, n, check_logarithmic_regret(r.static_regret(n), *cert, tracker->terms(), schedule)});
    if (doubling) out.checks.push_back({"sublinear_trend", run, -1, check_sublinear_trend(boundaries, schedule)});
    if (dynamic && cert) {
      const Index steps = r.tracking_error.rows();
      const Index tail = std::max<Index>(1, steps / 5);
      for (Index n = 0; n < nodes; ++n) {
        out.checks.push_back({"dynamic_regret", run, n,
                              check_dynamic_regret(r.dynamic_regret(n), *cert, schedule, v.lambda, r.initial_minimizer_norm(n), r.path_length(n))});
        const double tail_mean = r.tracking_error.col(n).tail(tail).mean();
        out.checks.push_back({"tracking", run, n, check_tracking(tail_mean, r.max_minimizer_step(n), *cert, schedule)});
        BoundCheck order_check;
        order_check.certified = true;
        order_check.lhs = r.static_regret(n);
        order_check.rhs = r.dynamic_regret(n);
        order_check.passed = order_check.rhs >= order_check.lhs;
        out.checks.push_back({"dynamic_exceeds_static", run, n, order_check});
      }
    }
  }
  return out;
}

const BoundsCertificate* find_certificate(const std::vector<std::pair<double, BoundsCertificate>>& certs, double gamma) {
  for (const auto& [g, c] : certs)
    if (g == gamma) return &c;
  return nullptr;
}

std::vector<std::pair<double, BoundsCertificate>> certificates_for(const ExperimentConfig& cfg, const std::vector<Variant>& variants,
                                                                   const MatrixXd& samples, RegretMode regret) {
  std::vector<std::pair<double, BoundsCertificate>> certs;
  for (const auto& v : variants) {
    if (!(needs_certificate(v.schedule) || regret != RegretMode::None)) continue;
    if (find_certificate(certs, v.forgetting)) continue;
    certs.emplace_back(v.forgetting, bounds_certificate(samples, cfg.model.order, {v.forgetting, cfg.estimators.init_phi_scale, std::nullopt}));
  }
  return certs;
}

RunOutput execute_run(const ExperimentConfig& cfg, const std::vector<Variant>& variants, Index run, const RunData* shared) {
  RunOutput out;
  try {
    const RunData data = shared ? *shared : generate_run_data(cfg, run);
    out.seed = data.seed;
    const bool keep_series = cfg.output.series == "all" || (cfg.output.series == "first" && run == 0);
    if (keep_series) out.samples = data.samples;
    out.mask = data.mask;
    const Index total = data.samples.rows(), order = cfg.model.order;
    if (!data.truth.empty()) {
      out.truth_first = data.truth_at(0);
      out.truth_last = data.truth_at(total - 1);
      out.time_varying = data.truth.size() > 1;
      if (cfg.output.iterates)
        for (Index t = 0; t < total; ++t)
          if (t % cfg.output.iterate_stride == 0 || t == total - 1) out.truth_iterates.emplace_back(t, data.truth_at(t));
      // Genie predictor: the true coefficients in force at time t.
      for (const Index h : cfg.run.horizons) {
        VectorXd num = VectorXd::Zero(total), den = VectorXd::Zero(total);
        for (Index t = order - 1; t + h < total; ++t) {
          const auto params = VarParameters<double>::from_regression_matrix(data.truth_at(t), order);
          const VectorXd err = data.samples.row(t + h).transpose() - h_step_predict<double>(params, data.samples.middleRows(t - order + 1, order), h);
          num(t + h) = err.squaredNorm();
          den(t + h) = data.samples.row(t + h).squaredNorm();
        }
        out.genie_num.push_back(std::move(num));
        out.genie_den.push_back(std::move(den));
      }
    }
    out.certificates = certificates_for(cfg, variants, data.samples, cfg.run.regret);
    StreamOptions opt;
    opt.keep_state = cfg.output.checkpoints && run == 0;
    opt.keep_iterates = cfg.output.iterates;
    opt.regret = cfg.run.regret;
    for (const auto& v : variants) {
      try {
        out.variants.push_back(stream_variant(cfg, v, data, run, find_certificate(out.certificates, v.forgetting), opt));
      } catch (const std::exception& e) {
        VariantRun failed;
        failed.ok = false;
        failed.error = e.what();
        out.variants.push_back(std::move(failed));
      }
    }
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

DetectionSummary summarize_detection(const std::vector<NormSample>& samples, Index slots, Index t1, Index t2) {
  DetectionSummary d;
  if (samples.empty()) return d;
  try {
    d.equal_rates = calibrate_threshold_equal_rates(samples);
    d.balanced = balanced_threshold(samples);
  } catch (const std::invalid_argument&) {
    return d;
  }
  d.available = true;
  d.at_delta = detection_rates(samples, slots, d.equal_rates.delta);
  d.at_zero = detection_rates(samples, slots, 0.0);
  d.false_alarm = window_mean(d.at_delta.false_alarm, t1, t2);
  d.miss = window_mean(d.at_delta.miss, t1, t2);
  d.eier = window_mean(d.at_delta.eier, t1, t2);
  d.false_alarm_at_zero = window_mean(d.at_zero.false_alarm, t1, t2);
  d.miss_at_zero = window_mean(d.at_zero.miss, t1, t2);
  d.eier_at_zero = window_mean(d.at_zero.eier, t1, t2);
  double lo = HUGE_VAL, hi = 0;
  for (const auto& s : samples)
    for (Index i = 0; i < s.norms.size(); ++i) {
      const double v = s.norms.data()[i];
      if (v > 0) lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  d.roc.push_back({0.0, d.false_alarm_at_zero, d.miss_at_zero});
  if (hi > 0) {
    const int points = 40;
    for (int k = 0; k < points; ++k) {
      const double delta = lo * std::pow(hi * 1.01 / lo, static_cast<double>(k) / (points - 1));
      const auto r = detection_rates(samples, slots, delta);
      d.roc.push_back({delta, window_mean(r.false_alarm, t1, t2), window_mean(r.miss, t1, t2)});
    }
  }
  return d;
}

Json detection_json(const DetectionSummary& d) {
  if (!d.available) return nullptr;
  Json roc = Json::array();
  for (const auto& p : d.roc) roc.push_back({p[0], finite_or_null(p[1]), finite_or_null(p[2])});
  return {{"equal_rates",
           {{"delta", d.equal_rates.delta},
            {"rate_gap", d.equal_rates.rate_gap},
            {"feasible", d.equal_rates.feasible},
            {"p_fa", finite_or_null(d.false_alarm)},
            {"p_md", finite_or_null(d.miss)},
            {"eier", finite_or_null(d.eier)}}},
          {"delta_zero", {{"p_fa", finite_or_null(d.false_alarm_at_zero)}, {"p_md", finite_or_null(d.miss_at_zero)}, {"eier", finite_or_null(d.eier_at_zero)}}},
          {"balanced", {{"delta", d.balanced.delta}, {"p_fa", d.balanced.false_alarm}, {"p_md", d.balanced.miss}}},
          {"roc", roc}};
}

Json variant_json(const VariantSummary& s, const ExperimentConfig& cfg) {
  Json j;
  j["label"] = s.variant.label;
  j["algorithm"] = to_string(s.variant.algorithm);
  j["lambda"] = s.variant.lambda;
  j["forgetting"] = s.variant.forgetting;
  j["schedule"] = s.variant.schedule.label();
  j["completed_runs"] = s.completed_runs;
  if (s.nmsd.size())
    j["nmsd"] = {{"window_mean", finite_or_null(s.nmsd_window)}, {"final", finite_or_null(s.nmsd_final)}, {"half_time", s.nmsd_half_time}};
  Json nmse = Json::array();
  for (std::size_t h = 0; h < s.nmse_window.size(); ++h)
    nmse.push_back({{"horizon", cfg.run.horizons[h]}, {"window_mean", finite_or_null(s.nmse_window[h])}, {"per_variable", vector_json(s.nmse_per_variable[h])}});
  j["nmse"] = std::move(nmse);
  j["detection"] = detection_json(s.detection);
  if (s.transition.available)
    j["transition"] = {{"pre_break", finite_or_null(s.transition.pre_break)},
                       {"peak_t", s.transition.peak_t},
                       {"peak", finite_or_null(s.transition.peak)},
                       {"recovery_t", s.transition.recovery_t}};
  j["zero_groups_mean"] = finite_or_null(s.zero_groups_mean);
  j["regret"] = s.regret;
  Json checks = Json::array();
  for (const auto& b : s.bound_checks) checks.push_back(bound_json(b));
  j["bound_checks"] = std::move(checks);
  j["degenerate_steps"] = s.degenerate_steps;
  j["approximate_eigen"] = s.approximate_eigen;
  return j;
}

class MetricsWriter {
 public:
  void row(const std::string& metric, const std::string& run, Index t, double value) {
    text_ += metric;
    text_ += ',';
    text_ += run;
    text_ += ',';
    text_ += std::to_string(t);
    text_ += ',';
    text_ += io::format_double(value);
    text_ += '\n';
  }
  void series(const std::string& metric, const std::string& run, const VectorXd& v, Index stride = 1) {
    for (Index t = 0; t < v.size(); ++t)
      if (t % stride == 0 || t == v.size() - 1) row(metric, run, t, v(t));
  }
  const std::string& text() const { return text_; }

 private:
  std::string text_ = "metric,run,t,value\n";
};

VectorXd ratio(const VectorXd& num, const VectorXd& den) {
  VectorXd out(num.size());
  for (Index i = 0; i < num.size(); ++i) out(i) = den(i) != 0 ? num(i) / den(i) : kUndefined;
  return out;
}

bool wants(const ExperimentConfig& cfg, const std::string& metric) {
  return std::find(cfg.output.metrics.begin(), cfg.output.metrics.end(), metric) != cfg.output.metrics.end();
}

}  // namespace

std::uint64_t run_seed(const ExperimentConfig& cfg, Index run) { return derive_seed(cfg.run.seed, static_cast<std::uint64_t>(run)); }

RunData generate_run_data(const ExperimentConfig& cfg, Index run) {
  require(cfg.scenario != Scenario::RealCsv, "real-data runs are loaded, not generated");
  const auto& m = cfg.model;
  RunData d;
  d.seed = run_seed(cfg, run);
  const AdjacencyMask mask = generate_er_graph(m.n_nodes, m.edge_prob, derive_seed(d.seed, 1));
  const auto params = sample_var_coefficients(mask, m.order, derive_seed(d.seed, 2), m.target_radius);
  SimulationOptions opts;
  opts.burn_in = m.burn_in;
  const std::uint64_t noise = derive_seed(d.seed, 3);
  d.mask = mask;
  switch (cfg.scenario) {
    case Scenario::Stationary: {
      auto s = simulate_var(params, cfg.run.length, m.noise_std, noise, opts);
      d.samples = std::move(s.samples);
      d.unstable = s.unstable;
      d.truth.push_back(params.regression_matrix());
      break;
    }
    case Scenario::SmoothTransition: {
      // The second regime shares the support of the first.
      const auto end = sample_var_coefficients(mask, m.order, derive_seed(d.seed, 4), m.target_radius);
      auto s = simulate_smooth_transition(SmoothTransitionConfig<double>{m.kappa, m.t_break, params, end}, cfg.run.length, m.noise_std, noise, opts);
      d.samples = std::move(s.series.samples);
      d.unstable = s.series.unstable;
      for (const auto& p : s.params) d.truth.push_back(p.regression_matrix());
      break;
    }
    case Scenario::Drifting: {
      auto s = simulate_drifting_var(params, cfg.run.length, m.noise_std, m.drift_std, noise, m.drift_radius_cap, opts);
      d.samples = std::move(s.series.samples);
      d.unstable = s.series.unstable;
      for (const auto& p : s.params) d.truth.push_back(p.regression_matrix());
      break;
    }
    case Scenario::RealCsv:
      break;
  }
  return d;
}

RunData load_real_data(const ExperimentConfig& cfg) {
  IngestOptions opts;
  opts.sampling_interval = cfg.data.sampling_interval;
  opts.columns = cfg.data.columns;
  opts.time_column = cfg.data.time_column;
  const IngestedSeries s = ingest_csv(cfg.data.path, opts);
  RunData d;
  d.seed = cfg.run.seed;
  const Index rows = cfg.run.length > 0 ? std::min<Index>(cfg.run.length, s.samples.rows()) : s.samples.rows();
  d.samples = s.samples.topRows(rows);
  return d;
}

const VariantSummary& ExperimentResult::find(Algorithm a, double lambda, double forgetting) const {
  for (const auto& v : variants)
    if (v.variant.algorithm == a && v.variant.lambda == lambda && v.variant.forgetting == forgetting) return v;
  throw std::invalid_argument("no variant " + to_string(a) + " with that lambda and forgetting factor");
}

const VariantSummary* ExperimentResult::best(Algorithm a, const std::string& key) const {
  const VariantSummary* out = nullptr;
  double best_value = HUGE_VAL;
  for (const auto& v : variants) {
    if (v.variant.algorithm != a) continue;
    double value = kUndefined;
    if (key == "nmsd_window") value = v.nmsd_window;
    else if (key == "eier_at_zero") value = v.detection.eier_at_zero;
    else if (key == "nmse_window") value = v.nmse_window.empty() ? kUndefined : v.nmse_window.front();
    else throw std::invalid_argument("unknown selection key '" + key + "'");
    if (std::isfinite(value) && value < best_value) {
      best_value = value;
      out = &v;
    }
  }
  return out;
}

std::vector<BoundRecord> ExperimentResult::failed_checks() const {
  std::vector<BoundRecord> out;
  for (const auto& v : variants)
    for (const auto& b : v.bound_checks)
      if (b.result.certified && !b.result.passed) out.push_back(b);
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& input, std::optional<fs::path> directory) {
  ExperimentConfig cfg = input;
  std::optional<RunData> real;
  if (cfg.scenario == Scenario::RealCsv) {
    cfg.validate();
    real = load_real_data(cfg);
    cfg.model.n_nodes = real->samples.cols();
    cfg.run.length = real->samples.rows();
  }
  cfg.validate();
  if (!directory && !cfg.output.directory.empty()) directory = fs::path(cfg.output.directory);

  const std::vector<Variant> variants = expand_variants(cfg);
  const Index runs = cfg.run.runs, total = cfg.run.length;
  const Index t1 = cfg.window_first(), t2 = cfg.window_last();

  std::vector<RunOutput> outputs(static_cast<std::size_t>(runs));
  std::atomic<Index> next{0};
  auto work = [&] {
    for (Index r = next++; r < runs; r = next++) outputs[static_cast<std::size_t>(r)] = execute_run(cfg, variants, r, real ? &*real : nullptr);
  };
  Index workers = cfg.run.workers > 0 ? cfg.run.workers : static_cast<Index>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, runs);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (Index w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  ExperimentResult result;
  result.config = cfg;
  for (Index r = 0; r < runs; ++r) result.seeds.push_back(cfg.scenario == Scenario::RealCsv ? cfg.run.seed : run_seed(cfg, r));
  for (Index r = 0; r < runs; ++r) {
    const auto& o = outputs[static_cast<std::size_t>(r)];
    if (!o.ok) result.attrition.push_back({r, "", o.error});
    else
      for (std::size_t k = 0; k < variants.size(); ++k)
        if (!o.variants[k].ok) result.attrition.push_back({r, variants[k].label, o.variants[k].error});
  }

  const bool truth = cfg.has_truth();
  const std::size_t horizons = cfg.run.horizons.size();
  MetricsWriter metrics;

  // Genie predictor.
  if (truth) {
    for (std::size_t h = 0; h < horizons; ++h) {
      VectorXd num = VectorXd::Zero(total), den = VectorXd::Zero(total);
      for (const auto& o : outputs)
        if (o.ok) {
          num += o.genie_num[h];
          den += o.genie_den[h];
        }
      result.genie_nmse.push_back(ratio(num, den));
      result.genie_nmse_window.push_back(window_mean(result.genie_nmse.back(), t1, t2));
      if (wants(cfg, "nmse")) metrics.series("genie/nmse_h" + std::to_string(cfg.run.horizons[h]), "ensemble", result.genie_nmse.back());
    }
  }

  for (std::size_t k = 0; k < variants.size(); ++k) {
    VariantSummary s;
    s.variant = variants[k];
    VectorXd nmsd_num = VectorXd::Zero(total), nmsd_den = VectorXd::Zero(total);
    std::vector<VectorXd> nmse_num(horizons, VectorXd::Zero(total)), nmse_den(horizons, VectorXd::Zero(total));
    std::vector<VectorXd> var_err(horizons, VectorXd::Zero(cfg.model.n_nodes)), var_energy(horizons, VectorXd::Zero(cfg.model.n_nodes));
    std::vector<NormSample> norms;
    double zeros = 0;
    for (Index r = 0; r < runs; ++r) {
      const auto& o = outputs[static_cast<std::size_t>(r)];
      if (!o.ok || !o.variants[k].ok) continue;
      const VariantRun& vr = o.variants[k];
      ++s.completed_runs;
      if (truth) {
        nmsd_num += vr.nmsd_num;
        nmsd_den += vr.nmsd_den;
      }
      for (std::size_t h = 0; h < horizons; ++h) {
        nmse_num[h] += vr.nmse_num[h];
        nmse_den[h] += vr.nmse_den[h];
        var_err[h] += vr.var_err[h];
        var_energy[h] += vr.var_energy[h];
      }
      norms.insert(norms.end(), vr.norms.begin(), vr.norms.end());
      zeros += static_cast<double>(vr.zero_groups);
      s.bound_checks.insert(s.bound_checks.end(), vr.checks.begin(), vr.checks.end());
      if (!vr.regret.is_null()) s.regret.push_back(vr.regret);
      s.degenerate_steps += vr.degenerate;
      s.approximate_eigen += vr.approximate;
    }
    if (s.completed_runs == 0) {
      result.variants.push_back(std::move(s));
      continue;
    }
    s.zero_groups_mean = zeros / static_cast<double>(s.completed_runs);
    if (truth) {
      s.nmsd = ratio(nmsd_num, nmsd_den);
      s.nmsd_window = window_mean(s.nmsd, t1, t2);
      s.nmsd_final = s.nmsd(total - 1);
      for (Index t = 0; t < total; ++t)
        if (s.nmsd(t) <= 0.5 * s.nmsd(0)) {
          s.nmsd_half_time = t;
          break;
        }
      if (cfg.scenario == Scenario::SmoothTransition) {
        auto& tr = s.transition;
        const Index tb = cfg.model.t_break;
        tr.available = true;
        tr.pre_break = window_mean(s.nmsd, std::max<Index>(0, tb - 100), tb - 1);
        tr.peak_t = tb;
        for (Index t = tb; t <= std::min(tb + 500, total - 1); ++t)
          if (s.nmsd(t) > s.nmsd(tr.peak_t)) tr.peak_t = t;
        tr.peak = s.nmsd(tr.peak_t);
        for (Index t = tr.peak_t; t < total; ++t)
          if (s.nmsd(t) <= 0.5 * tr.peak) {
            tr.recovery_t = t;
            break;
          }
      }
      s.detection = summarize_detection(norms, total, t1, t2);
    }
    for (std::size_t h = 0; h < horizons; ++h) {
      s.nmse.push_back(ratio(nmse_num[h], nmse_den[h]));
      s.nmse_window.push_back(window_mean(s.nmse.back(), t1, t2));
      s.nmse_per_variable.push_back(ratio(var_err[h], var_energy[h]));
    }

    const std::string& label = s.variant.label;
    if (truth && wants(cfg, "nmsd")) {
      for (Index r = 0; r < runs; ++r) {
        const auto& o = outputs[static_cast<std::size_t>(r)];
        if (o.ok && o.variants[k].ok)
          metrics.series(label + "/nmsd", std::to_string(r), ratio(o.variants[k].nmsd_num, o.variants[k].nmsd_den), cfg.output.metric_stride);
      }
      metrics.series(label + "/nmsd", "ensemble", s.nmsd);
    }
    if (wants(cfg, "nmse"))
      for (std::size_t h = 0; h < horizons; ++h) {
        const std::string name = label + "/nmse_h" + std::to_string(cfg.run.horizons[h]);
        for (Index r = 0; r < runs; ++r) {
          const auto& o = outputs[static_cast<std::size_t>(r)];
          if (o.ok && o.variants[k].ok)
            metrics.series(name, std::to_string(r), ratio(o.variants[k].nmse_num[h], o.variants[k].nmse_den[h]), cfg.output.metric_stride);
        }
        metrics.series(name, "ensemble", s.nmse[h]);
      }
    if (s.detection.available && wants(cfg, "detection")) {
      const auto& d = s.detection;
      for (Index t = t1; t <= t2; ++t) {
        if (std::isnan(d.at_delta.eier(t))) continue;
        metrics.row(label + "/p_fa", "ensemble", t, d.at_delta.false_alarm(t));
        metrics.row(label + "/p_md", "ensemble", t, d.at_delta.miss(t));
        metrics.row(label + "/eier", "ensemble", t, d.at_delta.eier(t));
        metrics.row(label + "/eier_delta0", "ensemble", t, d.at_zero.eier(t));
      }
    }
    result.variants.push_back(std::move(s));
  }

  // Summary.
  Json summary;
  summary["name"] = cfg.name;
  summary["scenario"] = to_string(cfg.scenario);
  summary["window"] = {t1, t2};
  summary["runs"] = runs;
  Json vs = Json::array();
  for (const auto& s : result.variants) vs.push_back(variant_json(s, cfg));
  summary["variants"] = std::move(vs);
  if (truth) {
    Json genie = Json::array();
    for (std::size_t h = 0; h < horizons; ++h)
      genie.push_back({{"horizon", cfg.run.horizons[h]}, {"window_mean", finite_or_null(result.genie_nmse_window[h])}});
    summary["genie_nmse"] = std::move(genie);
  }
  Json selection = Json::object();
  for (const auto a : cfg.estimators.algorithms) {
    Json sel = Json::object();
    for (const std::string key : {"nmsd_window", "eier_at_zero", "nmse_window"})
      if (const auto* b = result.best(a, key)) sel[key] = b->variant.label;
    selection[to_string(a)] = std::move(sel);
  }
  summary["selection"] = std::move(selection);
  Json certs = Json::array();
  for (Index r = 0; r < runs; ++r)
    for (const auto& [gamma, c] : outputs[static_cast<std::size_t>(r)].certificates) {
      Json j = certificate_json(c);
      j["run"] = r;
      j["forgetting"] = gamma;
      certs.push_back(std::move(j));
    }
  summary["certificates"] = std::move(certs);
  Index certified = 0, passed = 0;
  for (const auto& s : result.variants)
    for (const auto& b : s.bound_checks)
      if (b.result.certified) {
        ++certified;
        passed += b.result.passed;
      }
  summary["bound_checks"] = {{"certified", certified}, {"passed", passed}, {"failed", certified - passed}};
  Json attrition = Json::array();
  for (const auto& a : result.attrition) attrition.push_back({{"run", a.run}, {"variant", a.variant}, {"message", a.message}});
  summary["attrition"] = attrition;
  result.summary = summary;

  if (!directory) return result;

  // Artifacts.
  const fs::path dir = *directory;
  fs::create_directories(dir);
  Json files = Json::array();
  auto add = [&](const std::string& rel, const std::string& kind) { files.push_back({{"path", rel}, {"kind", kind}}); };

  io::write_text(dir / "metrics.csv", metrics.text());
  add("metrics.csv", "metrics");
  io::write_json(dir / "summary.json", summary);
  add("summary.json", "summary");

  for (Index r = 0; r < runs; ++r) {
    const auto& o = outputs[static_cast<std::size_t>(r)];
    if (!o.ok) continue;
    const std::string base = "data/" + run_name(r);
    if (o.samples) {
      io::write_series_csv(dir / (base + ".csv"), *o.samples);
      add(base + ".csv", "series");
    }
    if (truth && (o.samples || cfg.output.iterates)) {
      io::GroundTruth g{cfg.model.noise_std, o.seed, *o.mask, VarParameters<double>::from_regression_matrix(o.truth_first, cfg.model.order)};
      Json j = io::truth_to_json(g);
      if (o.time_varying) {
        const auto last = VarParameters<double>::from_regression_matrix(o.truth_last, cfg.model.order);
        Json lags = Json::array();
        for (Index p = 1; p <= last.order(); ++p) lags.push_back(io::matrix_to_json(last.lag(p)));
        j["lags_final"] = std::move(lags);
      }
      io::write_json(dir / (base + "_truth.json"), j);
      add(base + "_truth.json", "truth");
    }
    if (cfg.output.iterates) {
      const Index n = cfg.model.n_nodes, width = n * n * cfg.model.order;
      if (truth) {
        MatrixXd rows(static_cast<Index>(o.truth_iterates.size()), 1 + width);
        for (std::size_t i = 0; i < o.truth_iterates.size(); ++i) append_flat_row(rows, static_cast<Index>(i), o.truth_iterates[i].first, o.truth_iterates[i].second);
        io::write_matrix_csv(dir / (base + "_truth_iterates.csv"), rows);
        add(base + "_truth_iterates.csv", "truth_iterates");
      }
      for (std::size_t k = 0; k < variants.size(); ++k) {
        const auto& vr = o.variants[k];
        if (!vr.ok) continue;
        MatrixXd rows(static_cast<Index>(vr.iterates.size()), 1 + width);
        for (std::size_t i = 0; i < vr.iterates.size(); ++i) append_flat_row(rows, static_cast<Index>(i), vr.iterates[i].first, vr.iterates[i].second);
        const std::string rel = "iterates/" + variants[k].label + "/" + run_name(r) + ".csv";
        io::write_matrix_csv(dir / rel, rows);
        add(rel, "iterates");
      }
    }
  }

  const auto& first = outputs.front();
  if (cfg.output.graphs && first.ok) {
    const GroupLayout layout{cfg.model.n_nodes, cfg.model.order};
    if (truth) {
      io::write_json(dir / "graphs/truth.json", io::graph_to_json(graph_snapshot(first.truth_last, layout, 0.0)));
      add("graphs/truth.json", "graph");
    }
    for (std::size_t k = 0; k < variants.size(); ++k) {
      if (!first.variants[k].ok) continue;
      const auto& det = result.variants[k].detection;
      const double delta = det.available ? det.equal_rates.delta : 0.0;
      const std::string rel = "graphs/" + variants[k].label + ".json";
      Json g = io::graph_to_json(graph_snapshot(first.variants[k].final_coeffs, layout, delta));
      g["threshold"] = delta;
      g["run"] = 0;
      io::write_json(dir / rel, g);
      add(rel, "graph");
    }
  }
  if (cfg.output.checkpoints && first.ok)
    for (std::size_t k = 0; k < variants.size(); ++k) {
      if (!first.variants[k].ok || !first.variants[k].final_state) continue;
      const std::string rel = "checkpoints/" + variants[k].label;
      io::write_checkpoint(dir / rel, *first.variants[k].final_state, first.variants[k].estimator);
      add(rel + "/checkpoint.json", "checkpoint");
    }

  Json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["config"] = to_json(cfg);
  manifest["seeds"] = result.seeds;
  Json labels = Json::array();
  for (const auto& v : variants) labels.push_back(v.label);
  manifest["variants"] = std::move(labels);
  manifest["window"] = {t1, t2};
  manifest["files"] = std::move(files);
  manifest["attrition"] = attrition;
  io::write_json(dir / "manifest.json", manifest);
  result.directory = dir;
  return result;
}

std::vector<BoundRecord> check_bounds_from_artifacts(const fs::path& dir, Json* report) {
  const Json manifest = io::read_json(dir / "manifest.json");
  ExperimentConfig cfg = config_from_json(manifest.at("config"));
  if (cfg.run.regret == RegretMode::None) cfg.run.regret = RegretMode::Static;
  const auto variants = expand_variants(cfg);
  std::vector<BoundRecord> out;
  Json runs = Json::array();
  for (const auto& f : manifest.at("files")) {
    if (f.at("kind") != "series") continue;
    const std::string rel = f.at("path").get<std::string>();
    const std::string stem = fs::path(rel).stem().string();
    const Index run = std::stol(stem.substr(stem.find('_') + 1));
    RunData data;
    data.samples = io::read_series_csv(dir / rel);
    const auto certs = certificates_for(cfg, variants, data.samples, cfg.run.regret);
    StreamOptions opt;
    opt.regret = cfg.run.regret;
    Json r;
    r["run"] = run;
    Json cj = Json::array();
    for (const auto& [gamma, c] : certs) {
      Json j = certificate_json(c);
      j["forgetting"] = gamma;
      cj.push_back(std::move(j));
    }
    r["certificates"] = std::move(cj);
    Json checks = Json::array();
    for (const auto& v : variants) {
      VariantRun vr;
      try {
        vr = stream_variant(cfg, v, data, run, find_certificate(certs, v.forgetting), opt);
      } catch (const std::exception& e) {
        // A run that cannot be completed fails every check it was meant for.
        BoundCheck failed;
        failed.certified = true;
        failed.note = e.what();
        vr.checks.push_back({"completed", run, -1, failed});
      }
      for (const auto& b : vr.checks) {
        Json j = bound_json(b);
        j["variant"] = v.label;
        checks.push_back(std::move(j));
        out.push_back(b);
      }
    }
    r["checks"] = std::move(checks);
    runs.push_back(std::move(r));
  }
  if (report) *report = {{"runs", runs}};
  return out;
}

Json recompute_metrics(const fs::path& dir) {
  const Json manifest = io::read_json(dir / "manifest.json");
  const ExperimentConfig cfg = config_from_json(manifest.at("config"));
  const Index n = cfg.model.n_nodes, order = cfg.model.order;
  const GroupLayout layout{n, order};
  const Index t1 = cfg.window_first(), t2 = cfg.window_last();
  std::map<std::string, std::vector<std::string>> iterate_files;
  std::map<std::string, std::string> truth_files, truth_iterate_files;
  for (const auto& f : manifest.at("files")) {
    const std::string rel = f.at("path").get<std::string>(), kind = f.at("kind").get<std::string>();
    if (kind == "iterates") iterate_files[fs::path(rel).parent_path().filename().string()].push_back(rel);
    if (kind == "truth") truth_files[fs::path(rel).filename().string().substr(0, 8)] = rel;
    if (kind == "truth_iterates") truth_iterate_files[fs::path(rel).filename().string().substr(0, 8)] = rel;
  }
  require(!iterate_files.empty(), "no stored iterates; rerun with output.iterates = true");
  Json out = Json::object();
  for (const auto& label : manifest.at("variants")) {
    const auto it = iterate_files.find(label.get<std::string>());
    if (it == iterate_files.end()) continue;
    std::vector<Index> steps;
    VectorXd num, den;
    std::vector<NormSample> norms;
    for (const auto& rel : it->second) {
      const std::string run = fs::path(rel).stem().string();
      const MatrixXd est = io::read_matrix_csv(dir / rel);
      if (steps.empty()) {
        for (Index i = 0; i < est.rows(); ++i) steps.push_back(static_cast<Index>(est(i, 0)));
        num = VectorXd::Zero(est.rows());
        den = VectorXd::Zero(est.rows());
      }
      if (!truth_iterate_files.count(run)) continue;
      const MatrixXd tr = io::read_matrix_csv(dir / truth_iterate_files.at(run));
      const BoolMat mask = io::truth_from_json(io::read_json(dir / truth_files.at(run))).mask.entries();
      for (Index i = 0; i < est.rows(); ++i) {
        const MatrixXd a = unflatten(est, i, n, n * order), b = unflatten(tr, i, n, n * order);
        num(i) += (a - b).squaredNorm();
        den(i) += b.squaredNorm();
        const Index t = steps[static_cast<std::size_t>(i)];
        if (t >= t1 && t <= t2) norms.push_back({t, group_norm_matrix(a, layout), mask});
      }
    }
    Json j;
    j["steps"] = steps;
    if (den.size() && den.sum() > 0) {
      const VectorXd v = ratio(num, den);
      j["nmsd"] = vector_json(v);
      double sum = 0;
      Index count = 0;
      for (std::size_t i = 0; i < steps.size(); ++i)
        if (steps[i] >= t1 && steps[i] <= t2 && std::isfinite(v(static_cast<Index>(i)))) {
          sum += v(static_cast<Index>(i));
          ++count;
        }
      j["nmsd_window_mean"] = count ? Json(sum / static_cast<double>(count)) : Json(nullptr);
      const auto d = summarize_detection(norms, cfg.run.length, t1, t2);
      j["detection"] = detection_json(d);
    }
    out[label.get<std::string>()] = std::move(j);
  }
  io::write_json(dir / "metrics_recomputed.json", out);
  return out;
}

}  // namespace tirso
