#include <tirso/harness/experiment.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

namespace tirso {

namespace {

using io::Json;

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<Scenario> kScenarios[] = {{Scenario::Stationary, "stationary"},
                                             {Scenario::SmoothTransition, "smooth_transition"},
                                             {Scenario::Drifting, "drifting"},
                                             {Scenario::RealCsv, "real_csv"}};
constexpr EnumName<Algorithm> kAlgorithms[] = {
    {Algorithm::Tiso, "tiso"}, {Algorithm::Tirso, "tirso"}, {Algorithm::Osgd, "osgd"}, {Algorithm::PgdTirso, "pgd_tirso"}};
constexpr EnumName<RegretMode> kRegret[] = {{RegretMode::None, "none"}, {RegretMode::Static, "static"}, {RegretMode::Dynamic, "dynamic"}};
constexpr EnumName<ScheduleSpec::Kind> kKinds[] = {{ScheduleSpec::Kind::Constant, "constant"},
                                                   {ScheduleSpec::Kind::Lipschitz, "lipschitz"},
                                                   {ScheduleSpec::Kind::Diminishing, "diminishing"},
                                                   {ScheduleSpec::Kind::Doubling, "doubling"},
                                                   {ScheduleSpec::Kind::Adaptive, "adaptive"}};

template <typename E, std::size_t K>
std::string name_of(const EnumName<E> (&table)[K], E v) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  return "?";
}

template <typename E, std::size_t K>
E parse_enum(const EnumName<E> (&table)[K], const std::string& s, const std::string& field) {
  std::string known;
  for (const auto& e : table) {
    if (s == e.name) return e.value;
    known += known.empty() ? "" : ", ";
    known += e.name;
  }
  throw std::invalid_argument(field + ": unknown value '" + s + "' (expected one of " + known + ")");
}

// Reads the members of one JSON object, rejecting keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument(path_ + " must be an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw std::invalid_argument("unknown config key '" + field(key) + "'");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw std::invalid_argument(field(key) + " has the wrong type");
    }
  }
  void get(const std::string& key, std::optional<Index>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    Index v = 0;
    get(key, v);
    out = v;
  }
  template <typename E, std::size_t K>
  void get_enum(const std::string& key, const EnumName<E> (&table)[K], E& out) {
    std::string s;
    if (!j_.contains(key)) {
      seen_.insert(key);
      return;
    }
    get(key, s);
    out = parse_enum(table, s, field(key));
  }
  const Json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Json schedule_to_json(const ScheduleSpec& s) { return {{"kind", name_of(kKinds, s.kind)}, {"value", s.value}, {"t0", s.t0}}; }

ScheduleSpec schedule_from_json(const Json& j, const std::string& path) {
  ScheduleSpec s;
  ObjectReader r(j, path);
  r.get_enum("kind", kKinds, s.kind);
  r.get("value", s.value);
  r.get("t0", s.t0);
  return s;
}

Json optional_index(const std::optional<Index>& v) { return v ? Json(*v) : Json(nullptr); }

void check(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw std::invalid_argument(field + ": " + what);
}

}  // namespace

std::string to_string(Scenario s) { return name_of(kScenarios, s); }
std::string to_string(Algorithm a) { return name_of(kAlgorithms, a); }
std::string to_string(RegretMode m) { return name_of(kRegret, m); }

std::string ScheduleSpec::label() const {
  const std::string kind_name = name_of(kKinds, kind);
  const bool from_cert = (kind == Kind::Diminishing || kind == Kind::Doubling) && value <= 0;
  std::string out = kind_name + (from_cert ? "_cert" : short_number(value));
  if (kind == Kind::Doubling) out += "_t" + std::to_string(t0);
  return out;
}

Index ExperimentConfig::window_first() const {
  const Index t = run.length;
  if (!run.window_first) return t / 3;
  return *run.window_first < 0 ? t + *run.window_first : *run.window_first;
}

Index ExperimentConfig::window_last() const {
  const Index t = run.length;
  if (!run.window_last) return t - 1;
  return *run.window_last < 0 ? t + *run.window_last : *run.window_last;
}

void ExperimentConfig::validate() const {
  const auto& m = model;
  if (scenario == Scenario::RealCsv) {
    check(!data.path.empty(), "data.path", "required for the real_csv scenario");
    check(std::filesystem::exists(data.path), "data.path", "no such file '" + data.path + "'");
    check(data.sampling_interval > 0, "data.sampling_interval", "must be positive");
    check(run.runs == 1, "run.runs", "real data supports a single run");
  } else {
    check(m.n_nodes >= 2, "model.n_nodes", "must be at least 2");
  }
  check(m.order >= 1, "model.order", "must be at least 1");
  check(m.edge_prob >= 0 && m.edge_prob <= 1, "model.edge_prob", "must lie in [0, 1]");
  check(m.noise_std >= 0, "model.noise_std", "must be non-negative");
  check(m.target_radius > 0 && m.target_radius < 1, "model.target_radius", "must lie in (0, 1)");
  check(m.burn_in >= 0, "model.burn_in", "must be non-negative");
  if (scenario == Scenario::SmoothTransition) {
    check(m.kappa >= 0, "model.kappa", "must be non-negative");
    check(m.t_break >= 0 && m.t_break < run.length, "model.t_break", "must lie inside [0, T)");
  }
  if (scenario == Scenario::Drifting) {
    check(m.drift_std >= 0, "model.drift_std", "must be non-negative");
    check(m.drift_radius_cap > 0 && m.drift_radius_cap < 1, "model.drift_radius_cap", "must lie in (0, 1)");
  }

  const auto& e = estimators;
  check(!e.algorithms.empty(), "estimators.algorithms", "must not be empty");
  check(!e.lambdas.empty(), "estimators.lambdas", "must not be empty");
  check(!e.forgetting.empty(), "estimators.forgetting", "must not be empty");
  check(!e.schedules.empty(), "estimators.schedules", "must not be empty");
  check(e.pgd_iterations >= 1, "estimators.pgd_iterations", "must be at least 1");
  for (const auto& s : e.schedules) {
    switch (s.kind) {
      case ScheduleSpec::Kind::Constant:
      case ScheduleSpec::Kind::Lipschitz:
      case ScheduleSpec::Kind::Adaptive:
        check(s.value > 0, "estimators.schedules", s.label() + " needs a positive value");
        break;
      case ScheduleSpec::Kind::Doubling:
        check(s.t0 >= 1, "estimators.schedules", "doubling needs t0 >= 1");
        break;
      case ScheduleSpec::Kind::Diminishing:
        break;
    }
  }
  for (const auto& v : expand_variants(*this)) {
    StepSizeSchedule sched = step::Constant{1.0};
    try {
      estimator_config(*this, v, sched).validate();
    } catch (const std::invalid_argument& ex) {
      throw std::invalid_argument("estimators (" + v.label + "): " + ex.what());
    }
  }

  check(run.length > m.order + 1, "run.length", "must exceed P + 1");
  check(run.runs >= 1, "run.runs", "must be at least 1");
  check(run.workers >= 0, "run.workers", "must be non-negative");
  check(run.snapshot_stride >= 1, "run.snapshot_stride", "must be at least 1");
  check(!run.horizons.empty(), "run.horizons", "must not be empty");
  for (const Index h : run.horizons) check(h >= 1 && h < run.length, "run.horizons", "must lie in [1, T)");
  const Index t1 = window_first(), t2 = window_last();
  check(t1 >= 0 && t1 < run.length, "run.window_first", "outside [0, T)");
  check(t2 >= t1 && t2 < run.length, "run.window_last", "must lie in [T1, T)");

  check(output.metric_stride >= 1, "output.metric_stride", "must be at least 1");
  check(output.iterate_stride >= 1, "output.iterate_stride", "must be at least 1");
  check(output.series == "none" || output.series == "first" || output.series == "all", "output.series",
        "must be none, first or all");
  for (const auto& name : output.metrics)
    check(name == "nmsd" || name == "nmse" || name == "detection", "output.metrics", "unknown metric '" + name + "'");
}

Json to_json(const ExperimentConfig& c) {
  Json algorithms = Json::array();
  for (const auto a : c.estimators.algorithms) algorithms.push_back(to_string(a));
  Json schedules = Json::array();
  for (const auto& s : c.estimators.schedules) schedules.push_back(schedule_to_json(s));
  Json j;
  j["name"] = c.name;
  j["desk_scale"] = c.desk_scale;
  j["scenario"] = to_string(c.scenario);
  j["model"] = {{"n_nodes", c.model.n_nodes},
                {"order", c.model.order},
                {"edge_prob", c.model.edge_prob},
                {"noise_std", c.model.noise_std},
                {"target_radius", c.model.target_radius},
                {"kappa", c.model.kappa},
                {"t_break", c.model.t_break},
                {"drift_std", c.model.drift_std},
                {"drift_radius_cap", c.model.drift_radius_cap},
                {"burn_in", c.model.burn_in}};
  j["estimators"] = {{"algorithms", algorithms},
                     {"lambdas", c.estimators.lambdas},
                     {"forgetting", c.estimators.forgetting},
                     {"init_phi_scale", c.estimators.init_phi_scale},
                     {"schedules", schedules},
                     {"pgd_iterations", c.estimators.pgd_iterations}};
  j["run"] = {{"length", c.run.length},
              {"runs", c.run.runs},
              {"seed", c.run.seed},
              {"window_first", optional_index(c.run.window_first)},
              {"window_last", optional_index(c.run.window_last)},
              {"workers", c.run.workers},
              {"snapshot_stride", c.run.snapshot_stride},
              {"horizons", c.run.horizons},
              {"regret", to_string(c.run.regret)}};
  j["data"] = {{"path", c.data.path},
               {"sampling_interval", c.data.sampling_interval},
               {"columns", c.data.columns},
               {"time_column", c.data.time_column}};
  j["output"] = {{"directory", c.output.directory},
                 {"metric_stride", c.output.metric_stride},
                 {"iterate_stride", c.output.iterate_stride},
                 {"iterates", c.output.iterates},
                 {"checkpoints", c.output.checkpoints},
                 {"graphs", c.output.graphs},
                 {"series", c.output.series},
                 {"metrics", c.output.metrics}};
  return j;
}

ExperimentConfig config_from_json(const Json& j, const ExperimentConfig& base) {
  ExperimentConfig c = base;
  ObjectReader top(j, "");
  top.get("name", c.name);
  top.get("desk_scale", c.desk_scale);
  top.get_enum("scenario", kScenarios, c.scenario);
  if (const Json* m = top.child("model")) {
    ObjectReader r(*m, "model");
    r.get("n_nodes", c.model.n_nodes);
    r.get("order", c.model.order);
    r.get("edge_prob", c.model.edge_prob);
    r.get("noise_std", c.model.noise_std);
    r.get("target_radius", c.model.target_radius);
    r.get("kappa", c.model.kappa);
    r.get("t_break", c.model.t_break);
    r.get("drift_std", c.model.drift_std);
    r.get("drift_radius_cap", c.model.drift_radius_cap);
    r.get("burn_in", c.model.burn_in);
  }
  if (const Json* e = top.child("estimators")) {
    ObjectReader r(*e, "estimators");
    std::vector<std::string> names;
    bool had_algorithms = e->contains("algorithms");
    r.get("algorithms", names);
    if (had_algorithms) {
      c.estimators.algorithms.clear();
      for (const auto& n : names) c.estimators.algorithms.push_back(parse_enum(kAlgorithms, n, "estimators.algorithms"));
    }
    r.get("lambdas", c.estimators.lambdas);
    r.get("forgetting", c.estimators.forgetting);
    r.get("init_phi_scale", c.estimators.init_phi_scale);
    r.get("pgd_iterations", c.estimators.pgd_iterations);
    if (const Json* s = r.child("schedules")) {
      if (!s->is_array()) throw std::invalid_argument("estimators.schedules must be an array");
      c.estimators.schedules.clear();
      for (std::size_t i = 0; i < s->size(); ++i)
        c.estimators.schedules.push_back(schedule_from_json((*s)[i], "estimators.schedules[" + std::to_string(i) + "]"));
    }
  }
  if (const Json* run = top.child("run")) {
    ObjectReader r(*run, "run");
    r.get("length", c.run.length);
    r.get("runs", c.run.runs);
    r.get("seed", c.run.seed);
    r.get("window_first", c.run.window_first);
    r.get("window_last", c.run.window_last);
    r.get("workers", c.run.workers);
    r.get("snapshot_stride", c.run.snapshot_stride);
    r.get("horizons", c.run.horizons);
    r.get_enum("regret", kRegret, c.run.regret);
  }
  if (const Json* d = top.child("data")) {
    ObjectReader r(*d, "data");
    r.get("path", c.data.path);
    r.get("sampling_interval", c.data.sampling_interval);
    r.get("columns", c.data.columns);
    r.get("time_column", c.data.time_column);
  }
  if (const Json* o = top.child("output")) {
    ObjectReader r(*o, "output");
    r.get("directory", c.output.directory);
    r.get("metric_stride", c.output.metric_stride);
    r.get("iterate_stride", c.output.iterate_stride);
    r.get("iterates", c.output.iterates);
    r.get("checkpoints", c.output.checkpoints);
    r.get("graphs", c.output.graphs);
    r.get("series", c.output.series);
    r.get("metrics", c.output.metrics);
  }
  return c;
}

void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw std::invalid_argument("override key '" + key + "' has an empty component");
    if (!node->is_object()) *node = Json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

std::vector<std::string> preset_names() { return {"fig2", "fig3_stepsize", "fig4_baselines", "fig6_7_transition", "real_forecast"}; }

ExperimentConfig preset(const std::string& name, bool desk_scale) {
  using Kind = ScheduleSpec::Kind;
  ExperimentConfig c;
  c.name = name;
  c.desk_scale = desk_scale;
  c.estimators.init_phi_scale = 1e-5;
  if (name == "fig2") {
    c.scenario = Scenario::Stationary;
    c.model.n_nodes = 12;
    c.model.order = 2;
    c.model.edge_prob = 0.2;
    c.model.noise_std = 0.005;
    c.estimators.algorithms = {Algorithm::Tiso, Algorithm::Tirso};
    c.estimators.lambdas = {1e-2, 1e-6, 1e-12};
    c.estimators.forgetting = {0.99};
    c.estimators.schedules = {{Kind::Adaptive, 0.15, 8}};
    c.run.length = desk_scale ? 1500 : 3000;
    c.run.runs = desk_scale ? 30 : 300;
    c.run.window_first = 500;
    c.run.snapshot_stride = 10;
  } else if (name == "fig3_stepsize") {
    c.scenario = Scenario::Stationary;
    c.model.n_nodes = 10;
    c.model.order = 3;
    c.model.edge_prob = 0.2;
    c.model.noise_std = 0.1;
    c.estimators.algorithms = {Algorithm::Tiso, Algorithm::Tirso};
    c.estimators.lambdas = {8e-4};
    c.estimators.forgetting = {0.99};
    // beta = 0.3 is about L at this noise level; the certificate's beta_tilde
    // gives first steps near kappa / L and diverges.
    c.estimators.schedules = {{Kind::Lipschitz, 1.0, 8}, {Kind::Diminishing, 0.3, 8}, {Kind::Doubling, 0.0, 8}, {Kind::Adaptive, 0.25, 8}};
    c.run.length = 2000;
    c.run.runs = desk_scale ? 30 : 50;
  } else if (name == "fig4_baselines") {
    c.scenario = Scenario::Stationary;
    c.model.n_nodes = 10;
    c.model.order = 2;
    c.model.edge_prob = 0.2;
    c.model.noise_std = 0.01;
    c.estimators.algorithms = {Algorithm::Tiso, Algorithm::Tirso, Algorithm::Osgd, Algorithm::PgdTirso};
    c.estimators.lambdas = {1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3};
    c.estimators.forgetting = {0.99};
    c.estimators.schedules = {{Kind::Lipschitz, 0.1, 8}};
    c.estimators.pgd_iterations = 5;
    c.run.length = 3000;
    c.run.runs = desk_scale ? 30 : 200;
    c.run.window_first = -600;
    c.run.snapshot_stride = 20;
  } else if (name == "fig6_7_transition") {
    c.scenario = Scenario::SmoothTransition;
    c.model.n_nodes = 12;
    c.model.order = 2;
    c.model.edge_prob = 0.2;
    c.model.noise_std = 0.005;
    c.model.kappa = 0.99;
    c.model.t_break = 1000;
    c.estimators.algorithms = {Algorithm::Tirso};
    c.estimators.lambdas = {1e-6};
    c.estimators.forgetting = {0.9, 0.95, 0.98, 0.99};
    c.estimators.schedules = {{Kind::Adaptive, 0.15, 8}};
    c.run.length = desk_scale ? 2000 : 3000;
    c.run.runs = desk_scale ? 30 : 300;
    c.run.window_first = -200;
  } else if (name == "real_forecast") {
    c.scenario = Scenario::RealCsv;
    c.model.order = 8;
    c.estimators.algorithms = {Algorithm::Tirso};
    c.estimators.lambdas = {1e-4, 1e-3, 1e-2, 1e-1};
    c.estimators.forgetting = {0.9};
    c.estimators.schedules = {{Kind::Adaptive, 0.25, 8}};
    c.data.sampling_interval = 10.0;
    c.run.length = 1440;  // 4 h at 10 s
    c.run.runs = 1;
    c.run.horizons = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown preset '" + name + "' (available: " + known + ")");
  }
  return c;
}

std::vector<Variant> expand_variants(const ExperimentConfig& cfg) {
  std::vector<Variant> out;
  for (const auto a : cfg.estimators.algorithms)
    for (const double lambda : cfg.estimators.lambdas)
      for (const double gamma : cfg.estimators.forgetting)
        for (const auto& s : cfg.estimators.schedules) {
          Variant v{a, lambda, gamma, s, {}};
          v.label = to_string(a);
          if (a == Algorithm::PgdTirso) v.label += "_k" + std::to_string(cfg.estimators.pgd_iterations);
          v.label += "_lambda" + short_number(lambda) + "_gamma" + short_number(gamma) + "_" + s.label();
          out.push_back(std::move(v));
        }
  return out;
}

EstimatorConfig estimator_config(const ExperimentConfig& cfg, const Variant& v, const StepSizeSchedule& schedule) {
  EstimatorConfig e;
  e.n_nodes = cfg.model.n_nodes;
  e.order = cfg.model.order;
  e.reg_lambda = v.lambda;
  e.forgetting = v.forgetting;
  e.init_phi_scale = cfg.estimators.init_phi_scale;
  e.schedule = schedule;
  return e;
}

bool needs_certificate(const ScheduleSpec& spec) {
  using Kind = ScheduleSpec::Kind;
  return spec.kind == Kind::Lipschitz || ((spec.kind == Kind::Diminishing || spec.kind == Kind::Doubling) && spec.value <= 0);
}

StepSizeSchedule resolve_schedule(const ScheduleSpec& spec, const BoundsCertificate* cert, Algorithm algorithm) {
  using Kind = ScheduleSpec::Kind;
  if (needs_certificate(spec)) require(cert != nullptr, "schedule " + spec.label() + " needs a certificate");
  const bool instantaneous = algorithm == Algorithm::Tiso || algorithm == Algorithm::Osgd;
  const double lipschitz = cert ? (instantaneous ? cert->l_instant : cert->l_max) : 0.0;
  switch (spec.kind) {
    case Kind::Constant:
      return step::Constant{spec.value};
    case Kind::Lipschitz:
      require(lipschitz > 0, "Lipschitz step needs L > 0");
      return step::Constant{spec.value / lipschitz};
    case Kind::Diminishing:
      if (spec.value > 0) return step::Diminishing{spec.value};
      require(cert->recursive_eigen_positive, "diminishing step needs a positive certificate eigenvalue floor");
      return step::Diminishing{cert->beta_tilde};
    case Kind::Doubling:
      if (spec.value > 0) return step::Doubling{spec.t0, spec.value};
      require(lipschitz > 0, "doubling step needs L > 0");
      return step::Doubling{spec.t0, std::sqrt(static_cast<double>(spec.t0)) / lipschitz};
    case Kind::Adaptive:
      return step::Adaptive{spec.value};
  }
  return step::Adaptive{spec.value};
}

}  // namespace tirso
