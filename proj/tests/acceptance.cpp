// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Artifacts go to $TIRSO_ACCEPTANCE_DIR (default: a
// directory under the system temp path).

#include <tirso/harness/experiment.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

using namespace tirso;
namespace fs = std::filesystem;
using io::Json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

fs::path workspace() {
  if (const char* env = std::getenv("TIRSO_ACCEPTANCE_DIR")) return env;
  return fs::temp_directory_path() / "tirso_acceptance";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Regressor for sample t: entry src*P + (p-1) is y_src[t-p].
VectorXd regressor_at(const MatrixXd& y, Index t, Index order) {
  VectorXd g(y.cols() * order);
  for (Index src = 0; src < y.cols(); ++src)
    for (Index p = 1; p <= order; ++p) g(src * order + p - 1) = y(t - p, src);
  return g;
}

VectorXd shrink_reference(const VectorXd& f, Index n_nodes, Index order, const VectorXd& amount, Index self) {
  VectorXd out = f;
  for (Index g = 0; g < n_nodes; ++g) {
    if (g == self) continue;
    const double norm = f.segment(g * order, order).norm();
    if (norm <= amount(g))
      out.segment(g * order, order).setZero();
    else
      out.segment(g * order, order) *= 1 - amount(g) / norm;
  }
  return out;
}

// ---------------------------------------------------------------- criterion 1

Outcome recursion_fidelity() {
  const Index n = 5, order = 2, steps = 50;
  const double gamma = 0.99, sigma2 = 0.01, mu = 1 - gamma;
  const auto mask = generate_er_graph(n, 0.3, 101);
  const MatrixXd y = simulate_var(sample_var_coefficients(mask, order, 102, 0.8), order + steps, 1.0, 103).samples;
  EstimatorConfig cfg;
  cfg.n_nodes = n;
  cfg.order = order;
  cfg.forgetting = gamma;
  cfg.init_phi_scale = sigma2;
  cfg.reg_lambda = 1e-3;
  cfg.schedule = step::Constant{0.05};
  Tirso<double> est(cfg);
  double worst = 0;
  for (Index t = 0; t < y.rows(); ++t) {
    est.step(y.row(t).transpose());
    if (t < order) continue;
    MatrixXd phi = std::pow(gamma, static_cast<double>(t - order + 1)) * sigma2 * MatrixXd::Identity(n * order, n * order);
    MatrixXd r = MatrixXd::Zero(n * order, n);
    for (Index tau = order; tau <= t; ++tau) {
      const VectorXd g = regressor_at(y, tau, order);
      const double w = mu * std::pow(gamma, static_cast<double>(t - tau));
      phi += w * g * g.transpose();
      r += w * g * y.row(tau);
    }
    worst = std::max({worst, (est.statistics()->phi - phi).cwiseAbs().maxCoeff(), (est.statistics()->cross - r).cwiseAbs().maxCoeff()});
  }
  return {worst <= 1e-10, "max abs deviation " + num(worst) + " over " + std::to_string(steps) + " steps"};
}

// ---------------------------------------------------------------- criterion 2

Outcome comid_equivalence() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(-1, 1), pos(0.01, 0.5), gam(0.9, 0.999);
  const Index n = 4, order = 2, dim = n * order;
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto rnd = [&](Index r, Index c) { return MatrixXd::NullaryExpr(r, c, [&] { return u(rng); }); };
    EstimatorConfig cfg;
    cfg.n_nodes = n;
    cfg.order = order;
    cfg.reg_lambda = pos(rng);
    cfg.forgetting = gam(rng);
    cfg.schedule = step::Constant{pos(rng)};
    const double alpha = std::get<step::Constant>(cfg.schedule).alpha;
    TirsoState<double> s;
    const MatrixXd m = rnd(dim, dim);
    s.stats.phi = m * m.transpose() / static_cast<double>(dim) + 0.1 * MatrixXd::Identity(dim, dim);
    s.stats.cross = rnd(dim, n);
    s.stats.energy = rnd(n, 1).cwiseAbs();
    s.stats.forgetting = cfg.forgetting;
    s.estimates = rnd(n, dim);
    // Some groups start at zero or inside the threshold.
    s.estimates.block(0, order, 1, order).setZero();
    s.estimates.block(1, 0, 1, order) *= 1e-3;
    s.t = order + 3;
    s.lag_buffer = LagBuffer<double>(rnd(order, n), order);
    const VectorXd y = rnd(n, 1);

    Tirso<double> est(cfg, s);
    est.step(y);

    VectorXd g(dim);
    for (Index src = 0; src < n; ++src)
      for (Index p = 0; p < order; ++p) g(src * order + p) = s.lag_buffer.lags()(p, src);
    const double gm = cfg.forgetting, mu = 1 - gm;
    MatrixXd phi = gm * s.stats.phi + mu * g * g.transpose();
    phi = (0.5 * (phi + phi.transpose())).eval();
    const MatrixXd r = gm * s.stats.cross + mu * g * y.transpose();
    for (Index node = 0; node < n; ++node) {
      const VectorXd a = s.estimates.row(node).transpose();
      const VectorXd forward = a - alpha * (phi * a - r.col(node));
      const VectorXd expected = shrink_reference(forward, n, order, VectorXd::Constant(n, alpha * cfg.reg_lambda), node);
      worst = std::max(worst, (est.coefficients().row(node).transpose() - expected).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= 1e-12, "max abs deviation " + num(worst) + " over 100 random states"};
}

// ---------------------------------------------------------------- criterion 3

Outcome gradient_checks() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(-2, 2);
  double worst = 0;
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const Index dim = 2 + trial % 9;
    auto vec = [&] { return VectorXd::NullaryExpr(dim, [&] { return u(rng); }); };
    const VectorXd a = vec(), g = vec(), r = vec();
    const double y = u(rng);
    const MatrixXd m = MatrixXd::NullaryExpr(dim, dim, [&] { return u(rng); });
    const MatrixXd phi = m * m.transpose();
    auto tiso_loss = [&](const VectorXd& x) { return 0.5 * std::pow(y - g.dot(x), 2); };
    auto tirso_loss = [&](const VectorXd& x) { return 0.5 * x.dot(phi * x) - r.dot(x); };
    auto central = [&](const std::function<double(const VectorXd&)>& f) {
      VectorXd d(dim);
      for (Index i = 0; i < dim; ++i) {
        VectorXd up = a, down = a;
        up(i) += h;
        down(i) -= h;
        d(i) = (f(up) - f(down)) / (2 * h);
      }
      return d;
    };
    const VectorXd v1 = tiso_gradient<double>(a, g, y), v2 = tirso_gradient<double>(phi, r, a);
    worst = std::max(worst, (central(tiso_loss) - v1).norm() / std::max(v1.norm(), 1e-300));
    worst = std::max(worst, (central(tirso_loss) - v2).norm() / std::max(v2.norm(), 1e-300));
  }
  return {worst < 1e-6, "max relative error " + num(worst) + " over 2 x 100 instances"};
}

// ---------------------------------------------------------------- criterion 4

Outcome shrinkage_properties() {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok && failures.size() < 5) failures.push_back(what);
  };
  {
    const GroupLayout l{2, 2};
    const VectorXd f = (VectorXd(4) << 7, -7, 3, 4).finished();
    const VectorXd out = group_shrink(f, l, VectorXd::Ones(2), 0);
    expect(std::abs(out(2) - 2.4) < 1e-15 && std::abs(out(3) - 3.2) < 1e-15, "hand case [3,4]");
    expect(out(0) == 7 && out(1) == -7, "hand case self group");
    const VectorXd small = group_shrink((VectorXd(4) << 1, 2, 0.3, 0.4).finished(), l, VectorXd::Ones(2), 0);
    expect(small(2) == 0 && small(3) == 0, "hand case [0.3,0.4]");
    const VectorXd zero = group_shrink(VectorXd::Zero(4), l, VectorXd::Zero(2), 0);
    expect(zero.isZero(0), "hand case zero group");
    const VectorXd self = group_shrink((VectorXd(4) << 1e-9, -3, 0, 0).finished(), l, VectorXd::Constant(2, 1e9), 0);
    expect(self(0) == 1e-9 && self(1) == -3, "hand case self group under large shrink");
  }
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(-1, 1), scale(0, 3);
  double worst_expansion = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 1 + trial % 6, order = 1 + (trial / 6) % 4, dim = n * order;
    const GroupLayout l{n, order};
    const Index self = static_cast<Index>(rng() % static_cast<std::uint64_t>(n));
    auto draw = [&] {
      VectorXd v(dim);
      for (Index g = 0; g < n; ++g) {
        const double s = trial % 7 == 0 && g == 0 ? 0.0 : scale(rng);
        for (Index p = 0; p < order; ++p) v(g * order + p) = s * u(rng);
      }
      return v;
    };
    const VectorXd x = draw(), z = draw();
    VectorXd amount(n);
    for (Index g = 0; g < n; ++g) amount(g) = trial % 5 == 0 ? 0.0 : scale(rng);
    const VectorXd sx = group_shrink(x, l, amount, self), sz = group_shrink(z, l, amount, self);
    worst_expansion = std::max(worst_expansion, (sx - sz).norm() - (x - z).norm());
    for (Index g = 0; g < n; ++g) {
      const auto in = x.segment(g * order, order);
      const auto out = sx.segment(g * order, order);
      if (g == self) {
        expect(out == in, "self group changed");
      } else if (in.norm() <= amount(g)) {
        expect(out.isZero(0), "group at or below threshold not exactly zero");
      } else {
        expect((out - in * (1 - amount(g) / in.norm())).norm() <= 1e-14 * (1 + in.norm()), "group scaling");
      }
    }
  }
  expect(worst_expansion <= 1e-12, "non-expansiveness");
  std::string detail = "1000 random cases + hand cases, max expansion " + num(worst_expansion);
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty(), detail};
}

// ---------------------------------------------------------------- criterion 5

struct ReferenceSolution {
  VectorXd a;
  double objective = 0;
};

// Weighted least squares plus group penalty, solved by plain ISTA.
ReferenceSolution reference_hindsight(const MatrixXd& y, Index node, Index order, double lambda, const std::function<double(Index)>& w) {
  const Index n = y.cols(), dim = n * order;
  MatrixXd h = MatrixXd::Zero(dim, dim);
  VectorXd b = VectorXd::Zero(dim);
  double c = 0;
  for (Index t = order; t < y.rows(); ++t) {
    const VectorXd g = regressor_at(y, t, order);
    h += w(t) * g * g.transpose();
    b += w(t) * y(t, node) * g;
    c += 0.5 * w(t) * y(t, node) * y(t, node);
  }
  const double step = 1 / Eigen::SelfAdjointEigenSolver<MatrixXd>(h, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  VectorXd amount = VectorXd::Constant(n, step * lambda);
  VectorXd a = VectorXd::Zero(dim);
  for (int k = 0; k < 500000; ++k) {
    const VectorXd next = shrink_reference(a - step * (h * a - b), n, order, amount, node);
    const double moved = (next - a).norm();
    a = next;
    if (moved < 1e-14) break;
  }
  double penalty = 0;
  for (Index g = 0; g < n; ++g)
    if (g != node) penalty += lambda * a.segment(g * order, order).norm();
  return {a, 0.5 * a.dot(h * a) - b.dot(a) + c + penalty};
}

Outcome asymptotic_equivalence(const MatrixXd& y) {
  const Index order = 2;
  const double lambda = 1e-4, gamma = 0.99;
  const std::vector<Index> totals{250, 500, 1000, 2000};
  std::vector<std::string> failures;
  double max_disagreement = 0, worst_ratio = 0;
  SolveOptions tight;
  tight.tol = 1e-12;
  tight.max_iter = 500000;
  for (Index node = 0; node < y.cols(); ++node) {
    const auto lib = asymptotic_gap(y, node, order, lambda, gamma, totals, tight);
    double prev_obj = HUGE_VAL, prev_min = HUGE_VAL;
    for (std::size_t k = 0; k < totals.size(); ++k) {
      const Index total = totals[k];
      const MatrixXd prefix = y.topRows(total);
      const double span = static_cast<double>(total - order);
      const auto plain = reference_hindsight(prefix, node, order, lambda, [&](Index) { return 1 / span; });
      const auto weighted = reference_hindsight(prefix, node, order, lambda,
                                                [&](Index t) { return (1 - std::pow(gamma, static_cast<double>(total - t))) / span; });
      const double obj_gap = std::abs(plain.objective - weighted.objective);
      const double min_gap = (plain.a - weighted.a).norm();
      const double b_y = prefix.cwiseAbs2().maxCoeff(), an = weighted.a.norm(), np = static_cast<double>(y.cols() * order);
      const double envelope = (0.5 * np * b_y * an * an + 0.5 * b_y + std::sqrt(np) * b_y * an) * (1 - std::pow(gamma, span)) / (span * (1 / gamma - 1));
      max_disagreement = std::max({max_disagreement, std::abs(lib[k].objective_gap - obj_gap), std::abs(lib[k].minimizer_gap - min_gap)});
      worst_ratio = std::max(worst_ratio, obj_gap / envelope);
      const std::string where = "node " + std::to_string(node) + " T=" + std::to_string(total);
      if (obj_gap > prev_obj) failures.push_back(where + ": objective gap increased");
      if (min_gap > prev_min) failures.push_back(where + ": minimizer gap increased");
      if (obj_gap > envelope) failures.push_back(where + ": objective gap above envelope");
      if (!lib[k].converged) failures.push_back(where + ": library solver did not converge");
      prev_obj = obj_gap;
      prev_min = min_gap;
    }
  }
  if (max_disagreement > 1e-8) failures.push_back("library and reference gaps differ by " + num(max_disagreement));
  std::string detail = "5 nodes x T in {250,500,1000,2000}; max gap/envelope " + num(worst_ratio) + ", library vs reference " + num(max_disagreement);
  for (std::size_t i = 0; i < std::min<std::size_t>(failures.size(), 4); ++i) detail += "; " + failures[i];
  return {failures.empty(), detail};
}

// ----------------------------------------------------------- criteria 6 to 8

ExperimentConfig bounds_config(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.model.n_nodes = 5;
  c.model.order = 2;
  c.model.edge_prob = 0.2;
  c.model.noise_std = 1.0;
  c.model.target_radius = 0.7;
  c.estimators.algorithms = {Algorithm::Tirso};
  c.estimators.lambdas = {1e-4};
  c.estimators.forgetting = {0.99};
  c.estimators.init_phi_scale = 1.0;
  c.run.runs = 5;
  c.run.seed = 2024;
  c.output.series = "all";
  c.output.metrics = {"nmsd"};
  return c;
}

struct IndependentCertificate {
  double b_y = 0, l_max = 0, beta_tilde = HUGE_VAL;
};

IndependentCertificate recompute_certificate(const MatrixXd& y, Index order, double gamma, double sigma2) {
  IndependentCertificate c;
  const Index dim = y.cols() * order;
  c.b_y = y.cwiseAbs2().maxCoeff();
  MatrixXd phi = sigma2 * MatrixXd::Identity(dim, dim);
  for (Index t = order; t < y.rows(); ++t) {
    const VectorXd g = regressor_at(y, t, order);
    phi = gamma * phi + (1 - gamma) * g * g.transpose();
    const VectorXd ev = Eigen::SelfAdjointEigenSolver<MatrixXd>(phi, Eigen::EigenvaluesOnly).eigenvalues();
    c.l_max = std::max(c.l_max, ev.maxCoeff());
    c.beta_tilde = std::min(c.beta_tilde, ev.minCoeff());
  }
  return c;
}

const Json& certificate_for(const Json& summary, Index run) {
  for (const auto& c : summary.at("certificates"))
    if (c.at("run") == run) return c;
  throw std::runtime_error("no certificate for run " + std::to_string(run));
}

MatrixXd stored_series(const fs::path& dir, Index run) {
  char name[32];
  std::snprintf(name, sizeof name, "data/run_%04ld.csv", static_cast<long>(run));
  return io::read_series_csv(dir / name);
}

double relative(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

Outcome logarithmic_regret(const ExperimentResult& r) {
  const auto& cfg = r.config;
  const Index order = cfg.model.order, total = cfg.run.length;
  const double np = static_cast<double>(cfg.model.n_nodes * order);
  const Json& variant = r.summary.at("variants").at(0);
  std::vector<std::string> failures;
  if (!r.attrition.empty()) failures.push_back(std::to_string(r.attrition.size()) + " failed runs: " + r.attrition.front().message);
  Index checked = 0;
  double worst = -HUGE_VAL;
  for (const auto& reg : variant.at("regret")) {
    const Index run = reg.at("run").get<Index>();
    const auto ind = recompute_certificate(stored_series(*r.directory, run), order, cfg.estimators.forgetting[0], cfg.estimators.init_phi_scale);
    const Json& cert = certificate_for(r.summary, run);
    if (relative(cert.at("beta_tilde"), ind.beta_tilde) > 1e-9 || relative(cert.at("l_max"), ind.l_max) > 1e-9)
      failures.push_back("run " + std::to_string(run) + ": certificate differs from recomputation");
    const double beta = ind.beta_tilde, kappa = ind.l_max / beta;
    const double g_tilde = (1 + kappa) * std::sqrt(np) * ind.b_y;
    const double b_a = (ind.b_y * std::sqrt(np) + std::sqrt(ind.b_y * ind.b_y * np + beta * ind.b_y)) / beta;
    const double alpha_first = 1 / (beta * static_cast<double>(order - 1));
    const double rhs = g_tilde * g_tilde / (2 * beta) * (std::log(static_cast<double>(total - order + 1)) + 1) + b_a * b_a / (2 * alpha_first);
    const auto regret = reg.at("static_regret");
    for (Index n = 0; n < static_cast<Index>(regret.size()); ++n) {
      const double lhs = regret.at(n).is_null() ? HUGE_VAL : regret.at(n).get<double>();
      worst = std::max(worst, lhs / rhs);
      ++checked;
      if (!(lhs <= rhs)) failures.push_back("run " + std::to_string(run) + " node " + std::to_string(n) + ": " + num(lhs) + " > " + num(rhs));
    }
  }
  const Index expected = cfg.run.runs * cfg.model.n_nodes;
  if (checked != expected) failures.push_back(std::to_string(checked) + " of " + std::to_string(expected) + " node checks available");
  std::string detail = std::to_string(checked) + " node/seed checks, max R/bound " + num(worst);
  for (std::size_t i = 0; i < std::min<std::size_t>(failures.size(), 3); ++i) detail += "; " + failures[i];
  return {failures.empty(), detail};
}

Outcome sublinear_trend(const ExperimentResult& r) {
  std::vector<std::string> failures;
  if (!r.attrition.empty()) failures.push_back(std::to_string(r.attrition.size()) + " failed runs");
  Index checked = 0;
  for (const auto& variant : r.summary.at("variants")) {
    const std::string label = variant.at("label");
    for (const auto& reg : variant.at("regret")) {
      const Json& b = reg.at("window_boundaries");
      const std::size_t k = b.size();
      if (k < 3) {
        failures.push_back(label + ": fewer than three boundaries");
        continue;
      }
      double ratio[3];
      for (int i = 0; i < 3; ++i) {
        const Json& point = b.at(k - 3 + static_cast<std::size_t>(i));
        ratio[i] = point.at(1).get<double>() / std::sqrt(point.at(0).get<double>());
      }
      ++checked;
      if (!(ratio[1] <= ratio[0] && ratio[2] <= ratio[1]))
        failures.push_back(label + " run " + std::to_string(reg.at("run").get<Index>()) + ": " + num(ratio[0]) + ", " + num(ratio[1]) + ", " + num(ratio[2]));
    }
  }
  if (checked != 2 * r.config.run.runs) failures.push_back(std::to_string(checked) + " trends available");
  std::string detail = std::to_string(checked) + " algorithm/seed trends over the last three windows";
  for (std::size_t i = 0; i < std::min<std::size_t>(failures.size(), 3); ++i) detail += "; " + failures[i];
  return {failures.empty(), detail};
}

Outcome dynamic_tracking(const ExperimentResult& r) {
  const auto& cfg = r.config;
  const Json& variant = r.summary.at("variants").at(0);
  std::vector<std::string> failures;
  if (!r.attrition.empty()) failures.push_back(std::to_string(r.attrition.size()) + " failed runs");
  Index tracked = 0, ordered = 0;
  double worst = 0;
  for (const auto& reg : variant.at("regret")) {
    const Index run = reg.at("run").get<Index>();
    const auto ind = recompute_certificate(stored_series(*r.directory, run), cfg.model.order, cfg.estimators.forgetting[0], cfg.estimators.init_phi_scale);
    const double alpha = cfg.estimators.schedules[0].value / ind.l_max;
    if (alpha > 1 / ind.l_max) failures.push_back("step above 1/L");
    for (const auto& b : variant.at("bound_checks")) {
      if (b.at("run") != run || b.at("check") != "tracking") continue;
      const Index node = b.at("node").get<Index>();
      const double sigma = reg.at("max_minimizer_step").at(node).get<double>();
      const double rhs = sigma / (alpha * ind.beta_tilde);
      const double lhs = b.at("lhs").get<double>();
      worst = std::max(worst, lhs / rhs);
      ++tracked;
      if (!(lhs <= rhs)) failures.push_back("run " + std::to_string(run) + " node " + std::to_string(node) + ": tracking " + num(lhs) + " > " + num(rhs));
    }
    for (Index n = 0; n < cfg.model.n_nodes; ++n) {
      ++ordered;
      if (!(reg.at("dynamic_regret").at(n).get<double>() >= reg.at("static_regret").at(n).get<double>()))
        failures.push_back("run " + std::to_string(run) + " node " + std::to_string(n) + ": dynamic regret below static");
    }
  }
  const Index expected = cfg.run.runs * cfg.model.n_nodes;
  if (tracked != expected || ordered != expected) failures.push_back("missing node checks");
  std::string detail = std::to_string(tracked) + " tracking and " + std::to_string(ordered) + " ordering checks, max tail error/bound " + num(worst);
  for (std::size_t i = 0; i < std::min<std::size_t>(failures.size(), 3); ++i) detail += "; " + failures[i];
  return {failures.empty(), detail};
}

// ---------------------------------------------------------- criteria 9 to 11

Outcome stationary_reproduction(const ExperimentResult& r) {
  const auto& tiso = r.find(Algorithm::Tiso, 1e-6, 0.99);
  const auto& tirso = r.find(Algorithm::Tirso, 1e-6, 0.99);
  std::vector<std::string> failures;
  if (!r.attrition.empty()) failures.push_back(std::to_string(r.attrition.size()) + " failed runs");
  // (a)
  const bool faster = tirso.nmsd_half_time >= 0 && (tiso.nmsd_half_time < 0 || tirso.nmsd_half_time < tiso.nmsd_half_time);
  if (!faster) failures.push_back("(a) TIRSO not faster");
  // (b)
  for (const auto a : {Algorithm::Tiso, Algorithm::Tirso}) {
    const double mid = r.find(a, 1e-6, 0.99).nmsd_window;
    if (!(mid < r.find(a, 1e-2, 0.99).nmsd_window && mid < r.find(a, 1e-12, 0.99).nmsd_window)) failures.push_back("(b) " + to_string(a) + " lambda ordering");
  }
  // (c)
  for (const auto* v : {&tiso, &tirso})
    if (!(v->detection.available && v->detection.balanced.false_alarm < 0.1 && v->detection.balanced.miss < 0.1))
      failures.push_back("(c) " + to_string(v->variant.algorithm) + " has no delta with both rates below 0.1");
  std::string detail = "half-time TIRSO " + std::to_string(tirso.nmsd_half_time) + " vs TISO " + std::to_string(tiso.nmsd_half_time) +
                       "; window NMSD TIRSO " + num(r.find(Algorithm::Tirso, 1e-2, 0.99).nmsd_window) + "/" + num(tirso.nmsd_window) + "/" +
                       num(r.find(Algorithm::Tirso, 1e-12, 0.99).nmsd_window) + ", TISO " + num(r.find(Algorithm::Tiso, 1e-2, 0.99).nmsd_window) + "/" +
                       num(tiso.nmsd_window) + "/" + num(r.find(Algorithm::Tiso, 1e-12, 0.99).nmsd_window) + " (lambda 1e-2/1e-6/1e-12); best max(P_FA,P_MD) TISO " +
                       num(tiso.detection.balanced.worst()) + ", TIRSO " + num(tirso.detection.balanced.worst());
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty(), detail};
}

Outcome baseline_ordering(const ExperimentResult& r) {
  std::vector<std::string> failures;
  if (!r.attrition.empty()) failures.push_back(std::to_string(r.attrition.size()) + " failed runs");
  const auto* tiso = r.best(Algorithm::Tiso, "nmsd_window");
  const auto* osgd = r.best(Algorithm::Osgd, "nmsd_window");
  const auto* tirso = r.best(Algorithm::Tirso, "nmsd_window");
  const auto* tiso_sparse = r.best(Algorithm::Tiso, "eier_at_zero");
  const auto* osgd_sparse = r.best(Algorithm::Osgd, "eier_at_zero");
  if (!tiso || !osgd || !tirso || !tiso_sparse || !osgd_sparse) return {false, "missing variants"};
  if (!(tiso->nmsd_window <= osgd->nmsd_window)) failures.push_back("TISO NMSD above OSGD");
  if (!(tiso_sparse->zero_groups_mean > osgd_sparse->zero_groups_mean)) failures.push_back("TISO zero-group count not above OSGD");
  if (!(tirso->detection.eier <= osgd->detection.eier)) failures.push_back("TIRSO EIER above OSGD");
  char buf[512];
  std::snprintf(buf, sizeof buf, "NMSD TISO %.7g (%s) vs OSGD %.7g (%s); zero groups TISO %.4g vs OSGD %.4g; EIER TIRSO %.4g vs OSGD %.4g", tiso->nmsd_window,
                tiso->variant.label.c_str(), osgd->nmsd_window, osgd->variant.label.c_str(), tiso_sparse->zero_groups_mean, osgd_sparse->zero_groups_mean,
                tirso->detection.eier, osgd->detection.eier);
  std::string detail = buf;
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty(), detail};
}

Outcome transition_tracking(const ExperimentResult& r) {
  std::vector<std::string> failures;
  if (!r.attrition.empty()) failures.push_back(std::to_string(r.attrition.size()) + " failed runs");
  const Index tb = r.config.model.t_break;
  const auto& gammas = r.config.estimators.forgetting;
  std::string detail = "recovery t / final NMSD:";
  std::vector<Index> recovery;
  std::vector<double> final_nmsd;
  for (const double g : gammas) {
    const auto& v = r.find(Algorithm::Tirso, 1e-6, g);
    recovery.push_back(v.transition.recovery_t < 0 ? std::numeric_limits<Index>::max() : v.transition.recovery_t);
    final_nmsd.push_back(v.nmsd_window);
    detail += " gamma " + num(g) + ": " + std::to_string(v.transition.recovery_t) + " / " + num(v.nmsd_window) + ";";
  }
  const auto& mid = r.find(Algorithm::Tirso, 1e-6, 0.95);
  if (!(mid.transition.recovery_t >= 0 && mid.transition.recovery_t <= tb + 500)) failures.push_back("gamma 0.95 does not recover within 500 samples");
  for (std::size_t k = 1; k < gammas.size(); ++k) {
    if (recovery[k] < recovery[k - 1]) failures.push_back("higher gamma re-converged faster at gamma " + num(gammas[k]));
    if (!(final_nmsd[k] < final_nmsd[k - 1])) failures.push_back("final NMSD not lower at gamma " + num(gammas[k]));
  }
  for (const auto& f : failures) detail += " " + f + ";";
  return {failures.empty(), detail};
}

struct Experiment {
  std::string name;
  ExperimentConfig cfg;
  std::optional<ExperimentResult> result;
};

}  // namespace

int main() {
  const auto clock_start = std::chrono::steady_clock::now();
  const fs::path root = workspace();
  fs::remove_all(root);
  fs::create_directories(root);

  int failed = 0;
  auto report = [&](int id, const std::string& title, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  };

  std::vector<Experiment> experiments;
  {
    auto c6 = bounds_config("log_regret");
    c6.run.length = 2000;
    c6.estimators.schedules = {{ScheduleSpec::Kind::Diminishing, 0.0, 8}};
    c6.run.regret = RegretMode::Static;
    auto c7 = bounds_config("doubling_trend");
    c7.run.length = 4096;
    c7.estimators.algorithms = {Algorithm::Tiso, Algorithm::Tirso};
    c7.estimators.schedules = {{ScheduleSpec::Kind::Doubling, 0.0, 8}};
    c7.run.regret = RegretMode::Static;
    auto c8 = bounds_config("dynamic_tracking");
    c8.scenario = Scenario::Drifting;
    c8.model.drift_std = 1e-3;
    c8.run.length = 2000;
    c8.estimators.schedules = {{ScheduleSpec::Kind::Lipschitz, 1.0, 8}};
    c8.run.regret = RegretMode::Dynamic;
    experiments = {{"log_regret", c6, {}},
                   {"doubling_trend", c7, {}},
                   {"dynamic_tracking", c8, {}},
                   {"fig2", preset("fig2", true), {}},
                   {"fig4_baselines", preset("fig4_baselines", true), {}},
                   {"fig6_7_transition", preset("fig6_7_transition", true), {}}};
  }
  auto run = [&](std::size_t k) -> const ExperimentResult& {
    auto& e = experiments[k];
    if (!e.result) e.result = run_experiment(e.cfg, root / e.name / "a");
    return *e.result;
  };

  report(1, "recursion fidelity", recursion_fidelity);
  report(2, "COMID equals proximal gradient", comid_equivalence);
  report(3, "gradient checks", gradient_checks);
  report(4, "shrinkage operator", shrinkage_properties);
  report(5, "hindsight gap trend and envelope", [&] { return asymptotic_equivalence(generate_run_data(experiments[0].cfg, 0).samples); });
  report(6, "logarithmic regret bound", [&] { return logarithmic_regret(run(0)); });
  report(7, "doubling-trick sublinear trend", [&] { return sublinear_trend(run(1)); });
  report(8, "dynamic tracking", [&] { return dynamic_tracking(run(2)); });
  report(9, "stationary reproduction", [&] { return stationary_reproduction(run(3)); });
  report(10, "baseline ordering", [&] { return baseline_ordering(run(4)); });
  report(11, "smooth-transition tracking", [&] { return transition_tracking(run(5)); });
  report(12, "determinism", [&] {
    std::vector<std::string> differ;
    for (std::size_t k = 0; k < experiments.size(); ++k) {
      run(k);
      const auto& e = experiments[k];
      run_experiment(e.cfg, root / e.name / "b");
      if (slurp(root / e.name / "a" / "metrics.csv") != slurp(root / e.name / "b" / "metrics.csv")) differ.push_back(e.name);
    }
    std::string detail = std::to_string(experiments.size()) + " experiments rerun, metrics.csv ";
    if (differ.empty()) return Outcome{true, detail + "byte-identical"};
    for (const auto& d : differ) detail += "differs: " + d + " ";
    return Outcome{false, detail};
  });

  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  std::printf("%d of 12 criteria passed in %.0f s; artifacts under %s\n", 12 - failed, total, root.string().c_str());
  return failed == 0 ? 0 : 1;
}
