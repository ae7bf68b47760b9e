#include <doctest.h>

#include <tirso/estimators.hpp>
#include <tirso/graph.hpp>
#include <tirso/model.hpp>
#include <tirso/regret.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

using namespace tirso;

namespace {

MatrixXd lag_block(std::initializer_list<std::initializer_list<double>> rows) {
  MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

VectorXd random_vector(std::mt19937_64& rng, Index n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

}  // namespace

TEST_CASE("regressor ordering") {
  CHECK(build_regressor(lag_block({{1, 2}, {3, 4}})) == (VectorXd(4) << 1, 3, 2, 4).finished());
  CHECK(build_regressor(lag_block({{5, -1, 2}})) == (VectorXd(3) << 5, -1, 2).finished());
  CHECK(build_regressor(MatrixXd::Zero(3, 2)).isZero(0));

  LagBuffer<double> buf(2, 2);
  CHECK_FALSE(buf.full());
  buf.push(Eigen::Vector2d(3, 4));
  buf.push(Eigen::Vector2d(1, 2));
  CHECK(buf.full());
  CHECK(buf.regressor() == (VectorXd(4) << 1, 3, 2, 4).finished());
  CHECK_THROWS_AS(buf.push(Eigen::Vector3d(1, 2, 3)), std::invalid_argument);
}

TEST_CASE("regressor inner product is the VAR prediction") {
  std::mt19937_64 rng(3);
  const Index n = 3, order = 2;
  VarParameters<double> p(n, order);
  for (Index k = 1; k <= order; ++k) p.lag(k) = MatrixXd::Random(n, n);
  const MatrixXd lags = MatrixXd::Random(order, n);
  const VectorXd g = build_regressor(lags);
  const MatrixXd a = p.regression_matrix();
  for (Index node = 0; node < n; ++node) {
    double direct = 0;
    for (Index src = 0; src < n; ++src)
      for (Index k = 1; k <= order; ++k) direct += p.coeff(node, src, k) * lags(k - 1, src);
    CHECK(a.row(node).dot(g) == doctest::Approx(direct).epsilon(1e-14));
  }
}

TEST_CASE("node estimate group view round trip") {
  const GroupLayout layout{3, 2};
  const VectorXd v = (VectorXd(6) << 1, 2, 3, 4, 5, 6).finished();
  const NodeEstimate<double> e(layout, 1, v);
  CHECK(e.group(1) == Eigen::Vector2d(3, 4));
  const auto rebuilt = NodeEstimate<double>::from_groups(layout, 1, e.groups());
  CHECK(rebuilt.values() == v);
  CHECK_THROWS_AS(NodeEstimate<double>(layout, 0, VectorXd::Zero(5)), std::invalid_argument);
}

TEST_CASE("group shrink hand cases") {
  const GroupLayout layout{2, 2};
  VectorXd f(4);
  f << 9, -7, 3, 4;
  const VectorXd out = group_shrink(f, layout, Eigen::Vector2d(1, 1), 0);
  CHECK(out.head(2) == f.head(2));
  CHECK(out(2) == doctest::Approx(2.4));
  CHECK(out(3) == doctest::Approx(3.2));

  f << 0, 0, 0.3, 0.4;
  CHECK(group_shrink(f, layout, Eigen::Vector2d(1, 1), 0).isZero(0));
  f << 0, 0, 0, 0;
  CHECK(group_shrink(f, layout, Eigen::Vector2d(0, 0), 0).isZero(0));
  // Exactly at the threshold the group is zeroed.
  f << 1, 1, 3, 4;
  CHECK(group_shrink(f, layout, Eigen::Vector2d(0, 5), 0).tail(2).isZero(0));
}

TEST_CASE("group shrink properties") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  const GroupLayout layout{4, 3};
  for (int trial = 0; trial < 200; ++trial) {
    const VectorXd f = random_vector(rng, layout.dim());
    VectorXd shrink(4);
    for (Index g = 0; g < 4; ++g) shrink(g) = u(rng);
    const Index self = trial % 4;
    const VectorXd out = group_shrink(f, layout, shrink, self);
    const VectorXd wider = group_shrink(f, layout, (1.5 * shrink).eval(), self);
    for (Index g = 0; g < 4; ++g) {
      const double in_norm = f.segment(layout.offset(g), 3).norm();
      const double out_norm = out.segment(layout.offset(g), 3).norm();
      if (g == self) {
        CHECK(out.segment(layout.offset(g), 3) == f.segment(layout.offset(g), 3));
      } else {
        CHECK(out_norm <= in_norm);
        if (out_norm == 0) CHECK(wider.segment(layout.offset(g), 3).isZero(0));
      }
    }
  }
}

TEST_CASE("tiso gradient") {
  const VectorXd g = (VectorXd(3) << 1, -2, 0.5).finished();
  CHECK(tiso_gradient<double>(VectorXd::Zero(3), g, 2.0) == -2.0 * g);
  CHECK(tiso_gradient<double>(VectorXd::Ones(3), VectorXd::Zero(3), 2.0).isZero(0));

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const VectorXd a = random_vector(rng, 6), gg = random_vector(rng, 6);
    const double y = random_vector(rng, 1)(0);
    auto loss = [&](const VectorXd& x) { return 0.5 * std::pow(y - gg.dot(x), 2); };
    const VectorXd v = tiso_gradient<double>(a, gg, y);
    const double h = 1e-6;
    for (Index i = 0; i < 6; ++i) {
      VectorXd up = a, dn = a;
      up(i) += h;
      dn(i) -= h;
      const double fd = (loss(up) - loss(dn)) / (2 * h);
      CHECK(std::abs(fd - v(i)) <= 1e-6 * std::max(1.0, std::abs(v(i))));
    }
  }
}

TEST_CASE("tiso: five-step transcript") {
  EstimatorConfig cfg;
  cfg.n_nodes = 2;
  cfg.order = 1;
  cfg.reg_lambda = 0.05;
  cfg.schedule = step::Constant{0.4};
  Tiso<double> est(cfg);
  const double ys[6][2] = {{0.5, -0.3}, {0.8, 0.1}, {-0.2, 0.6}, {0.4, -0.7}, {1.0, 0.2}, {-0.6, 0.9}};
  for (const auto& y : ys) est.step(Eigen::Vector2d(y[0], y[1]));
  // Independent scalar transcript of the same recursion.
  MatrixXd expected(2, 2);
  expected << -0.11139962368, -0.2803614223359999, 0.4652063590400001, -0.09364607539199994;
  CHECK((est.coefficients() - expected).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(est.time() == 6);
}

TEST_CASE("tiso: reduces to lms and keeps zero fixed point") {
  EstimatorConfig cfg;
  cfg.n_nodes = 1;
  cfg.order = 2;
  cfg.schedule = step::Constant{0.05};
  Tiso<double> est(cfg);
  std::mt19937_64 rng(9);
  VectorXd lms = VectorXd::Zero(2);
  std::vector<double> ys;
  for (int t = 0; t < 60; ++t) ys.push_back(random_vector(rng, 1)(0));
  for (std::size_t t = 0; t < ys.size(); ++t) {
    if (t >= 2) {
      const Eigen::Vector2d g(ys[t - 1], ys[t - 2]);
      lms -= 0.05 * g * (g.dot(lms) - ys[t]);
    }
    est.step(VectorXd::Constant(1, ys[t]));
  }
  CHECK((est.coefficients().row(0).transpose() - lms).cwiseAbs().maxCoeff() < 1e-14);

  EstimatorConfig zc;
  zc.n_nodes = 3;
  zc.order = 2;
  zc.reg_lambda = 0.1;
  Tiso<double> zero(zc);
  Tirso<double> zero_r(zc);
  for (int t = 0; t < 40; ++t) {
    zero.step(VectorXd::Zero(3));
    zero_r.step(VectorXd::Zero(3));
  }
  CHECK(zero.coefficients().isZero(0));
  CHECK(zero_r.coefficients().isZero(0));
}

TEST_CASE("recursive statistics match weighted sums") {
  const Index n = 5, order = 2;
  const double gamma = 0.99, mu = 1 - gamma, sigma2 = 0.3;
  const auto mask = generate_er_graph(n, 0.3, 1);
  const auto series = simulate_var(sample_var_coefficients(mask, order, 2), 52, 1.0, 3).samples;
  EstimatorConfig cfg;
  cfg.n_nodes = n;
  cfg.order = order;
  cfg.forgetting = gamma;
  cfg.init_phi_scale = sigma2;
  Tirso<double> est(cfg);
  for (Index t = 0; t < series.rows(); ++t) {
    est.step(series.row(t).transpose());
    if (t < order) continue;
    MatrixXd phi = std::pow(gamma, static_cast<double>(t - order + 1)) * sigma2 * MatrixXd::Identity(n * order, n * order);
    MatrixXd r = MatrixXd::Zero(n * order, n);
    for (Index tau = order; tau <= t; ++tau) {
      VectorXd g(n * order);
      for (Index src = 0; src < n; ++src)
        for (Index k = 1; k <= order; ++k) g(src * order + k - 1) = series(tau - k, src);
      const double w = mu * std::pow(gamma, static_cast<double>(t - tau));
      phi += w * g * g.transpose();
      r += w * g * series.row(tau);
    }
    CHECK((est.statistics()->phi - phi).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((est.statistics()->cross - r).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(est.statistics()->phi == est.statistics()->phi.transpose());
  }
}

TEST_CASE("recursive statistics: zero prior and decaying cross term") {
  auto s = RecursiveStatistics<double>::initial({2, 1}, 0.9, 0.0);
  const Eigen::Vector2d g(1.5, -2.0), y(0.5, 1.0);
  s.update(g, y);
  CHECK(s.phi == ((1 - 0.9) * (g * g.transpose())).eval());
  const MatrixXd r0 = s.cross;
  for (int k = 1; k <= 10; ++k) {
    s.update(g, Eigen::Vector2d::Zero());
    CHECK((s.cross - std::pow(0.9, k) * r0).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("tirso gradient") {
  const GroupLayout layout{2, 2};
  const VectorXd a = (VectorXd(4) << 1, -1, 2, 0.5).finished();
  CHECK(tirso_gradient<double>(MatrixXd::Identity(4, 4), VectorXd::Zero(4), a) == a);
  const VectorXd r = (VectorXd(4) << 3, 1, 0, 2).finished();
  CHECK(tirso_gradient<double>(MatrixXd::Identity(4, 4), r, VectorXd::Zero(4)) == -r);

  // Finite differences of the directly summed exponentially weighted loss.
  std::mt19937_64 rng(17);
  const double gamma = 0.95, mu = 1 - gamma, sigma2 = 0.2;
  for (int trial = 0; trial < 20; ++trial) {
    const Index steps = 15, n = 2, order = 2;
    std::vector<VectorXd> gs, ys;
    for (Index k = 0; k < steps; ++k) {
      gs.push_back(random_vector(rng, n * order));
      ys.push_back(random_vector(rng, n));
    }
    auto s = RecursiveStatistics<double>::initial(layout, gamma, sigma2);
    for (Index k = 0; k < steps; ++k) s.update(gs[k], ys[k]);
    const Index node = trial % 2;
    auto loss = [&](const VectorXd& x) {
      double v = 0.5 * std::pow(gamma, static_cast<double>(steps)) * sigma2 * x.squaredNorm();
      for (Index k = 0; k < steps; ++k)
        v += mu * std::pow(gamma, static_cast<double>(steps - 1 - k)) * 0.5 * std::pow(ys[k](node) - gs[k].dot(x), 2);
      return v;
    };
    const VectorXd x = random_vector(rng, n * order);
    const VectorXd v = tirso_gradient<double>(s.phi, s.cross.col(node), x);
    const double h = 1e-6;
    for (Index i = 0; i < x.size(); ++i) {
      VectorXd up = x, dn = x;
      up(i) += h;
      dn(i) -= h;
      const double fd = (loss(up) - loss(dn)) / (2 * h);
      CHECK(std::abs(fd - v(i)) <= 1e-6 * std::max(1.0, std::abs(v(i))));
    }
  }
}

TEST_CASE("tirso: unregularized fixed point is the linear solve") {
  std::mt19937_64 rng(23);
  const GroupLayout layout{2, 2};
  MatrixXd b = MatrixXd::Random(4, 4);
  const MatrixXd phi = b * b.transpose() + 0.5 * MatrixXd::Identity(4, 4);
  const MatrixXd cross = MatrixXd::Random(4, 2);
  MatrixXd coeffs = MatrixXd::Zero(2, 4);
  const double alpha = 1.0 / Eigen::SelfAdjointEigenSolver<MatrixXd>(phi).eigenvalues().maxCoeff();
  for (int k = 0; k < 5000; ++k) prox_gradient_sweep(coeffs, phi, cross, alpha, MatrixXd::Zero(2, 2).eval(), layout);
  const MatrixXd solved = phi.ldlt().solve(cross).transpose();
  CHECK((coeffs - solved).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("tirso: one step equals an independent proximal-gradient step") {
  std::mt19937_64 rng(29);
  const Index n = 4, order = 2;
  EstimatorConfig cfg;
  cfg.n_nodes = n;
  cfg.order = order;
  cfg.reg_lambda = 0.05;
  cfg.schedule = step::Constant{0.3};
  cfg.init_phi_scale = 0.5;
  Tirso<double> est(cfg);
  for (int t = 0; t < 30; ++t) {
    const VectorXd y = random_vector(rng, n);
    if (!est.ready()) {
      est.step(y);
      continue;
    }
    const MatrixXd before = est.coefficients();
    est.prepare(y);
    const auto* s = est.statistics();
    MatrixXd expected(n, n * order);
    for (Index node = 0; node < n; ++node) {
      const VectorXd a = before.row(node).transpose();
      const VectorXd f = a - 0.3 * (s->phi * a - s->cross.col(node));
      for (Index src = 0; src < n; ++src) {
        VectorXd grp = f.segment(src * order, order);
        if (src != node) {
          const double nr = grp.norm();
          grp = nr <= 0.3 * 0.05 ? VectorXd::Zero(order) : ((1 - 0.3 * 0.05 / nr) * grp).eval();
        }
        expected.row(node).segment(src * order, order) = grp.transpose();
      }
    }
    est.commit();
    CHECK((est.coefficients() - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("tirso: checkpoint restore continues identically") {
  const auto mask = generate_er_graph(4, 0.3, 41);
  const auto data = simulate_var(sample_var_coefficients(mask, 2, 42), 200, 1.0, 43).samples;
  EstimatorConfig cfg;
  cfg.n_nodes = 4;
  cfg.order = 2;
  cfg.reg_lambda = 0.01;
  cfg.schedule = step::Adaptive{0.5};
  Tirso<double> a(cfg);
  for (Index t = 0; t < 100; ++t) a.step(data.row(t).transpose());
  Tirso<double> b(cfg, a.state());
  for (Index t = 100; t < 200; ++t) {
    a.step(data.row(t).transpose());
    b.step(data.row(t).transpose());
  }
  // The power iteration warm start is not part of the state, so the restored
  // estimator may differ in the last few bits of the step size.
  CHECK((a.coefficients() - b.coefficients()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(a.time() == b.time());
}

TEST_CASE("step sizes") {
  CHECK(step_size_at(step::Constant{0.1}, 7).value == 0.1);
  CHECK(step_size_at(step::Diminishing{2.0}, 5).value == doctest::Approx(0.1));
  const MatrixXd four = 4 * MatrixXd::Identity(3, 3);
  CHECK(step_size_at<double>(step::Adaptive{0.25}, 3, four).value == doctest::Approx(0.0625));
  for (Index t = 9; t <= 16; ++t) CHECK(step_size_at(step::Doubling{8, 1.0}, t).value == doctest::Approx(1 / std::sqrt(8.0)));
  CHECK(step_size_at(step::Doubling{8, 1.0}, 17).value == doctest::Approx(1 / std::sqrt(16.0)));
  CHECK(step_size_at(step::Doubling{8, 1.0}, 4).value == doctest::Approx(1 / std::sqrt(8.0)));
  CHECK(doubling_window(8, 8) == 0);
  CHECK(doubling_window(9, 8) == 1);
  CHECK(doubling_window(33, 8) == 3);
  const StepSize degenerate = step_size_at<double>(step::Adaptive{0.5}, 3, MatrixXd::Zero(2, 2).eval());
  CHECK(degenerate.degenerate);
  CHECK(degenerate.value == doctest::Approx(0.5 / 1e-12));
  CHECK_THROWS_AS(step_size_at(step::Adaptive{0.5}, 3), std::invalid_argument);
}

TEST_CASE("power iteration") {
  CHECK(lambda_max_power_iteration<double>(MatrixXd::Identity(4, 4)).value == doctest::Approx(1.0));
  CHECK(lambda_max_power_iteration<double>(Eigen::Vector3d(1, 2, 3).asDiagonal().toDenseMatrix()).value == doctest::Approx(3.0));
  const MatrixXd zero = MatrixXd::Zero(3, 3);
  CHECK(lambda_max_power_iteration<double>(zero).value == 0.0);
  for (int seed = 0; seed < 10; ++seed) {
    std::srand(static_cast<unsigned>(seed + 1));
    const MatrixXd b = MatrixXd::Random(20, 20);
    const MatrixXd psd = b * b.transpose();
    const double truth = Eigen::SelfAdjointEigenSolver<MatrixXd>(psd).eigenvalues().maxCoeff();
    const auto est = lambda_max_power_iteration<double>(psd);
    // Small eigengaps may exhaust the budget; the estimate is still accurate.
    CHECK(std::abs(est.value - truth) / truth < 1e-6);
    if (est.converged) CHECK(lambda_max_power_iteration<double>(psd, est.vector).iterations == 1);
  }
  // Two nearly equal top eigenvalues and a tiny budget: reported as approximate.
  const MatrixXd close = Eigen::Vector3d(1.0, 0.999999, 0.1).asDiagonal().toDenseMatrix();
  CHECK_FALSE(lambda_max_power_iteration<double>(close, VectorXd{}, 5).converged);
}

TEST_CASE("graph snapshot") {
  const GroupLayout layout{3, 2};
  MatrixXd coeffs = MatrixXd::Zero(3, 6);
  // Exactly-zero groups are never edges, even at threshold 0.
  CHECK(graph_snapshot(coeffs, layout, 0.0).edges.empty());
  coeffs.setConstant(1e-9);
  CHECK(graph_snapshot(coeffs, layout, 0.0).edges.size() == 6);
  CHECK(graph_snapshot(coeffs, layout, 0.1).edges.empty());
  coeffs.setZero();
  coeffs(0, 2) = 0.7;  // a_{1,2}: source node index 1 feeds target 0
  coeffs(1, 2) = 0.9;  // self group of node 1
  const auto one = graph_snapshot(coeffs, layout, 0.5);
  REQUIRE(one.edges.size() == 1);
  CHECK(one.edges[0].source == 1);
  CHECK(one.edges[0].target == 0);
  CHECK(one.edges[0].weight == doctest::Approx(0.7));
  CHECK(one.self_weights(1) == doctest::Approx(0.9));
}

TEST_CASE("iterates stay bounded under the diminishing schedule") {
  const Index n = 4, order = 2;
  const auto mask = generate_er_graph(n, 0.3, 51);
  MatrixXd data = simulate_var(sample_var_coefficients(mask, order, 52), 1500, 1.0, 53).samples;
  const auto cert = bounds_certificate(data, order, {0.99, 1.0, std::nullopt});
  REQUIRE(cert.recursive_eigen_positive);
  EstimatorConfig cfg;
  cfg.n_nodes = n;
  cfg.order = order;
  cfg.reg_lambda = 1e-3;
  cfg.init_phi_scale = 1.0;
  cfg.schedule = step::Diminishing{cert.beta_tilde};
  Tirso<double> est(cfg);
  const double cap = std::sqrt(static_cast<double>(n * order)) * cert.b_y / cert.beta_tilde;
  for (Index t = 0; t < data.rows(); ++t) {
    est.step(data.row(t).transpose());
    for (Index node = 0; node < n; ++node) CHECK(est.coefficients().row(node).norm() <= cap);
  }
}
