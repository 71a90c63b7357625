#include <doctest.h>

#include "rmld/analysis.hpp"

#include <unsupported/Eigen/MatrixFunctions>

using namespace rmld;

namespace {

Matrix random_spd(Eigen::Index d, Rng& rng) {
  Matrix a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = rng.gaussian();
  return a * a.transpose() + 0.1 * Matrix::Identity(d, d);
}

template <typename F>
double simpson(F f, double a, double b, int panels = 4000) {
  const double h = (b - a) / panels;
  double acc = f(a) + f(b);
  for (int i = 1; i < panels; ++i) acc += f(a + i * h) * (i % 2 ? 4 : 2);
  return acc * h / 3;
}

// Mean and covariance of a fine-step Euler recursion for the 2x2 affine
// system, propagated exactly in moment form.
std::pair<Eigen::Vector2d, Eigen::Matrix2d> euler_moments(double a, double u, double t, int steps,
                                                          Eigen::Vector2d m) {
  const double h = t / steps;
  Eigen::Matrix2d M;
  M << 1.0, h, -u * a * h, 1.0 - 2.0 * h;
  Eigen::Matrix2d Q = Eigen::Matrix2d::Zero();
  Q(1, 1) = 4.0 * u * h;
  Eigen::Matrix2d S = Eigen::Matrix2d::Zero();
  for (int n = 0; n < steps; ++n) {
    m = M * m;
    S = M * S * M.transpose() + Q;
  }
  return {m, S};
}

}  // namespace

TEST_CASE("gaussian W2 closed-form examples") {
  const Matrix I = Matrix::Identity(3, 3);
  CHECK(gaussian_w2(Vector::Zero(3), I, Vector::Zero(3), I).distance < 1e-7);
  CHECK(gaussian_w2(Vector::Zero(3), I, Vector::Unit(3, 0), I).distance == doctest::Approx(1.0).epsilon(1e-12));

  const auto scalar = gaussian_w2(Vector::Zero(1), Matrix::Constant(1, 1, 4.0), Vector::Zero(1),
                                  Matrix::Constant(1, 1, 1.0));
  CHECK(scalar.distance == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(scalar.normalized == doctest::Approx(1.0).epsilon(1e-12));

  const auto scaled = gaussian_w2(Vector::Zero(4), Matrix::Identity(4, 4), Vector::Constant(4, 1.0),
                                  Matrix::Identity(4, 4), 4.0);
  CHECK(scaled.distance == doctest::Approx(2.0));
  CHECK(scaled.normalized == doctest::Approx(2.0 / std::sqrt(4.0 / 4.0)));

  // Commuting diagonal case: sum of (sqrt(s1) - sqrt(s2))^2.
  const auto diag = gaussian_w2(Vector::Zero(2), Vector{{9.0, 1.0}}.asDiagonal().toDenseMatrix(), Vector::Zero(2),
                                Vector{{1.0, 16.0}}.asDiagonal().toDenseMatrix());
  CHECK(diag.distance == doctest::Approx(std::sqrt(4.0 + 9.0)).epsilon(1e-12));
}

TEST_CASE("gaussian W2 symmetry and triangle inequality") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index d = 1 + trial % 5;
    const Vector m1 = rng.gaussian_vector<double>(d), m2 = rng.gaussian_vector<double>(d),
                 m3 = rng.gaussian_vector<double>(d);
    const Matrix c1 = random_spd(d, rng), c2 = random_spd(d, rng), c3 = random_spd(d, rng);
    const double ab = gaussian_w2(m1, c1, m2, c2).distance;
    const double ba = gaussian_w2(m2, c2, m1, c1).distance;
    const double bc = gaussian_w2(m2, c2, m3, c3).distance;
    const double ac = gaussian_w2(m1, c1, m3, c3).distance;
    CHECK(std::abs(ab - ba) <= 1e-12 * std::max(1.0, ab));
    CHECK(ac <= ab + bc + 1e-12);
    CHECK(gaussian_w2(m1, c1, m1, c1).distance < 1e-6);
  }
}

TEST_CASE("gaussian W2 input validation") {
  Matrix bad = Matrix::Identity(2, 2);
  bad(0, 1) = 1e-6;
  CHECK_THROWS_AS(gaussian_w2(Vector::Zero(2), bad, Vector::Zero(2), Matrix::Identity(2, 2)), Error);
  CHECK_THROWS_AS(gaussian_w2(Vector::Zero(2), Matrix::Identity(2, 2), Vector::Zero(3), Matrix::Identity(3, 3)),
                  Error);
  const Matrix root = psd_sqrt(Vector{{4.0, 9.0}}.asDiagonal().toDenseMatrix());
  CHECK(root.isApprox(Vector{{2.0, 3.0}}.asDiagonal().toDenseMatrix()));
}

TEST_CASE("gauss legendre rule") {
  for (int n : {8, 64, 128}) {
    const auto rule = gauss_legendre_unit(n);
    REQUIRE(rule.nodes.size() == static_cast<std::size_t>(n));
    double total = 0, p15 = 0, expo = 0;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
      total += rule.weights[k];
      p15 += rule.weights[k] * std::pow(rule.nodes[k], 15);
      expo += rule.weights[k] * std::exp(rule.nodes[k]);
      CHECK(rule.nodes[k] > 0);
      CHECK(rule.nodes[k] < 1);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(p15 == doctest::Approx(1.0 / 16).epsilon(1e-13));
    CHECK(expo == doctest::Approx(std::exp(1.0) - 1).epsilon(1e-14));
  }
  CHECK_THROWS_AS(gauss_legendre_unit(12), Error);
}

TEST_CASE("increment covariance matches quadrature") {
  const double h = 0.05;
  for (double mid : {1e-4, 0.003, 0.025, 0.049, 0.05}) {
    CAPTURE(mid);
    const Eigen::Matrix3d V = increment_covariance(h, mid);
    auto k1 = [&](double s) { return s < mid ? -std::expm1(-2 * (mid - s)) : 0.0; };
    auto k2 = [&](double s) { return -std::expm1(-2 * (h - s)); };
    auto k3 = [&](double s) { return std::exp(-2 * (h - s)); };
    // Integrate W1 terms on [0, mid] where k1 is smooth.
    const double q11 = simpson([&](double s) { return k1(s) * k1(s); }, 0, mid);
    const double q12 = simpson([&](double s) { return k1(s) * k2(s); }, 0, mid);
    const double q13 = simpson([&](double s) { return k1(s) * k3(s); }, 0, mid);
    const double q22 = simpson([&](double s) { return k2(s) * k2(s); }, 0, h);
    const double q23 = simpson([&](double s) { return k2(s) * k3(s); }, 0, h);
    const double q33 = simpson([&](double s) { return k3(s) * k3(s); }, 0, h);
    const Eigen::Matrix3d Q{{q11, q12, q13}, {q12, q22, q23}, {q13, q23, q33}};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) CHECK(std::abs(V(i, j) - Q(i, j)) <= 1e-10 * std::abs(Q(i, j)) + 1e-18);
  }
}

TEST_CASE("moment oracle against Monte Carlo after one step") {
  const Target t = quadratic_target<double>(Vector{{1.0}}, Vector{{0.0}});
  Schedule s;
  s.h = 0.05;
  s.N = 1;
  const Vector x0{{1.0}};
  const auto trace = rmm_moment_oracle(t, s.h, 1, 128, x0);
  CHECK(trace.quadrature_error < 1e-14);
  const auto runs = run_chains(Method::rmm, t, s, 77, 1000000, x0);

  const double n = static_cast<double>(runs.size());
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& r : runs) mean += Eigen::Vector2d(r.state.x[0], r.state.v[0]);
  mean /= n;
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d fourth = Eigen::Matrix2d::Zero();
  for (const auto& r : runs) {
    const Eigen::Vector2d z = Eigen::Vector2d(r.state.x[0], r.state.v[0]) - mean;
    const Eigen::Matrix2d zz = z * z.transpose();
    cov += zz;
    fourth += zz.cwiseAbs2();
  }
  cov /= n - 1;
  fourth /= n;

  const Eigen::Vector2d oracle_mean = trace.mean[1];
  const Eigen::Matrix2d oracle_cov = trace.cov[1];
  for (int i = 0; i < 2; ++i) {
    const double se = std::sqrt(cov(i, i) / n);
    CHECK(std::abs(mean[i] - oracle_mean[i]) <= 3 * se);
    for (int j = 0; j < 2; ++j) {
      const double se_cov = std::sqrt((fourth(i, j) - cov(i, j) * cov(i, j)) / n);
      CHECK(std::abs(cov(i, j) - oracle_cov(i, j)) <= 3 * se_cov);
    }
  }
}

TEST_CASE("moment oracle reaches a fixed point") {
  const Target t = quadratic_target<double>(Vector{{1.0}}, Vector{{0.0}});
  const double h = 0.05;
  const auto steps = static_cast<std::size_t>(10 * t.condition_number() / h);
  const auto trace = rmm_moment_oracle(t, h, 2 * steps, 64, Vector{{2.0}}, Vector{{-1.0}});
  auto gap = [&](std::size_t n) { return (trace.cov[n] - trace.cov[n - 1]).norm(); };
  // Critically damped modes converge like t^2 e^{-2t}: the gap at 10 kappa / h
  // is still ~1e-7 and drops below 1e-10 by 20 kappa / h.
  CHECK(gap(steps) < 1e-6);
  CHECK(gap(2 * steps) < 1e-10);
  CHECK(gap(2 * steps) < 1e-3 * gap(steps));
  CHECK(trace.cov.back()(0, 0) == doctest::Approx(1.0).epsilon(0.01));
  for (const auto& c : trace.cov) {
    CHECK((c - c.transpose()).norm() <= 1e-15 * c.norm());
    CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(c).eigenvalues().minCoeff() > -1e-14);
  }
}

TEST_CASE("moment oracle in the gradient-free limit") {
  // The second coordinate fixes L = 1, so the first feels u a = 1e-12.
  const Target t = quadratic_target<double>(Vector{{1e-12, 1.0}}, Vector::Zero(2));
  const double h = 0.05;
  const std::size_t N = 20;
  const auto trace = rmm_moment_oracle(t, h, N, 64, Vector{{1.0, 0.0}}, Vector{{0.5, 0.0}});
  const double x = 1.0 + 0.5 * 0.5 * (1 - std::exp(-2 * h * N));
  const double v = 0.5 * std::exp(-2 * h * N);
  CHECK(std::abs(trace.mean[N][0] - x) < 1e-8);
  CHECK(std::abs(trace.mean[N][2] - v) < 1e-8);
}

TEST_CASE("moment oracle errors") {
  const Target logistic = logistic_target(synthetic_logistic_dataset(20, 2, 1), 0.1);
  try {
    rmm_moment_oracle(logistic, 0.05, 3);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::unsupported_target);
  }
  const Target q = quadratic_target<double>(Vector{{1.0}}, Vector{{0.0}});
  CHECK_THROWS_AS(rmm_moment_oracle(q, 0.05, 3, 32), Error);
  CHECK_THROWS_AS(exact_uld_moments(logistic, 1.0, Vector::Zero(2), Vector::Zero(2)), Error);
  CHECK_THROWS_AS(contraction_check(logistic, 1.0, Vector::Ones(2), Vector::Zero(2)), Error);
}

TEST_CASE("uld propagator matches the matrix exponential") {
  for (double ua : {0.0, 0.01, 0.25, 1.0 - 1e-10, 1.0, 1.0 + 1e-10, 2.0, 50.0}) {
    for (double t : {0.0, 1e-3, 0.3, 2.0, 7.0}) {
      Eigen::Matrix2d A;
      A << 0.0, 1.0, -ua, -2.0;
      const Eigen::Matrix2d expected = (A * t).exp();
      const Eigen::Matrix2d got = uld_propagator(ua, t);
      CHECK((got - expected).norm() <= 1e-12 * std::max(1.0, expected.norm()));
    }
  }
  CHECK(uld_propagator(0.25, 1e4).allFinite());
}

TEST_CASE("exact ULD moments") {
  const Target t = quadratic_target<double>(Vector{{1.0, 4.0}}, Vector{{1.0, -1.0}});
  const Vector x0{{0.0, 2.0}}, v0{{1.0, -1.0}};

  const auto zero = exact_uld_moments(t, 0.0, x0, v0);
  CHECK(zero.mean.head(2) == x0);
  CHECK(zero.mean.tail(2) == v0);
  CHECK(zero.cov.norm() < 1e-15);

  const auto late = exact_uld_moments(t, 400.0, x0, v0);
  CHECK(late.mean.head(2).isApprox(*t.minimizer, 1e-12));
  CHECK(late.cov(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(late.cov(1, 1) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(late.cov(2, 2) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(late.cov(3, 3) == doctest::Approx(0.25).epsilon(1e-12));

  // Fine-step Euler moments at t = 0.1 for a = u = 1.
  const Target unit = quadratic_target<double>(Vector{{1.0}}, Vector{{0.0}});
  const auto exact = exact_uld_moments(unit, 0.1, Vector{{1.0}}, Vector{{0.5}});
  const auto [m, S] = euler_moments(1.0, 1.0, 0.1, 100000, Eigen::Vector2d(1.0, 0.5));
  CHECK(std::abs(exact.mean[0] - m[0]) < 1e-4);
  CHECK(std::abs(exact.mean[1] - m[1]) < 1e-4);
  CHECK((exact.cov - Matrix(S)).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("contraction") {
  const Target unit = quadratic_target<double>(Vector{{1.0}}, Vector{{0.0}});
  const auto degenerate = contraction_check(unit, 1.0, Vector::Zero(1), Vector::Zero(1));
  CHECK(degenerate.degenerate);
  CHECK(degenerate.ratio == 0.0);

  const auto one = contraction_check(unit, 1.0, Vector{{1.0}}, Vector{{0.0}});
  CHECK(one.ratio <= std::exp(-1.0));
  CHECK(one.holds());

  const Target stiff = quadratic_target<double>(Vector{{0.01, 1.0}}, Vector::Zero(2));
  const auto hundred = contraction_check(stiff, 100.0, Vector{{1.0, 1.0}}, Vector{{-0.5, 0.3}});
  CHECK(hundred.bound == doctest::Approx(std::exp(-1.0)));
  CHECK(hundred.ratio <= std::exp(-1.0));

  // Ratio against a direct RK4 integration of the difference ODE.
  const double u = 1.0, t = 2.0;
  Eigen::Vector2d z(1.0, 0.0);
  const int steps = 20000;
  const double dt = t / steps;
  auto f = [&](const Eigen::Vector2d& y) { return Eigen::Vector2d(y[1], -2 * y[1] - u * y[0]); };
  for (int n = 0; n < steps; ++n) {
    const auto k1 = f(z), k2 = f(z + dt / 2 * k1), k3 = f(z + dt / 2 * k2), k4 = f(z + dt * k3);
    z += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  const double rk = (z[0] * z[0] + (z[0] + z[1]) * (z[0] + z[1])) / 2.0;
  CHECK(contraction_check(unit, t, Vector{{1.0}}, Vector{{0.0}}).ratio == doctest::Approx(rk).epsilon(1e-10));
}

TEST_CASE("loglog slope") {
  const std::vector<double> h{0.025, 0.05, 0.1, 0.2};
  std::vector<double> e;
  for (double x : h) e.push_back(3 * std::pow(x, 1.5));
  CHECK(loglog_slope(h, e) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(std::isnan(loglog_slope({0.1}, {1.0})));
}

TEST_CASE("coupled experiment self-consistency") {
  const Target t = geometric_quadratic(3, 10);
  CoupledExperimentConfig cfg;
  cfg.h_values = {0.1, 0.2};
  cfg.T = 2;
  cfg.chains = 2;
  cfg.seed = 5;
  cfg.methods = {Method::exp_euler_uld, Method::rmm};
  cfg.start = Vector::Ones(3);
  const auto result = coupled_chain(t, cfg, 1);

  // Replay the discretizations on an identically seeded path.
  const double ref = 0.1 / 32;
  const auto cells = static_cast<std::size_t>(std::lround(cfg.T / ref));
  BrownianPath path(3, ref, cells, Rng(cfg.seed, 1));
  SamplerState<double> s{*cfg.start, Vector::Zero(3), 0};
  for (std::size_t c = 0; c < cells; ++c) {
    const auto [w2, w3] = kernel_integrals(path.cell(c));
    s = exponential_euler_uld_step(s, t, ref, w2, w3, 1.0);
  }
  CHECK((s.x - result.reference).norm() <= 1e-10);

  for (std::size_t hi = 0; hi < 2; ++hi) {
    const double h = cfg.h_values[hi];
    const auto m = static_cast<std::size_t>(std::lround(h / ref));
    SamplerState<double> e{*cfg.start, Vector::Zero(3), 0};
    for (std::size_t c = 0; c < cells; c += m) {
      auto acc = path.cell(c);
      for (std::size_t k = 1; k < m; ++k) acc = compose(acc, path.cell(c + k));
      const auto [w2, w3] = kernel_integrals(acc);
      e = exponential_euler_uld_step(e, t, h, w2, w3, 1.0);
    }
    CHECK((e.x - result.finals[0][hi]).norm() <= 1e-10);
  }

  const auto again = coupled_chain(t, cfg, 1);
  CHECK(again.finals[1][0] == result.finals[1][0]);
  CHECK(again.reference == result.reference);
}

TEST_CASE("coupled experiment configuration errors") {
  const Target t = geometric_quadratic(2, 4);
  CoupledExperimentConfig cfg;
  cfg.h_values = {0.1, 0.13};
  cfg.T = 1.3;
  auto kind_of = [&](const CoupledExperimentConfig& c) {
    try {
      coupled_error_experiment(t, c);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::invalid_argument;
  };
  CHECK(kind_of(cfg) == ErrorKind::configuration);
  cfg.h_values = {0.1, 0.2};
  cfg.T = 1.1;
  CHECK(kind_of(cfg) == ErrorKind::configuration);
  cfg.T = 1.0;
  cfg.reference_refinement = 16;
  CHECK(kind_of(cfg) == ErrorKind::configuration);
  cfg.reference_refinement = 32;
  cfg.methods = {Method::lmc};
  CHECK(kind_of(cfg) == ErrorKind::configuration);
  cfg.methods = {Method::rmm};
  cfg.h_values.clear();
  CHECK(kind_of(cfg) == ErrorKind::configuration);
}

TEST_CASE("reference error is small against the coarsest method error") {
  // The standard reference (step h_min / 32) is compared with a 32x finer
  // exponential-Euler solution on the same path.
  const Target t = geometric_quadratic(4, 10);
  CoupledExperimentConfig cfg;
  cfg.T = 10;
  cfg.chains = 4;
  cfg.seed = 3;
  cfg.methods = {Method::exp_euler_uld, Method::rmm};
  cfg.h_values = {0.2, 0.025 / 32};
  const auto table = coupled_error_experiment(t, cfg);
  double coarsest = std::numeric_limits<double>::infinity(), reference = 0;
  for (const auto& row : table.rows) {
    if (row.h == 0.2) coarsest = std::min(coarsest, row.mean_error);
    if (row.h < 0.01 && row.method == Method::exp_euler_uld) reference = row.mean_error;
  }
  CHECK(reference > 0);
  CHECK(reference < 0.1 * coarsest);
}

TEST_CASE("stationary study") {
  const Target t = quadratic_target<double>(Vector::Constant(3, 2.0), Vector{{1.0, 0.0, -1.0}});
  Schedule none;
  none.N = 0;
  const auto point = stationary_error_study(t, none, 50, 1, 20);
  CHECK(point.w2.normalized == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(point.low_power);
  CHECK(point.ci_low == doctest::Approx(1.0).epsilon(1e-12));

  const auto s = schedule(0.25, 1, 0.5, 2.0);
  const auto study = stationary_error_study(t, s, 2000, 9, 50);
  CHECK_FALSE(study.low_power);
  CHECK(study.w2.normalized < 0.25);
  CHECK(study.ci_low <= study.ci_high);

  const Target logistic = logistic_target(synthetic_logistic_dataset(20, 2, 1), 0.1);
  CHECK_THROWS_AS(stationary_error_study(logistic, s, 200, 1), Error);
}
