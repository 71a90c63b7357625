#include "rmld/analysis.hpp"

#include "rmld/parallel.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace rmld {

// ---------------------------------------------------------------------------
// W2

Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  const Vector roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

namespace {

void check_covariance(const Matrix& c, Eigen::Index dim, const char* name) {
  if (c.rows() != dim || c.cols() != dim)
    throw Error(ErrorKind::invalid_argument, std::string(name) + " has the wrong shape");
  const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw Error(ErrorKind::invalid_argument, std::string(name) + " is not symmetric");
}

}  // namespace

W2Result gaussian_w2(const Vector& mean1, const Matrix& cov1, const Vector& mean2, const Matrix& cov2,
                     double strong_convexity) {
  const Eigen::Index dim = mean1.size();
  if (mean2.size() != dim) throw Error(ErrorKind::invalid_argument, "mean dimensions differ");
  check_covariance(cov1, dim, "cov1");
  check_covariance(cov2, dim, "cov2");
  if (!(strong_convexity > 0)) throw Error(ErrorKind::invalid_argument, "strong convexity must be positive");

  const Matrix root2 = psd_sqrt(0.5 * (cov2 + cov2.transpose()));
  const Matrix cross = root2 * (0.5 * (cov1 + cov1.transpose())) * root2;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (cross + cross.transpose()), Eigen::EigenvaluesOnly);
  const double cross_trace = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double sq = (mean1 - mean2).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * cross_trace;
  W2Result r;
  r.distance = std::sqrt(std::max(sq, 0.0));
  r.normalized = r.distance / std::sqrt(static_cast<double>(dim) / strong_convexity);
  return r;
}

// ---------------------------------------------------------------------------
// Quadrature

QuadratureRule gauss_legendre_unit(int nodes) {
  constexpr int kPerPanel = 8;
  if (nodes < kPerPanel || nodes % kPerPanel != 0)
    throw Error(ErrorKind::invalid_argument, "quadrature node count must be a positive multiple of 8");

  // Golub-Welsch on the Legendre Jacobi matrix.
  Eigen::Matrix<double, kPerPanel, kPerPanel> jacobi = Eigen::Matrix<double, kPerPanel, kPerPanel>::Zero();
  for (int k = 1; k < kPerPanel; ++k) {
    const double beta = k / std::sqrt(4.0 * k * k - 1.0);
    jacobi(k, k - 1) = beta;
    jacobi(k - 1, k) = beta;
  }
  Eigen::SelfAdjointEigenSolver<decltype(jacobi)> eig(jacobi);

  const int panels = nodes / kPerPanel;
  const double width = 1.0 / panels;
  QuadratureRule rule;
  rule.nodes.reserve(static_cast<std::size_t>(nodes));
  rule.weights.reserve(static_cast<std::size_t>(nodes));
  for (int p = 0; p < panels; ++p) {
    for (int k = 0; k < kPerPanel; ++k) {
      const double x = eig.eigenvalues()[k];
      const double w = 2.0 * eig.eigenvectors()(0, k) * eig.eigenvectors()(0, k);
      rule.nodes.push_back(width * (p + 0.5 * (x + 1.0)));
      rule.weights.push_back(0.5 * width * w);
    }
  }
  return rule;
}

// ---------------------------------------------------------------------------
// Moment oracles

namespace {

// int_0^t (1 - e^{-2(t-s)})^2 ds
double squared_kernel_integral(double t) {
  if (t < 0.02) {
    static constexpr double kCoeffs[] = {-124.0 / 14175, 584.0 / 22275, -68.0 / 945, 508.0 / 2835, -2.0 / 5,
                                         248.0 / 315,    -4.0 / 3,      28.0 / 15,   -2.0,         4.0 / 3};
    double acc = 0;
    for (double c : kCoeffs) acc = acc * t + c;
    return acc * t * t * t;
  }
  return t + std::expm1(-2.0 * t) - 0.25 * std::expm1(-4.0 * t);
}

const QuadraticForm<double>& require_quadratic(const Target& target) {
  if (!target.quadratic) throw Error(ErrorKind::unsupported_target, "moment oracles need a diagonal quadratic target");
  return *target.quadratic;
}

Vector stack(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

struct CoordinateStep {
  Eigen::Matrix2d A;
  Eigen::Matrix2d Q;
};

// Second-moment propagation of the alpha-mixed affine map on (y_i, v_i)
// coordinate pairs, y = x - center.
struct MomentPropagator {
  Eigen::Index dim;
  std::vector<double> weights;
  std::vector<std::vector<CoordinateStep>> steps;  // [node][coordinate]
  std::vector<Eigen::Matrix2d> mean_maps;          // quadrature average of A
  std::vector<Eigen::Matrix2d> noise;              // quadrature average of Q

  MomentPropagator(const QuadraticForm<double>& q, double u, double h, int nodes) : dim(q.diag.size()) {
    const QuadratureRule rule = gauss_legendre_unit(nodes);
    weights = rule.weights;
    mean_maps.assign(static_cast<std::size_t>(dim), Eigen::Matrix2d::Zero());
    noise.assign(static_cast<std::size_t>(dim), Eigen::Matrix2d::Zero());
    const double su = std::sqrt(u);
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
      const double mid = rule.nodes[k] * h;
      const Eigen::Matrix3d V = increment_covariance(h, mid);
      const double p = 0.5 * one_minus_decay(mid);
      const double q_head = 0.5 * u * position_kernel_integral(0.0, mid, mid);
      const double P = 0.5 * one_minus_decay(h);
      const double r = 0.5 * u * h * one_minus_decay(h - mid);
      const double sv = u * h * std::exp(-2.0 * (h - mid));
      auto& row = steps.emplace_back(static_cast<std::size_t>(dim));
      for (Eigen::Index i = 0; i < dim; ++i) {
        const double a = q.diag[i];
        CoordinateStep cs;
        cs.A << 1.0 - r * a * (1.0 - q_head * a), P - r * a * p,  //
            -sv * a * (1.0 - q_head * a), std::exp(-2.0 * h) - sv * a * p;
        Eigen::Matrix<double, 2, 3> B;
        B << -r * a, 1.0, 0.0,  //
            -sv * a, 0.0, 2.0;
        B *= su;
        cs.Q = B * V * B.transpose();
        mean_maps[static_cast<std::size_t>(i)] += rule.weights[k] * cs.A;
        noise[static_cast<std::size_t>(i)] += rule.weights[k] * cs.Q;
        row[static_cast<std::size_t>(i)] = cs;
      }
    }
  }

  // mean: interleaved (y_i, v_i); second: interleaved raw second moment.
  void advance(Vector& mean, Matrix& second) const {
    Vector next_mean(mean.size());
    Matrix next(second.rows(), second.cols());
    for (Eigen::Index i = 0; i < dim; ++i)
      next_mean.segment<2>(2 * i) = mean_maps[static_cast<std::size_t>(i)] * mean.segment<2>(2 * i);
    for (Eigen::Index i = 0; i < dim; ++i) {
      for (Eigen::Index j = i; j < dim; ++j) {
        const Eigen::Matrix2d S = second.block<2, 2>(2 * i, 2 * j);
        Eigen::Matrix2d acc = Eigen::Matrix2d::Zero();
        for (std::size_t k = 0; k < weights.size(); ++k) {
          const auto& Ai = steps[k][static_cast<std::size_t>(i)].A;
          const auto& Aj = steps[k][static_cast<std::size_t>(j)].A;
          acc.noalias() += weights[k] * (Ai * S * Aj.transpose());
        }
        if (i == j) acc += noise[static_cast<std::size_t>(i)];
        next.block<2, 2>(2 * i, 2 * j) = acc;
        if (i != j) next.block<2, 2>(2 * j, 2 * i) = acc.transpose();
      }
    }
    mean = std::move(next_mean);
    second = std::move(next);
  }
};

// Interleaved (y_i, v_i) index -> stacked (x; v) index.
Eigen::PermutationMatrix<Eigen::Dynamic> interleaved_to_stacked(Eigen::Index dim) {
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(2 * dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    perm.indices()[2 * i] = static_cast<int>(i);
    perm.indices()[2 * i + 1] = static_cast<int>(dim + i);
  }
  return perm;
}

MomentTrace propagate(const QuadraticForm<double>& q, double u, double h, std::size_t N, int nodes,
                      const Vector& y0, const Vector& v0) {
  const Eigen::Index dim = q.diag.size();
  const MomentPropagator prop(q, u, h, nodes);
  const auto perm = interleaved_to_stacked(dim);

  Vector mean(2 * dim);
  for (Eigen::Index i = 0; i < dim; ++i) mean.segment<2>(2 * i) << y0[i], v0[i];
  Matrix second = mean * mean.transpose();

  MomentTrace trace;
  trace.mean.reserve(N + 1);
  trace.cov.reserve(N + 1);
  const Vector offset = stack(q.center, Vector::Zero(dim));
  for (std::size_t n = 0;; ++n) {
    Matrix cov = second - mean * mean.transpose();
    cov = 0.5 * (cov + cov.transpose());
    trace.mean.push_back(perm * mean + offset);
    trace.cov.push_back(perm * cov * perm.transpose());
    if (n == N) break;
    prop.advance(mean, second);
  }
  return trace;
}

}  // namespace

Eigen::Matrix3d increment_covariance(double h, double mid) {
  const double far = std::exp(-2.0 * (h - mid));
  const double head = one_minus_decay(mid);
  // int_0^mid (1 - e^{-2r}) e^{-2r} dr = (1 - e^{-2 mid})^2 / 4
  const double cross = 0.25 * head * head;
  Eigen::Matrix3d V;
  V(0, 0) = squared_kernel_integral(mid);
  V(1, 1) = squared_kernel_integral(h);
  V(2, 2) = -0.25 * std::expm1(-4.0 * h);
  V(0, 1) = position_kernel_integral(0.0, mid, mid) - far * cross;
  V(0, 2) = far * cross;
  V(1, 2) = 0.5 * one_minus_decay(h) + 0.25 * std::expm1(-4.0 * h);
  V(1, 0) = V(0, 1);
  V(2, 0) = V(0, 2);
  V(2, 1) = V(1, 2);
  return V;
}

MomentTrace rmm_moment_oracle(const Target& target, double h, std::size_t N, int quadrature_nodes,
                              const std::optional<Vector>& x0, const std::optional<Vector>& v0) {
  const auto& q = require_quadratic(target);
  if (quadrature_nodes < 64) throw Error(ErrorKind::invalid_argument, "need at least 64 quadrature nodes");
  if (!(h > 0)) throw Error(ErrorKind::invalid_argument, "h must be positive");
  const Eigen::Index dim = target.dimension;
  const Vector x_start = x0 ? *x0 : q.center;
  const Vector v_start = v0 ? *v0 : Vector::Zero(dim);
  if (x_start.size() != dim || v_start.size() != dim)
    throw Error(ErrorKind::invalid_argument, "start dimension does not match target");
  const double u = 1.0 / target.smoothness;
  const Vector y_start = x_start - q.center;

  MomentTrace trace = propagate(q, u, h, N, quadrature_nodes, y_start, v_start);
  const MomentTrace fine = propagate(q, u, h, N, 2 * quadrature_nodes, y_start, v_start);
  double err = 0;
  for (std::size_t n = 0; n <= N; ++n) {
    err = std::max(err, (trace.mean[n] - fine.mean[n]).cwiseAbs().maxCoeff());
    err = std::max(err, (trace.cov[n] - fine.cov[n]).cwiseAbs().maxCoeff());
  }
  trace.quadrature_error = err;
  return trace;
}

Eigen::Matrix2d uld_propagator(double ua, double t) {
  // exp(A t) = e^{-t} (cosh(w t) I + sinh(w t) / w (A + I)), w^2 = 1 - u a.
  const double w2 = 1.0 - ua;
  double even = 0;  // e^{-t} cosh(w t)
  double odd = 0;   // e^{-t} sinh(w t) / w
  const double w = std::sqrt(std::abs(w2));
  if (w * t < 1e-4) {
    const double z = w2 * t * t;
    even = std::exp(-t) * (1.0 + z / 2.0 + z * z / 24.0);
    odd = std::exp(-t) * t * (1.0 + z / 6.0 + z * z / 120.0);
  } else if (w2 > 0) {
    const double slow = std::exp((w - 1.0) * t);
    const double fast = std::exp(-(w + 1.0) * t);
    even = 0.5 * (slow + fast);
    odd = 0.5 * (slow - fast) / w;
  } else {
    even = std::exp(-t) * std::cos(w * t);
    odd = std::exp(-t) * std::sin(w * t) / w;
  }
  Eigen::Matrix2d shifted;
  shifted << 1.0, 1.0, -ua, -1.0;
  return even * Eigen::Matrix2d::Identity() + odd * shifted;
}

GaussianMoments exact_uld_moments(const Target& target, double t, const Vector& x0, const Vector& v0) {
  const auto& q = require_quadratic(target);
  if (!(t >= 0)) throw Error(ErrorKind::invalid_argument, "t must be nonnegative");
  const Eigen::Index dim = target.dimension;
  if (x0.size() != dim || v0.size() != dim) throw Error(ErrorKind::invalid_argument, "start dimension mismatch");
  const double u = 1.0 / target.smoothness;

  GaussianMoments out;
  out.mean.resize(2 * dim);
  out.cov = Matrix::Zero(2 * dim, 2 * dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    const double a = q.diag[i];
    const Eigen::Matrix2d E = uld_propagator(u * a, t);
    const Eigen::Vector2d m = E * Eigen::Vector2d(x0[i] - q.center[i], v0[i]);
    out.mean[i] = m[0] + q.center[i];
    out.mean[dim + i] = m[1];
    // Stationary law exp(-a y^2 / 2 - v^2 / (2u)); Cov(t) = S - E S E^T.
    const Eigen::Matrix2d S = Eigen::Vector2d(1.0 / a, u).asDiagonal();
    const Eigen::Matrix2d C = S - E * S * E.transpose();
    out.cov(i, i) = C(0, 0);
    out.cov(i, dim + i) = C(0, 1);
    out.cov(dim + i, i) = C(1, 0);
    out.cov(dim + i, dim + i) = C(1, 1);
  }
  return out;
}

ContractionResult contraction_check(const Target& target, double t, const Vector& delta_x0, const Vector& delta_v0) {
  const auto& q = require_quadratic(target);
  if (!(t > 0)) throw Error(ErrorKind::invalid_argument, "t must be positive");
  const Eigen::Index dim = target.dimension;
  if (delta_x0.size() != dim || delta_v0.size() != dim)
    throw Error(ErrorKind::invalid_argument, "difference dimension mismatch");
  const double u = 1.0 / target.smoothness;

  ContractionResult r;
  r.bound = std::exp(-t / target.condition_number());
  const double before = delta_x0.squaredNorm() + (delta_x0 + delta_v0).squaredNorm();
  if (before == 0) {
    r.degenerate = true;
    return r;
  }
  double after = 0;
  for (Eigen::Index i = 0; i < dim; ++i) {
    const Eigen::Vector2d d = uld_propagator(u * q.diag[i], t) * Eigen::Vector2d(delta_x0[i], delta_v0[i]);
    after += d[0] * d[0] + (d[0] + d[1]) * (d[0] + d[1]);
  }
  r.ratio = after / before;
  return r;
}

// ---------------------------------------------------------------------------
// Coupled experiment

namespace {

struct Grid {
  double ref_step;
  std::size_t cells;
  std::vector<std::size_t> cells_per_step;
};

Grid make_grid(const CoupledExperimentConfig& c) {
  if (c.h_values.empty()) throw Error(ErrorKind::configuration, "no step sizes given");
  if (c.reference_refinement < 32) throw Error(ErrorKind::configuration, "reference refinement must be >= 32");
  if (!(c.T > 0)) throw Error(ErrorKind::configuration, "T must be positive");
  for (double h : c.h_values)
    if (!(h > 0)) throw Error(ErrorKind::configuration, "step sizes must be positive");
  auto as_integer = [](double ratio, const char* what) {
    const double r = std::round(ratio);
    if (r < 1 || std::abs(ratio - r) > 1e-9 * std::max(1.0, r))
      throw Error(ErrorKind::configuration, std::string("incommensurate grid: ") + what);
    return static_cast<std::size_t>(r);
  };
  Grid g;
  g.ref_step = *std::min_element(c.h_values.begin(), c.h_values.end()) / c.reference_refinement;
  g.cells = as_integer(c.T / g.ref_step, "T is not a multiple of the reference step");
  for (double h : c.h_values) {
    const std::size_t m = as_integer(h / g.ref_step, "h is not a multiple of the reference step");
    if (g.cells % m != 0) throw Error(ErrorKind::configuration, "incommensurate grid: T is not a multiple of h");
    g.cells_per_step.push_back(m);
  }
  return g;
}

constexpr double kUnbounded = std::numeric_limits<double>::infinity();

}  // namespace

CoupledChainResult coupled_chain(const Target& target, const CoupledExperimentConfig& config, std::size_t chain) {
  const Grid grid = make_grid(config);
  for (Method m : config.methods)
    if (m != Method::rmm && m != Method::exp_euler_uld)
      throw Error(ErrorKind::configuration, "coupled experiment supports rmm and exp_euler_uld only");

  const SamplerState<double> start = initial_state(target, config.start);
  BrownianPath path(target.dimension, grid.ref_step, grid.cells, Rng(config.seed, chain));

  CoupledChainResult out;
  {
    SamplerState<double> s = start;
    for (std::size_t c = 0; c < grid.cells; ++c) {
      const auto [w2, w3] = kernel_integrals(path.cell(c));
      s = exponential_euler_uld_step(s, target, grid.ref_step, w2, w3, kUnbounded);
    }
    out.reference = s.x;
  }

  for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
    auto& finals = out.finals.emplace_back();
    for (std::size_t hi = 0; hi < config.h_values.size(); ++hi) {
      const double h = config.h_values[hi];
      const std::size_t m = grid.cells_per_step[hi];
      Rng alpha_rng(~config.seed, (static_cast<std::uint64_t>(chain) << 16) | (mi << 8) | hi);
      SamplerState<double> s = start;
      for (std::size_t begin = 0; begin < grid.cells; begin += m) {
        const PathPoint from{begin, 0.0};
        const PathPoint to{begin + m, 0.0};
        if (config.methods[mi] == Method::exp_euler_uld) {
          const auto [w2, w3] = kernel_integrals(path.interval(from, to));
          s = exponential_euler_uld_step(s, target, h, w2, w3, kUnbounded);
        } else {
          const double alpha = alpha_rng.uniform();
          const double pos = alpha * static_cast<double>(m);
          const auto whole = std::min(static_cast<std::size_t>(pos), m);
          const PathPoint mid{begin + whole, (pos - static_cast<double>(whole)) * grid.ref_step};
          const auto head = path.interval(from, mid);
          const auto tail = path.interval(mid, to);
          s = rmm_step(s, target, h, alpha, increments_from_intervals(head, tail), kUnbounded);
        }
      }
      finals.push_back(s.x);
    }
  }
  return out;
}

double loglog_slope(const std::vector<double>& h, const std::vector<double>& err) {
  const auto n = h.size();
  if (n < 2 || err.size() != n) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(h[i]);
    my += std::log(err[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(h[i]) - mx;
    sxy += dx * (std::log(err[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

CoupledErrorTable coupled_error_experiment(const Target& target, const CoupledExperimentConfig& config) {
  const Grid grid = make_grid(config);
  if (config.chains < 1) throw Error(ErrorKind::configuration, "need at least one chain");
  std::vector<CoupledChainResult> results(config.chains);
  parallel_for(config.chains, [&](std::size_t c) { results[c] = coupled_chain(target, config, c); });

  CoupledErrorTable table;
  table.reference_step = grid.ref_step;
  for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
    std::vector<double> errors;
    for (std::size_t hi = 0; hi < config.h_values.size(); ++hi) {
      double sum = 0;
      for (const auto& r : results) sum += (r.finals[mi][hi] - r.reference).norm();
      const double mean = sum / static_cast<double>(config.chains);
      errors.push_back(mean);
      table.rows.push_back({config.h_values[hi], config.methods[mi], mean});
    }
    table.slopes[config.methods[mi]] = loglog_slope(config.h_values, errors);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Stationary study

namespace {

void fit_moments(const Matrix& samples, Vector& mean, Matrix& cov) {
  const auto n = static_cast<double>(samples.rows());
  mean = samples.colwise().mean().transpose();
  const Matrix centered = samples.rowwise() - mean.transpose();
  cov = centered.transpose() * centered / std::max(1.0, n - 1.0);
}

}  // namespace

StationaryStudy stationary_error_study(const Target& target, const Schedule& schedule, std::size_t chains,
                                       std::uint64_t seed, int bootstrap_resamples) {
  const auto& q = require_quadratic(target);
  if (chains < 2) throw Error(ErrorKind::configuration, "need at least two chains");
  if (bootstrap_resamples < 1) throw Error(ErrorKind::configuration, "need at least one bootstrap resample");

  const auto runs = run_chains(Method::rmm, target, schedule, seed, chains);
  Matrix samples(static_cast<Eigen::Index>(chains), target.dimension);
  for (std::size_t c = 0; c < chains; ++c) samples.row(static_cast<Eigen::Index>(c)) = runs[c].state.x.transpose();

  const Matrix target_cov = q.diag.cwiseInverse().asDiagonal();
  StationaryStudy study;
  study.low_power = chains < 100;
  fit_moments(samples, study.sample_mean, study.sample_cov);
  study.w2 = gaussian_w2(study.sample_mean, study.sample_cov, q.center, target_cov, target.strong_convexity);

  Rng rng(seed, std::uint64_t{1} << 40);
  std::uniform_int_distribution<Eigen::Index> pick(0, samples.rows() - 1);
  std::vector<double> boot;
  boot.reserve(static_cast<std::size_t>(bootstrap_resamples));
  Matrix resample(samples.rows(), samples.cols());
  for (int b = 0; b < bootstrap_resamples; ++b) {
    for (Eigen::Index r = 0; r < samples.rows(); ++r) resample.row(r) = samples.row(pick(rng.engine()));
    Vector mean;
    Matrix cov;
    fit_moments(resample, mean, cov);
    boot.push_back(gaussian_w2(mean, cov, q.center, target_cov, target.strong_convexity).normalized);
  }
  std::sort(boot.begin(), boot.end());
  const auto B = boot.size();
  const auto lo = static_cast<std::size_t>(std::floor(0.025 * static_cast<double>(B)));
  const auto hi = std::min(B - 1, static_cast<std::size_t>(std::ceil(0.975 * static_cast<double>(B))) - 1);
  study.ci_low = boot[lo];
  study.ci_high = boot[hi];
  return study;
}

}  // namespace rmld
