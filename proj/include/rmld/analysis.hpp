#pragma once

#include "rmld/samplers.hpp"

#include <map>
#include <string>
#include <vector>

namespace rmld {

// ---------------------------------------------------------------------------
// Wasserstein-2 between Gaussians

struct W2Result {
  double distance = 0;
  double normalized = 0;  // distance / sqrt(d / m)
};

/// W2^2 = |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S2^{1/2} S1 S2^{1/2})^{1/2}), matrix
/// roots by symmetric eigendecomposition with eigenvalues floored at 0.
/// `strong_convexity` sets the length scale sqrt(d/m) of `normalized`.
W2Result gaussian_w2(const Vector& mean1, const Matrix& cov1, const Vector& mean2, const Matrix& cov2,
                     double strong_convexity = 1.0);

/// Symmetric PSD square root.
Matrix psd_sqrt(const Matrix& m);

// ---------------------------------------------------------------------------
// Moment oracles for diagonal quadratic targets. Moments are of the stacked
// state (x, v): indices [0, d) hold x, [d, 2d) hold v.

struct GaussianMoments {
  Vector mean;
  Matrix cov;
};

struct MomentTrace {
  std::vector<Vector> mean;  // iterations 0..N
  std::vector<Matrix> cov;
  double quadrature_error = 0;  // max |M-node - 2M-node| over all iterations and entries
};

/// Composite Gauss-Legendre rule on [0, 1] with `nodes` points (8 per panel).
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
QuadratureRule gauss_legendre_unit(int nodes);

/// Exact first and second moments of the randomized-midpoint chain on a
/// quadratic target. Conditional on alpha each step is affine-Gaussian; the
/// alpha-average is taken with an M-node composite Gauss-Legendre rule.
MomentTrace rmm_moment_oracle(const Target& target, double h, std::size_t N, int quadrature_nodes = 128,
                              const std::optional<Vector>& x0 = std::nullopt,
                              const std::optional<Vector>& v0 = std::nullopt);

/// Covariance of (W1, W2, W3) per coordinate for midpoint time a*h = mid.
Eigen::Matrix3d increment_covariance(double h, double mid);

/// Law of the exact underdamped Langevin diffusion (u = 1/L) at time t.
GaussianMoments exact_uld_moments(const Target& target, double t, const Vector& x0, const Vector& v0);

/// exp(A t) for A = [[0, 1], [-u a, -2]].
Eigen::Matrix2d uld_propagator(double ua, double t);

struct ContractionResult {
  double ratio = 0;
  double bound = 0;  // exp(-t / kappa)
  bool degenerate = false;
  bool holds() const { return ratio <= bound + 1e-9; }
};

/// Two solutions driven by the same Brownian path differ by a deterministic
/// linear ODE. Returns
///   (|dx_t|^2 + |dx_t + dv_t|^2) / (|dx_0|^2 + |dx_0 + dv_0|^2).
ContractionResult contraction_check(const Target& target, double t, const Vector& delta_x0, const Vector& delta_v0);

// ---------------------------------------------------------------------------
// Coupled strong-error experiment

struct CoupledExperimentConfig {
  std::vector<double> h_values;
  double T = 10;
  std::size_t chains = 10;
  std::uint64_t seed = 0;
  int reference_refinement = 32;
  std::vector<Method> methods{Method::rmm, Method::exp_euler_uld};
  std::optional<Vector> start;
};

struct CoupledErrorRow {
  double h;
  Method method;
  double mean_error;
};

struct CoupledErrorTable {
  std::vector<CoupledErrorRow> rows;
  std::map<Method, double> slopes;  // least-squares slope of log error vs log h
  double reference_step = 0;
};

/// Every method runs on the same Brownian path as a fine exponential-Euler
/// reference with step min(h) / reference_refinement; reports the mean over
/// chains of |x_method(T) - x_ref(T)|. Supported methods: rmm, exp_euler_uld.
CoupledErrorTable coupled_error_experiment(const Target& target, const CoupledExperimentConfig& config);

/// Final positions of one chain on the shared path; exposed for verification.
struct CoupledChainResult {
  Vector reference;
  std::vector<std::vector<Vector>> finals;  // [method][h index]
};
CoupledChainResult coupled_chain(const Target& target, const CoupledExperimentConfig& config, std::size_t chain);

double loglog_slope(const std::vector<double>& h, const std::vector<double>& err);

// ---------------------------------------------------------------------------
// Stationary error of the randomized midpoint chain

struct StationaryStudy {
  W2Result w2;
  double ci_low = 0;   // normalized, 2.5% bootstrap percentile
  double ci_high = 0;  // normalized, 97.5% bootstrap percentile
  bool low_power = false;
  Vector sample_mean;
  Matrix sample_cov;
};

StationaryStudy stationary_error_study(const Target& target, const Schedule& schedule, std::size_t chains,
                                       std::uint64_t seed, int bootstrap_resamples = 200);

}  // namespace rmld
