#pragma once

#include "rmld/core.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

// Exact sampling of the Gaussian Brownian functionals driving the
// underdamped Langevin integrators.
//
// Every interval [a, b] of a d-dimensional Brownian path B is summarised by
//   H = int_a^b dB_s            and   G = int_a^b exp(2 (s - a)) dB_s.
// G uses a local origin so that stored values stay finite at any absolute
// time. Per coordinate (G_i, H_i) is centred Gaussian with
//   Var H = t,  Var G = (e^{4t} - 1) / 4,  Cov(G, H) = (e^{2t} - 1) / 2
// for t = b - a, independently across coordinates and disjoint intervals.
//
// Random draw order is fixed: for each interval, d normals for the H
// component, then d normals for the G component; intervals left to right.

namespace rmld {

template <typename Scalar>
struct IntervalCovariance {
  Scalar var_h;
  Scalar var_g;
  Scalar cov_gh;
  Scalar schur;  // var_g - cov_gh^2 / var_h, the conditional variance of G given H
};

/// Covariance of (G, H) over an interval of length t. The Schur complement
/// cancels catastrophically for small t and is evaluated from its Taylor
/// series there.
template <typename Scalar>
IntervalCovariance<Scalar> interval_covariance(Scalar t) {
  using std::expm1;
  IntervalCovariance<Scalar> c;
  c.var_h = t;
  c.var_g = expm1(Scalar(4) * t) / Scalar(4);
  c.cov_gh = expm1(Scalar(2) * t) / Scalar(2);
  if (t < Scalar(0.05)) {
    // t^3/3 + 2t^4/3 + 34t^5/45 + 28t^6/45 + 43t^7/105 + 214t^8/945
    //   + 1538t^9/14175 + 652t^10/14175 + 8194t^11/467775
    static constexpr double kCoeffs[] = {8194.0 / 467775, 652.0 / 14175, 1538.0 / 14175,
                                         214.0 / 945,     43.0 / 105,    28.0 / 45,
                                         34.0 / 45,       2.0 / 3,       1.0 / 3};
    Scalar acc = 0;
    for (double k : kCoeffs) acc = acc * t + Scalar(k);
    c.schur = acc * t * t * t;
  } else {
    c.schur = c.var_g - c.cov_gh * c.cov_gh / t;
  }
  return c;
}

template <typename Scalar>
struct IntervalStats {
  Scalar length = 0;
  VectorX<Scalar> H;
  VectorX<Scalar> G;

  Eigen::Index dimension() const { return H.size(); }
};

template <typename Scalar>
IntervalStats<Scalar> zero_interval(Eigen::Index dim) {
  return {Scalar(0), VectorX<Scalar>::Zero(dim), VectorX<Scalar>::Zero(dim)};
}

template <typename Scalar>
IntervalStats<Scalar> sample_interval(Scalar length, Eigen::Index dim, Rng& rng) {
  if (!(length > 0) || !std::isfinite(static_cast<double>(length)))
    throw Error(ErrorKind::invalid_argument, "interval length must be positive and finite");
  const auto cov = interval_covariance(length);
  const Scalar sd_h = std::sqrt(length);
  const Scalar slope = cov.cov_gh / sd_h;
  const Scalar sd_cond = std::sqrt(cov.schur);

  IntervalStats<Scalar> out;
  out.length = length;
  const VectorX<Scalar> z_h = rng.gaussian_vector<Scalar>(dim);
  const VectorX<Scalar> z_g = rng.gaussian_vector<Scalar>(dim);
  out.H = sd_h * z_h;
  out.G = slope * z_h + sd_cond * z_g;
  return out;
}

/// Statistics of the concatenation [a, b] + [b, c].
template <typename Scalar>
IntervalStats<Scalar> compose(const IntervalStats<Scalar>& left, const IntervalStats<Scalar>& right) {
  IntervalStats<Scalar> out;
  out.length = left.length + right.length;
  out.H = left.H + right.H;
  out.G = left.G + std::exp(Scalar(2) * left.length) * right.G;
  return out;
}

template <typename Scalar>
struct SplitIntervals {
  IntervalStats<Scalar> left;
  IntervalStats<Scalar> right;
};

/// Draws the two halves of `parent` cut at local time `at`, conditioned on
/// reproducing the parent. The left half is an unconditional draw corrected
/// by the conditional-mean update (Matheron's rule); the right half follows
/// from the composition law, so compose(left, right) == parent up to rounding.
template <typename Scalar>
SplitIntervals<Scalar> split(const IntervalStats<Scalar>& parent, Scalar at, Rng& rng) {
  if (!(at > 0) || !(at < parent.length))
    throw Error(ErrorKind::invalid_argument, "split point must lie strictly inside the interval");
  const Eigen::Index dim = parent.dimension();
  const Scalar rest = parent.length - at;

  IntervalStats<Scalar> left = sample_interval(at, dim, rng);
  const IntervalStats<Scalar> right = sample_interval(rest, dim, rng);
  const Scalar weight = std::exp(Scalar(2) * at);

  // Cov((H_l, G_l), (H, G)) equals the left interval's own covariance.
  const auto lc = interval_covariance(at);
  const auto pc = interval_covariance(parent.length);
  // Closed-form Cholesky factor of the parent covariance [[t, c], [c, vg]].
  const Scalar l11 = std::sqrt(pc.var_h);
  const Scalar l21 = pc.cov_gh / l11;
  const Scalar l22 = std::sqrt(pc.schur);

  for (Eigen::Index i = 0; i < dim; ++i) {
    const Scalar r_h = parent.H[i] - (left.H[i] + right.H[i]);
    const Scalar r_g = parent.G[i] - (left.G[i] + weight * right.G[i]);
    // Solve P z = r via L L^T.
    const Scalar y1 = r_h / l11;
    const Scalar y2 = (r_g - l21 * y1) / l22;
    const Scalar z2 = y2 / l22;
    const Scalar z1 = (y1 - l21 * z2) / l11;
    left.H[i] += lc.var_h * z1 + lc.cov_gh * z2;
    left.G[i] += lc.cov_gh * z1 + lc.var_g * z2;
  }

  IntervalStats<Scalar> fixed_right;
  fixed_right.length = rest;
  fixed_right.H = parent.H - left.H;
  fixed_right.G = (parent.G - left.G) / weight;
  return {std::move(left), std::move(fixed_right)};
}

/// The three stochastic integrals used by one randomized-midpoint step:
///   W1 = int_0^{ah} (1 - e^{-2(ah - s)}) dB_s
///   W2 = int_0^h   (1 - e^{-2(h - s)}) dB_s
///   W3 = int_0^h   e^{-2(h - s)} dB_s
template <typename Scalar>
struct StepIncrements {
  VectorX<Scalar> W1;
  VectorX<Scalar> W2;
  VectorX<Scalar> W3;
};

/// (W2, W3) of a whole step from its interval statistics.
template <typename Scalar>
std::pair<VectorX<Scalar>, VectorX<Scalar>> kernel_integrals(const IntervalStats<Scalar>& step) {
  const Scalar decay = std::exp(Scalar(-2) * step.length);
  VectorX<Scalar> w3 = decay * step.G;
  VectorX<Scalar> w2 = step.H - w3;
  return {std::move(w2), std::move(w3)};
}

/// Assembles the step increments from the statistics of [0, ah] and [ah, h].
template <typename Scalar>
StepIncrements<Scalar> increments_from_intervals(const IntervalStats<Scalar>& head,
                                                 const IntervalStats<Scalar>& tail) {
  StepIncrements<Scalar> inc;
  inc.W1 = head.H - std::exp(Scalar(-2) * head.length) * head.G;
  auto [w2, w3] = kernel_integrals(compose(head, tail));
  inc.W2 = std::move(w2);
  inc.W3 = std::move(w3);
  return inc;
}

namespace detail {

template <typename Scalar>
IntervalStats<Scalar> sample_or_zero(Scalar length, Eigen::Index dim, Rng& rng) {
  return length > 0 ? sample_interval(length, dim, rng) : zero_interval<Scalar>(dim);
}

template <typename Scalar>
void check_step(Scalar h) {
  if (!(h > 0) || !std::isfinite(static_cast<double>(h)))
    throw Error(ErrorKind::invalid_argument, "step size must be positive and finite");
}

}  // namespace detail

template <typename Scalar>
StepIncrements<Scalar> step_increments(Scalar h, Scalar alpha, Eigen::Index dim, Rng& rng) {
  detail::check_step(h);
  if (!(alpha >= 0 && alpha <= 1)) throw Error(ErrorKind::invalid_argument, "alpha must lie in [0, 1]");
  const Scalar mid = alpha * h;
  const auto head = detail::sample_or_zero(mid, dim, rng);
  const auto tail = detail::sample_or_zero(h - mid, dim, rng);
  return increments_from_intervals(head, tail);
}

template <typename Scalar>
struct ParallelIncrements {
  std::vector<VectorX<Scalar>> W1;  // one per midpoint
  VectorX<Scalar> W2;
  VectorX<Scalar> W3;
};

/// Increments for R midpoints alpha_i h with alpha_i in [(i-1)/R, i/R].
/// [0, h] is cut at 0, alpha_1 h, h/R, alpha_2 h, 2h/R, ..., h; each cell is
/// sampled independently, left to right. With R = 1 the draws coincide with
/// step_increments.
template <typename Scalar>
ParallelIncrements<Scalar> parallel_step_increments(Scalar h, const std::vector<Scalar>& alphas,
                                                    Eigen::Index dim, Rng& rng) {
  detail::check_step(h);
  const auto R = alphas.size();
  if (R == 0) throw Error(ErrorKind::invalid_argument, "need at least one midpoint");
  for (std::size_t i = 0; i < R; ++i) {
    const Scalar lo = Scalar(i) / Scalar(R);
    const Scalar hi = Scalar(i + 1) / Scalar(R);
    if (!(alphas[i] >= lo && alphas[i] <= hi))
      throw Error(ErrorKind::invalid_argument, "alpha_" + std::to_string(i + 1) + " outside its cell");
  }

  ParallelIncrements<Scalar> out;
  out.W1.reserve(R);
  auto prefix = zero_interval<Scalar>(dim);
  for (std::size_t i = 0; i < R; ++i) {
    const Scalar cell_start = h * Scalar(i) / Scalar(R);
    const Scalar cell_end = h * Scalar(i + 1) / Scalar(R);
    const Scalar mid = alphas[i] * h;
    prefix = compose(prefix, detail::sample_or_zero(mid - cell_start, dim, rng));
    out.W1.push_back(prefix.H - std::exp(Scalar(-2) * prefix.length) * prefix.G);
    prefix = compose(prefix, detail::sample_or_zero(cell_end - mid, dim, rng));
  }
  auto [w2, w3] = kernel_integrals(prefix);
  out.W2 = std::move(w2);
  out.W3 = std::move(w3);
  return out;
}

/// A location on a BrownianPath grid: cell index plus an offset inside it.
struct PathPoint {
  std::size_t cell = 0;
  double offset = 0;
};

/// One Brownian path on [0, cells * cell_length], stored as per-cell
/// statistics. Queries at interior points refine the containing piece by
/// conditional splitting, so every query ever made stays consistent with a
/// single path. Not thread safe: use one path per worker.
class BrownianPath {
 public:
  BrownianPath(Eigen::Index dim, double cell_length, std::size_t cells, Rng rng);

  double cell_length() const { return cell_length_; }
  std::size_t cells() const { return cells_.size(); }
  Eigen::Index dimension() const { return dim_; }

  /// Unrefined statistics of one grid cell.
  const IntervalStats<double>& cell(std::size_t i) const { return cells_[i].stats; }

  /// Statistics of [from, to] in local coordinates of `from`.
  IntervalStats<double> interval(PathPoint from, PathPoint to);

  /// Number of pieces cell i has been refined into.
  std::size_t pieces(std::size_t i) const { return cells_[i].pieces.size(); }

 private:
  struct Piece {
    double offset;
    IntervalStats<double> stats;
  };
  struct Cell {
    IntervalStats<double> stats;
    std::vector<Piece> pieces;  // sorted by offset; starts as one piece
  };

  PathPoint normalize(PathPoint p) const;
  void ensure_boundary(PathPoint p);
  IntervalStats<double> within_cell(std::size_t cell, double from, double to) const;

  Eigen::Index dim_;
  double cell_length_;
  std::vector<Cell> cells_;
  Rng rng_;
};

}  // namespace rmld
