#pragma once

#include "rmld/core.hpp"

#include <cstdint>
#include <cmath>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

namespace rmld {

/// Diagonal quadratic structure f(x) = 1/2 sum_i a_i (x_i - c_i)^2. Targets
/// that carry it support the exact moment oracles in analysis.hpp.
template <typename Scalar>
struct QuadraticForm {
  VectorX<Scalar> diag;
  VectorX<Scalar> center;
};

/// A gradient oracle for an m-strongly convex, L-smooth potential f.
/// The sampled density is proportional to exp(-f).
template <typename Scalar>
struct TargetSpec {
  using Vec = VectorX<Scalar>;

  Eigen::Index dimension = 0;
  std::function<Vec(const Vec&)> gradient;
  Scalar smoothness = 1;        // L
  Scalar strong_convexity = 1;  // m
  std::optional<Vec> minimizer;
  std::optional<std::function<Scalar(const Vec&)>> value;
  std::optional<QuadraticForm<Scalar>> quadratic;

  Scalar condition_number() const { return smoothness / strong_convexity; }
};

using Target = TargetSpec<double>;

template <typename Scalar>
TargetSpec<Scalar> quadratic_target(const VectorX<Scalar>& diag, const VectorX<Scalar>& center) {
  if (diag.size() == 0 || diag.size() != center.size())
    throw Error(ErrorKind::invalid_target, "diag and center must be nonempty and of equal length");
  for (Eigen::Index i = 0; i < diag.size(); ++i) {
    if (!(diag[i] > 0) || !std::isfinite(static_cast<double>(diag[i])))
      throw Error(ErrorKind::invalid_target, "quadratic diagonal entries must be positive and finite");
  }
  TargetSpec<Scalar> t;
  t.dimension = diag.size();
  t.gradient = [diag, center](const VectorX<Scalar>& x) -> VectorX<Scalar> {
    return diag.cwiseProduct(x - center);
  };
  t.value = [diag, center](const VectorX<Scalar>& x) -> Scalar {
    return Scalar(0.5) * (x - center).cwiseAbs2().dot(diag);
  };
  t.smoothness = diag.maxCoeff();
  t.strong_convexity = diag.minCoeff();
  t.minimizer = center;
  t.quadratic = QuadraticForm<Scalar>{diag, center};
  return t;
}

/// Quadratic with a geometric spectrum from 1 to kappa, centered at the origin.
Target geometric_quadratic(Eigen::Index dim, double kappa);

/// Wraps a target so every gradient evaluation increments `counter`.
/// The counter must outlive the returned target.
template <typename Scalar>
TargetSpec<Scalar> counting(const TargetSpec<Scalar>& target, std::uint64_t& counter) {
  TargetSpec<Scalar> out = target;
  out.gradient = [inner = target.gradient, &counter](const VectorX<Scalar>& x) {
    ++counter;
    return inner(x);
  };
  return out;
}

struct Dataset {
  Matrix features;  // n x d, one sample per row
  Vector labels;    // entries in {-1, +1}

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dimension() const { return features.cols(); }
};

struct SmoothnessEstimate {
  double smoothness = 0;
  double strong_convexity = 0;
  bool converged = false;
  int iterations = 0;
};

/// m = lambda and L = lambda + lambda_max(X^T X / n) / 4, the top eigenvalue
/// found by power iteration (relative tolerance 1e-6, at most 1e4 iterations).
SmoothnessEstimate estimate_smoothness(const Dataset& data, double lambda);

/// Ridge-regularized logistic regression posterior:
///   f(theta) = lambda/2 |theta|^2 + 1/n sum_i log(1 + exp(-y_i x_i^T theta)).
/// The minimizer is located by gradient descent to |grad f| <= 1e-8.
Target logistic_target(const Dataset& data, double lambda);

/// Numerically stable logistic sigmoid.
double sigmoid(double z);

/// Gradient descent with step 1/L from `start` until |grad f| <= tol.
Vector find_minimizer(const Target& target, const Vector& start, double tol = 1e-8,
                      int max_iterations = 1000000);

struct LibsvmOptions {
  bool scale_features = false;  // min-max scale every column to [-1, 1]
};

/// Reads LIBSVM sparse text ("label idx:val ...", 1-based indices) into a
/// dense dataset. Two-letter label alphabets map smaller -> -1, larger -> +1.
Dataset load_libsvm(const std::string& path, const LibsvmOptions& options = {});
Dataset parse_libsvm(std::istream& in, const LibsvmOptions& options = {});

/// Synthetic logistic data: standard normal features, labels drawn from the
/// logistic model with a standard normal weight vector.
Dataset synthetic_logistic_dataset(Eigen::Index n, Eigen::Index dim, std::uint64_t seed);

}  // namespace rmld
