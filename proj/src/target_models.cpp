#include "rmld/target_models.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

namespace rmld {

Target geometric_quadratic(Eigen::Index dim, double kappa) {
  if (dim < 1 || !(kappa >= 1)) throw Error(ErrorKind::invalid_target, "need dim >= 1 and kappa >= 1");
  Vector diag(dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    diag[i] = dim == 1 ? 1.0 : std::pow(kappa, static_cast<double>(i) / static_cast<double>(dim - 1));
  return quadratic_target<double>(diag, Vector::Zero(dim));
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

void check_dataset(const Dataset& data) {
  if (data.size() < 1 || data.dimension() < 1) throw Error(ErrorKind::invalid_target, "empty dataset");
  if (data.labels.size() != data.size())
    throw Error(ErrorKind::invalid_target, "label count does not match feature rows");
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    if (data.labels[i] != 1.0 && data.labels[i] != -1.0)
      throw Error(ErrorKind::invalid_target, "labels must be -1 or +1");
  }
  if (!data.features.allFinite()) throw Error(ErrorKind::invalid_target, "non-finite feature value");
}

}  // namespace

SmoothnessEstimate estimate_smoothness(const Dataset& data, double lambda) {
  check_dataset(data);
  if (!(lambda >= 0)) throw Error(ErrorKind::invalid_target, "lambda must be nonnegative");

  const auto n = static_cast<double>(data.size());
  const Matrix gram = data.features.transpose() * data.features / n;

  // Fixed-seed start vector; a deterministic all-ones start can be
  // orthogonal to the top eigenvector.
  Rng rng(0x5eed);
  Vector v = rng.gaussian_vector<double>(gram.rows());
  v.normalize();

  SmoothnessEstimate est;
  double rayleigh = v.dot(gram * v);
  constexpr int kMaxIterations = 10000;
  constexpr double kTolerance = 1e-6;
  for (int it = 1; it <= kMaxIterations; ++it) {
    Vector w = gram * v;
    const double norm = w.norm();
    if (norm == 0) {  // all-zero features
      rayleigh = 0;
      est.converged = true;
      est.iterations = it;
      break;
    }
    v = w / norm;
    const double next = v.dot(gram * v);
    const bool done = std::abs(next - rayleigh) <= kTolerance * std::abs(next);
    rayleigh = next;
    est.iterations = it;
    if (done) {
      est.converged = true;
      break;
    }
  }
  est.strong_convexity = lambda;
  est.smoothness = lambda + 0.25 * rayleigh;
  return est;
}

Vector find_minimizer(const Target& target, const Vector& start, double tol, int max_iterations) {
  Vector x = start;
  const double step = 1.0 / target.smoothness;
  for (int it = 0; it < max_iterations; ++it) {
    const Vector g = target.gradient(x);
    if (g.norm() <= tol) return x;
    x -= step * g;
  }
  throw Error(ErrorKind::invalid_target, "gradient descent did not reach the requested tolerance");
}

Target logistic_target(const Dataset& data, double lambda) {
  if (!(lambda > 0)) throw Error(ErrorKind::invalid_target, "lambda must be positive");
  check_dataset(data);

  const auto n = static_cast<double>(data.size());
  // Rows pre-multiplied by their labels: margin_i = y_i x_i^T theta.
  const Matrix signed_rows = data.labels.asDiagonal() * data.features;

  Target t;
  t.dimension = data.dimension();
  t.gradient = [signed_rows, lambda, n](const Vector& theta) -> Vector {
    const Vector margins = signed_rows * theta;
    const Vector weights = margins.unaryExpr([](double z) { return sigmoid(-z); });
    return lambda * theta - signed_rows.transpose() * weights / n;
  };
  t.value = [signed_rows, lambda, n](const Vector& theta) -> double {
    const Vector margins = signed_rows * theta;
    double loss = 0;
    for (Eigen::Index i = 0; i < margins.size(); ++i) loss += softplus(-margins[i]);
    return 0.5 * lambda * theta.squaredNorm() + loss / n;
  };
  const SmoothnessEstimate est = estimate_smoothness(data, lambda);
  t.smoothness = est.smoothness;
  t.strong_convexity = est.strong_convexity;
  t.minimizer = find_minimizer(t, Vector::Zero(t.dimension));
  return t;
}

Dataset parse_libsvm(std::istream& in, const LibsvmOptions& options) {
  std::vector<double> labels;
  std::vector<std::vector<std::pair<Eigen::Index, double>>> rows;
  Eigen::Index dim = 0;

  auto parse_number = [](const std::string& tok, std::size_t line) {
    errno = 0;
    char* end = nullptr;
    const double value = std::strtod(tok.c_str(), &end);
    if (tok.empty() || end != tok.c_str() + tok.size() || errno == ERANGE || !std::isfinite(value))
      throw Error(ErrorKind::parse, "line " + std::to_string(line) + ": bad number '" + tok + "'");
    return value;
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream tokens(line);
    std::string tok;
    if (!(tokens >> tok)) continue;

    labels.push_back(parse_number(tok, line_no));
    auto& row = rows.emplace_back();
    while (tokens >> tok) {
      const auto colon = tok.find(':');
      if (colon == std::string::npos || colon == 0)
        throw Error(ErrorKind::parse, "line " + std::to_string(line_no) + ": expected idx:val, got '" + tok + "'");
      const std::string idx_str = tok.substr(0, colon);
      if (idx_str.find_first_not_of("0123456789") != std::string::npos)
        throw Error(ErrorKind::parse, "line " + std::to_string(line_no) + ": bad index '" + idx_str + "'");
      const long long idx = std::stoll(idx_str);
      if (idx < 1) throw Error(ErrorKind::parse, "line " + std::to_string(line_no) + ": indices are 1-based");
      row.emplace_back(static_cast<Eigen::Index>(idx - 1), parse_number(tok.substr(colon + 1), line_no));
      dim = std::max<Eigen::Index>(dim, static_cast<Eigen::Index>(idx));
    }
  }
  if (labels.empty()) throw Error(ErrorKind::format, "no samples in LIBSVM input");
  if (dim == 0) throw Error(ErrorKind::format, "no features in LIBSVM input");

  const std::set<double> alphabet(labels.begin(), labels.end());
  if (alphabet.size() > 2)
    throw Error(ErrorKind::format, "more than two distinct labels (" + std::to_string(alphabet.size()) + ")");

  Dataset data;
  const auto n = static_cast<Eigen::Index>(labels.size());
  data.features = Matrix::Zero(n, dim);
  data.labels.resize(n);
  const double low = *alphabet.begin();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = labels[static_cast<std::size_t>(i)];
    if (alphabet.size() == 2)
      data.labels[i] = y == low ? -1.0 : 1.0;
    else
      data.labels[i] = y <= 0 ? -1.0 : 1.0;
    for (const auto& [j, v] : rows[static_cast<std::size_t>(i)]) data.features(i, j) = v;
  }

  if (options.scale_features) {
    for (Eigen::Index j = 0; j < dim; ++j) {
      auto col = data.features.col(j);
      const double lo = col.minCoeff();
      const double hi = col.maxCoeff();
      if (hi > lo)
        col = ((col.array() - lo) * (2.0 / (hi - lo)) - 1.0).matrix();
      else
        col.setZero();
    }
  }
  return data;
}

Dataset load_libsvm(const std::string& path, const LibsvmOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::format, "cannot open '" + path + "'");
  return parse_libsvm(in, options);
}

Dataset synthetic_logistic_dataset(Eigen::Index n, Eigen::Index dim, std::uint64_t seed) {
  Rng rng(seed);
  const Vector weights = rng.gaussian_vector<double>(dim);
  Dataset data;
  data.features.resize(n, dim);
  data.labels.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) data.features(i, j) = rng.gaussian();
    const double p = sigmoid(data.features.row(i).dot(weights));
    data.labels[i] = rng.uniform() < p ? 1.0 : -1.0;
  }
  return data;
}

}  // namespace rmld
