#pragma once

#include "rmld/brownian_path.hpp"
#include "rmld/target_models.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

namespace rmld {

/// Largest step the integrators accept by default. The per-step error
/// bounds of the randomized midpoint method assume h <= 1/20.
inline constexpr double kMaxStepSize = 1.0 / 20;

template <typename Scalar>
struct SamplerState {
  VectorX<Scalar> x;
  VectorX<Scalar> v;
  std::uint64_t step = 0;
};

/// int_a^b (1 - e^{-2(t - s)}) ds, the kernel weight of the gradient on
/// [a, b] for a position evaluated at time t >= b.
template <typename Scalar>
Scalar position_kernel_integral(Scalar a, Scalar b, Scalar t) {
  return (b - a) + Scalar(0.5) * std::exp(Scalar(-2) * (t - b)) * std::expm1(Scalar(-2) * (b - a));
}

/// 1 - e^{-2t}
template <typename Scalar>
Scalar one_minus_decay(Scalar t) {
  return -std::expm1(Scalar(-2) * t);
}

namespace detail {

template <typename Scalar>
void check_uld_step(const SamplerState<Scalar>& s, const TargetSpec<Scalar>& target, Scalar h,
                    Scalar max_step) {
  if (!(h > 0) || !(h <= max_step) || !std::isfinite(static_cast<double>(h)))
    throw Error(ErrorKind::schedule, "step size must lie in (0, " + std::to_string(double(max_step)) + "]");
  if (s.x.size() != target.dimension || s.v.size() != target.dimension)
    throw Error(ErrorKind::invalid_argument, "state dimension does not match target");
}

template <typename Scalar>
void check_noise(const VectorX<Scalar>& w, Eigen::Index dim) {
  if (w.size() != dim) throw Error(ErrorKind::invalid_argument, "noise dimension does not match target");
}

}  // namespace detail

/// One randomized-midpoint step of underdamped Langevin dynamics with
/// u = 1/L. The gradient is evaluated exactly twice: at x and at the
/// random midpoint x(alpha h).
template <typename Scalar>
SamplerState<Scalar> rmm_step(const SamplerState<Scalar>& s, const TargetSpec<Scalar>& target, Scalar h,
                              Scalar alpha, const StepIncrements<Scalar>& inc,
                              Scalar max_step = Scalar(kMaxStepSize)) {
  detail::check_uld_step(s, target, h, max_step);
  if (!(alpha >= 0 && alpha <= 1)) throw Error(ErrorKind::invalid_argument, "alpha must lie in [0, 1]");
  detail::check_noise(inc.W1, target.dimension);
  detail::check_noise(inc.W2, target.dimension);
  detail::check_noise(inc.W3, target.dimension);

  const Scalar u = Scalar(1) / target.smoothness;
  const Scalar su = std::sqrt(u);
  const Scalar mid = alpha * h;

  const VectorX<Scalar> g0 = target.gradient(s.x);
  const Scalar head_weight = position_kernel_integral(Scalar(0), mid, mid);
  const VectorX<Scalar> x_mid =
      s.x + Scalar(0.5) * one_minus_decay(mid) * s.v - Scalar(0.5) * u * head_weight * g0 + su * inc.W1;

  const VectorX<Scalar> g_mid = target.gradient(x_mid);
  SamplerState<Scalar> out;
  out.x = s.x + Scalar(0.5) * one_minus_decay(h) * s.v -
          Scalar(0.5) * u * (h * one_minus_decay(h - mid)) * g_mid + su * inc.W2;
  out.v = std::exp(Scalar(-2) * h) * s.v - u * (h * std::exp(Scalar(-2) * (h - mid))) * g_mid +
          Scalar(2) * su * inc.W3;
  out.step = s.step + 1;
  return out;
}

/// One step of the parallel randomized midpoint method: R midpoints, one per
/// cell of width h/R, refined by K-1 sweeps of the discretized fixed-point
/// map. Each sweep is a pure map over the R midpoints (R gradient calls),
/// followed by R calls for the final update: R*K evaluations per step.
template <typename Scalar>
SamplerState<Scalar> parallel_rmm_step(const SamplerState<Scalar>& s, const TargetSpec<Scalar>& target,
                                       Scalar h, int K, const std::vector<Scalar>& alphas,
                                       const ParallelIncrements<Scalar>& inc,
                                       Scalar max_step = Scalar(kMaxStepSize)) {
  detail::check_uld_step(s, target, h, max_step);
  if (K < 2) throw Error(ErrorKind::schedule, "K must be at least 2");
  const auto R = alphas.size();
  if (R == 0 || inc.W1.size() != R)
    throw Error(ErrorKind::invalid_argument, "need one increment per midpoint");
  for (const auto& w : inc.W1) detail::check_noise(w, target.dimension);
  detail::check_noise(inc.W2, target.dimension);
  detail::check_noise(inc.W3, target.dimension);

  const Scalar u = Scalar(1) / target.smoothness;
  const Scalar su = std::sqrt(u);
  const Scalar delta = h / Scalar(R);

  // coeff(i, j) = int_{(j-1) delta}^{min(j delta, alpha_i h)} (1 - e^{-2(alpha_i h - s)}) ds
  MatrixX<Scalar> coeff = MatrixX<Scalar>::Zero(R, R);
  std::vector<VectorX<Scalar>> base(R);
  for (std::size_t i = 0; i < R; ++i) {
    const Scalar mid = alphas[i] * h;
    for (std::size_t j = 0; j <= i; ++j) {
      const Scalar a = Scalar(j) * delta;
      const Scalar b = std::min(Scalar(j + 1) * delta, mid);
      if (b > a) coeff(i, j) = position_kernel_integral(a, b, mid);
    }
    base[i] = s.x + Scalar(0.5) * one_minus_decay(mid) * s.v + su * inc.W1[i];
  }

  std::vector<VectorX<Scalar>> points(R, s.x);
  std::vector<VectorX<Scalar>> grads(R);
  for (int k = 1; k < K; ++k) {
    for (std::size_t j = 0; j < R; ++j) grads[j] = target.gradient(points[j]);
    for (std::size_t i = 0; i < R; ++i) {
      VectorX<Scalar> drift = coeff(i, 0) * grads[0];
      for (std::size_t j = 1; j <= i; ++j) drift += coeff(i, j) * grads[j];
      points[i] = base[i] - Scalar(0.5) * u * drift;
    }
  }

  VectorX<Scalar> x_drift = VectorX<Scalar>::Zero(target.dimension);
  VectorX<Scalar> v_drift = VectorX<Scalar>::Zero(target.dimension);
  for (std::size_t i = 0; i < R; ++i) {
    const VectorX<Scalar> g = target.gradient(points[i]);
    const Scalar remaining = h - alphas[i] * h;
    x_drift += (delta * one_minus_decay(remaining)) * g;
    v_drift += (delta * std::exp(Scalar(-2) * remaining)) * g;
  }

  SamplerState<Scalar> out;
  out.x = s.x + Scalar(0.5) * one_minus_decay(h) * s.v - Scalar(0.5) * u * x_drift + su * inc.W2;
  out.v = std::exp(Scalar(-2) * h) * s.v - u * v_drift + Scalar(2) * su * inc.W3;
  out.step = s.step + 1;
  return out;
}

/// Plain Euler discretization of underdamped Langevin dynamics.
template <typename Scalar>
SamplerState<Scalar> euler_uld_step(const SamplerState<Scalar>& s, const TargetSpec<Scalar>& target, Scalar h,
                                    const VectorX<Scalar>& zeta, Scalar max_step = Scalar(kMaxStepSize)) {
  detail::check_uld_step(s, target, h, max_step);
  detail::check_noise(zeta, target.dimension);
  const Scalar u = Scalar(1) / target.smoothness;
  SamplerState<Scalar> out;
  out.v = (Scalar(1) - Scalar(2) * h) * s.v - u * h * target.gradient(s.x) + Scalar(2) * std::sqrt(u * h) * zeta;
  out.x = s.x + h * s.v;
  out.step = s.step + 1;
  return out;
}

template <typename Scalar>
SamplerState<Scalar> euler_uld_step(const SamplerState<Scalar>& s, const TargetSpec<Scalar>& target, Scalar h,
                                    Rng& rng) {
  return euler_uld_step(s, target, h, rng.gaussian_vector<Scalar>(target.dimension));
}

/// Exponential integrator with the gradient frozen at the start of the step.
/// w2 and w3 are the W2/W3-type integrals over [0, h].
template <typename Scalar>
SamplerState<Scalar> exponential_euler_uld_step(const SamplerState<Scalar>& s, const TargetSpec<Scalar>& target,
                                                Scalar h, const VectorX<Scalar>& w2, const VectorX<Scalar>& w3,
                                                Scalar max_step = Scalar(kMaxStepSize)) {
  detail::check_uld_step(s, target, h, max_step);
  detail::check_noise(w2, target.dimension);
  detail::check_noise(w3, target.dimension);
  const Scalar u = Scalar(1) / target.smoothness;
  const Scalar su = std::sqrt(u);
  const VectorX<Scalar> g = target.gradient(s.x);
  SamplerState<Scalar> out;
  out.x = s.x + Scalar(0.5) * one_minus_decay(h) * s.v -
          Scalar(0.5) * u * position_kernel_integral(Scalar(0), h, h) * g + su * w2;
  out.v = std::exp(Scalar(-2) * h) * s.v - Scalar(0.5) * u * one_minus_decay(h) * g + Scalar(2) * su * w3;
  out.step = s.step + 1;
  return out;
}

template <typename Scalar>
SamplerState<Scalar> exponential_euler_uld_step(const SamplerState<Scalar>& s, const TargetSpec<Scalar>& target,
                                                Scalar h, Rng& rng) {
  detail::check_uld_step(s, target, h, Scalar(kMaxStepSize));
  auto [w2, w3] = kernel_integrals(sample_interval(h, target.dimension, rng));
  return exponential_euler_uld_step(s, target, h, w2, w3);
}

/// Euler-Maruyama for overdamped Langevin dynamics. The velocity is carried
/// through unchanged.
template <typename Scalar>
SamplerState<Scalar> overdamped_lmc_step(const SamplerState<Scalar>& s, const TargetSpec<Scalar>& target, Scalar h,
                                         const VectorX<Scalar>& zeta) {
  if (!(h > 0) || !std::isfinite(static_cast<double>(h)))
    throw Error(ErrorKind::schedule, "step size must be positive and finite");
  if (s.x.size() != target.dimension) throw Error(ErrorKind::invalid_argument, "state dimension does not match target");
  detail::check_noise(zeta, target.dimension);
  SamplerState<Scalar> out;
  out.x = s.x - h * target.gradient(s.x) + std::sqrt(Scalar(2) * h) * zeta;
  out.v = s.v;
  out.step = s.step + 1;
  return out;
}

template <typename Scalar>
SamplerState<Scalar> overdamped_lmc_step(const SamplerState<Scalar>& s, const TargetSpec<Scalar>& target, Scalar h,
                                         Rng& rng) {
  return overdamped_lmc_step(s, target, h, rng.gaussian_vector<Scalar>(target.dimension));
}

// ---------------------------------------------------------------------------
// Schedules

struct Schedule {
  double h = kMaxStepSize;
  std::uint64_t N = 0;
  double u = 1;
  int R = 1;
  int K = 2;
  double C = 0.5;
};

inline constexpr double kDefaultScheduleConstant = 0.5;

/// Step size and iteration count for the randomized midpoint method:
///   h = C min(eps^{1/3} kappa^{-1/6} log^{-1/6}(1/eps), eps^{2/3} log^{-1/3}(1/eps)),
/// clipped to 1/20, and N = ceil(2 kappa / h * log(20 / eps^2)).
Schedule schedule(double epsilon, double kappa, double C, double L);

struct ParallelScheduleConstants {
  double c_R = 1.0;  // R = ceil(c_R sqrt(kappa) / eps * log(1/eps))
  double c_K = 3.0;  // K = max(2, ceil(c_K log(1/delta^4)))
};

/// Constant step h = min(C, 1/20), R midpoints and K fixed-point sweeps.
Schedule schedule_parallel(double epsilon, double kappa, double C, double L,
                           ParallelScheduleConstants constants = {});

/// Throws a schedule error unless h in (0, 1/20], u L = 1, R >= 1, K >= 2 and
/// R^4 delta^4 <= 1/4.
void validate(const Schedule& s, double L);

// ---------------------------------------------------------------------------
// Chains

enum class Method { rmm, rmm_parallel, euler_uld, exp_euler_uld, lmc };

std::string_view to_string(Method m);
Method parse_method(std::string_view name);

struct RunResult {
  SamplerState<double> state;
  std::uint64_t gradient_evaluations = 0;
};

using StepObserver = std::function<void(const SamplerState<double>&)>;

/// x0 = start if given, else the target's minimizer; v0 = 0.
SamplerState<double> initial_state(const Target& target, const std::optional<Vector>& start = std::nullopt);

/// Runs schedule.N steps of `method`. Per step, randomness is drawn as:
/// rmm: alpha, then increments; rmm_parallel: alpha_1..alpha_R, then
/// increments; exp_euler_uld: one interval; euler_uld and lmc: one normal
/// vector. Gradient calls are counted through a counting wrapper.
RunResult run_chain(Method method, const Target& target, const Schedule& schedule, Rng& rng,
                    const std::optional<Vector>& start = std::nullopt, const StepObserver& observer = {});

/// Randomized-midpoint chain seeded from `seed`.
RunResult rmm_run(const Target& target, const Schedule& schedule, std::uint64_t seed,
                  const std::optional<Vector>& start = std::nullopt, const StepObserver& observer = {});

/// Independent chains; chain c uses Rng(seed, c). Runs on a thread pool,
/// results are in chain order and independent of scheduling.
std::vector<RunResult> run_chains(Method method, const Target& target, const Schedule& schedule,
                                  std::uint64_t seed, std::size_t chains,
                                  const std::optional<Vector>& start = std::nullopt);

}  // namespace rmld
