#include "rmld/samplers.hpp"

#include "rmld/parallel.hpp"

#include <algorithm>
#include <string>

namespace rmld {

namespace {

void check_schedule_inputs(double epsilon, double kappa, double C, double L) {
  if (!(epsilon > 0 && epsilon < 1)) throw Error(ErrorKind::invalid_argument, "epsilon must lie in (0, 1)");
  if (!(kappa >= 1) || !std::isfinite(kappa)) throw Error(ErrorKind::invalid_argument, "kappa must be >= 1");
  if (!(C > 0) || !std::isfinite(C)) throw Error(ErrorKind::invalid_argument, "C must be positive");
  if (!(L > 0) || !std::isfinite(L)) throw Error(ErrorKind::invalid_argument, "L must be positive");
}

std::uint64_t iteration_count(double epsilon, double kappa, double h) {
  const double n = std::ceil(2.0 * kappa / h * std::log(20.0 / (epsilon * epsilon)));
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(n));
}

}  // namespace

Schedule schedule(double epsilon, double kappa, double C, double L) {
  check_schedule_inputs(epsilon, kappa, C, L);
  const double log_inv = std::log(1.0 / epsilon);
  // Either branch is +inf as epsilon -> 1; the clip keeps h finite.
  const double kappa_branch = std::cbrt(epsilon) * std::pow(kappa, -1.0 / 6) * std::pow(log_inv, -1.0 / 6);
  const double eps_branch = std::pow(epsilon, 2.0 / 3) * std::pow(log_inv, -1.0 / 3);
  Schedule s;
  s.C = C;
  s.h = std::min(C * std::min(kappa_branch, eps_branch), kMaxStepSize);
  s.N = iteration_count(epsilon, kappa, s.h);
  s.u = 1.0 / L;
  s.R = 1;
  s.K = 2;
  return s;
}

Schedule schedule_parallel(double epsilon, double kappa, double C, double L, ParallelScheduleConstants constants) {
  check_schedule_inputs(epsilon, kappa, C, L);
  if (!(constants.c_R > 0) || !(constants.c_K > 0))
    throw Error(ErrorKind::invalid_argument, "c_R and c_K must be positive");
  Schedule s;
  s.C = C;
  // R^4 delta^4 = h^4 <= 1/4 is implied by h <= 1/20.
  s.h = std::min({C, kMaxStepSize, std::pow(0.25, 0.25)});
  const double r = std::ceil(constants.c_R * std::sqrt(kappa) / epsilon * std::log(1.0 / epsilon));
  s.R = std::max(1, static_cast<int>(r));
  const double delta = s.h / s.R;
  const double k = std::ceil(constants.c_K * std::log(1.0 / std::pow(delta, 4)));
  s.K = std::max(2, static_cast<int>(k));
  s.N = iteration_count(epsilon, kappa, s.h);
  s.u = 1.0 / L;
  return s;
}

void validate(const Schedule& s, double L) {
  if (!(s.h > 0) || !(s.h <= kMaxStepSize)) throw Error(ErrorKind::schedule, "h must lie in (0, 1/20]");
  if (std::abs(s.u * L - 1.0) > 1e-12) throw Error(ErrorKind::schedule, "u must equal 1/L");
  if (s.R < 1) throw Error(ErrorKind::schedule, "R must be at least 1");
  if (s.K < 2) throw Error(ErrorKind::schedule, "K must be at least 2");
  const double delta = s.h / s.R;
  if (std::pow(s.R * delta, 4) > 0.25) throw Error(ErrorKind::schedule, "R^4 delta^4 must not exceed 1/4");
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::rmm: return "rmm";
    case Method::rmm_parallel: return "rmm_parallel";
    case Method::euler_uld: return "euler_uld";
    case Method::exp_euler_uld: return "exp_euler_uld";
    case Method::lmc: return "lmc";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::rmm, Method::rmm_parallel, Method::euler_uld, Method::exp_euler_uld, Method::lmc})
    if (to_string(m) == name) return m;
  throw Error(ErrorKind::configuration, "unknown method '" + std::string(name) + "'");
}

SamplerState<double> initial_state(const Target& target, const std::optional<Vector>& start) {
  SamplerState<double> s;
  if (start) {
    if (start->size() != target.dimension)
      throw Error(ErrorKind::configuration, "start point dimension does not match target");
    s.x = *start;
  } else if (target.minimizer) {
    s.x = *target.minimizer;
  } else {
    throw Error(ErrorKind::configuration, "target has no minimizer and no start point was given");
  }
  s.v = Vector::Zero(target.dimension);
  return s;
}

RunResult run_chain(Method method, const Target& target, const Schedule& schedule, Rng& rng,
                    const std::optional<Vector>& start, const StepObserver& observer) {
  RunResult result;
  result.state = initial_state(target, start);
  const Target counted = counting(target, result.gradient_evaluations);
  const double h = schedule.h;
  const Eigen::Index dim = target.dimension;

  std::vector<double> alphas(static_cast<std::size_t>(std::max(schedule.R, 1)));
  for (std::uint64_t n = 0; n < schedule.N; ++n) {
    auto& s = result.state;
    switch (method) {
      case Method::rmm: {
        const double alpha = rng.uniform();
        const auto inc = step_increments(h, alpha, dim, rng);
        s = rmm_step(s, counted, h, alpha, inc);
        break;
      }
      case Method::rmm_parallel: {
        const auto R = alphas.size();
        for (std::size_t i = 0; i < R; ++i) alphas[i] = (static_cast<double>(i) + rng.uniform()) / static_cast<double>(R);
        const auto inc = parallel_step_increments(h, alphas, dim, rng);
        s = parallel_rmm_step(s, counted, h, schedule.K, alphas, inc);
        break;
      }
      case Method::euler_uld: s = euler_uld_step(s, counted, h, rng); break;
      case Method::exp_euler_uld: s = exponential_euler_uld_step(s, counted, h, rng); break;
      case Method::lmc: s = overdamped_lmc_step(s, counted, h, rng); break;
    }
    if (observer) observer(s);
  }
  return result;
}

RunResult rmm_run(const Target& target, const Schedule& schedule, std::uint64_t seed,
                  const std::optional<Vector>& start, const StepObserver& observer) {
  Rng rng(seed);
  return run_chain(Method::rmm, target, schedule, rng, start, observer);
}

std::vector<RunResult> run_chains(Method method, const Target& target, const Schedule& schedule,
                                  std::uint64_t seed, std::size_t chains, const std::optional<Vector>& start) {
  std::vector<RunResult> results(chains);
  parallel_for(chains, [&](std::size_t c) {
    Rng rng(seed, c);
    results[c] = run_chain(method, target, schedule, rng, start);
  });
  return results;
}

}  // namespace rmld
