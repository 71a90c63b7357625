#pragma once

#include "rmld/analysis.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace rmld::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Fully resolved command configuration.
struct RunConfig {
  std::string target = "quadratic";  // quadratic | logistic
  Eigen::Index dim = 2;
  double kappa = 10;
  std::vector<double> diag;
  std::vector<double> center;
  std::string dataset;
  double lambda = 1e-2;
  bool scale_features = false;
  Eigen::Index synthetic_n = 0;
  Eigen::Index synthetic_d = 0;

  std::string method = "rmm";
  std::vector<double> epsilon{0.5};
  std::vector<double> h;
  std::int64_t n_steps = -1;
  int r_midpoints = 0;
  int k_iters = 0;
  double C = kDefaultScheduleConstant;
  double c_R = 1.0;
  double c_K = 3.0;
  double L = 1.0;  // schedule subcommand only
  bool parallel = false;

  std::uint64_t seed = 0;
  std::size_t chains = 1;
  double t_total = 10;
  int refinement = 32;
  std::string out = "-";
};

/// Reads "key = value" lines ('#' starts a comment). Keys are flag names
/// without the leading dashes.
std::map<std::string, std::string> read_config_file(const std::string& path);

/// Builds the target named by the config.
Target make_target(const RunConfig& config);

/// Resolves the (h, N, R, K) schedule for `epsilon`, applying explicit
/// --h / --n-steps / --r-midpoints / --k-iters overrides.
Schedule resolve_schedule(const RunConfig& config, const Target& target, double epsilon);

/// Entry point; `args` excludes the program name. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rmld::cli
