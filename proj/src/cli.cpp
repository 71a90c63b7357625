#include "rmld/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace rmld::cli {

namespace {

using Json = nlohmann::ordered_json;

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Json config_json(const RunConfig& c) {
  Json j;
  j["target"] = c.target;
  if (c.target == "quadratic") {
    j["dim"] = c.dim;
    j["kappa"] = c.kappa;
    j["diag"] = c.diag;
    j["center"] = c.center;
  } else {
    j["dataset"] = c.dataset;
    j["lambda"] = c.lambda;
    j["scale_features"] = c.scale_features;
    j["synthetic_n"] = c.synthetic_n;
    j["synthetic_d"] = c.synthetic_d;
  }
  j["method"] = c.method;
  j["epsilon"] = c.epsilon;
  j["h"] = c.h;
  j["n_steps"] = c.n_steps;
  j["r_midpoints"] = c.r_midpoints;
  j["k_iters"] = c.k_iters;
  j["C"] = c.C;
  j["c_R"] = c.c_R;
  j["c_K"] = c.c_K;
  j["seed"] = c.seed;
  j["chains"] = c.chains;
  return j;
}

// Writes to the configured output, or to `fallback` for "-".
class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) {
    if (path == "-") {
      stream_ = &fallback;
    } else {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw std::runtime_error("cannot open output file '" + path + "'");
      stream_ = &file_;
    }
  }
  std::ostream& operator*() { return *stream_; }
  void finish() {
    stream_->flush();
    if (!*stream_) throw std::runtime_error("failed writing output");
  }

 private:
  std::ofstream file_;
  std::ostream* stream_ = nullptr;
};

void write_metadata(std::ostream& os, const Json& meta) { os << "# " << meta.dump() << '\n'; }

Json schedule_json(const Schedule& s, bool parallel) {
  Json j;
  j["h"] = s.h;
  if (parallel) {
    j["R"] = s.R;
    j["K"] = s.K;
  }
  j["N"] = s.N;
  return j;
}

int cmd_sample(const RunConfig& cfg, std::ostream& out) {
  const Target target = make_target(cfg);
  if (cfg.epsilon.size() != 1) throw Error(ErrorKind::configuration, "sample takes a single --epsilon");
  const Schedule sched = resolve_schedule(cfg, target, cfg.epsilon.front());
  const Method method = parse_method(cfg.method);
  if (cfg.chains < 1) throw Error(ErrorKind::configuration, "--chains must be positive");

  const auto runs = run_chains(method, target, sched, cfg.seed, cfg.chains);
  std::uint64_t evaluations = 0;
  for (const auto& r : runs) evaluations += r.gradient_evaluations;

  Output o(cfg.out, out);
  Json meta;
  meta["version"] = kVersion;
  meta["command"] = "sample";
  meta["method"] = cfg.method;
  meta["h"] = sched.h;
  meta["N"] = sched.N;
  meta["R"] = sched.R;
  meta["K"] = sched.K;
  meta["seed"] = cfg.seed;
  meta["chains"] = cfg.chains;
  meta["gradient_evaluations"] = evaluations;
  meta["gradient_evaluations_per_chain"] = runs.front().gradient_evaluations;
  meta["config"] = config_json(cfg);
  write_metadata(*o, meta);

  *o << "chain";
  for (Eigen::Index i = 0; i < target.dimension; ++i) *o << ",x" << (i + 1);
  *o << '\n';
  for (std::size_t c = 0; c < runs.size(); ++c) {
    *o << c;
    for (Eigen::Index i = 0; i < target.dimension; ++i) *o << ',' << num(runs[c].state.x[i]);
    *o << '\n';
  }
  o.finish();
  return kExitOk;
}

int cmd_convergence(const RunConfig& cfg, std::ostream& out) {
  const Target target = make_target(cfg);
  if (!target.quadratic)
    throw Error(ErrorKind::unsupported_target, "convergence needs a quadratic target (the target law must be Gaussian)");
  if (cfg.chains < 2) throw Error(ErrorKind::configuration, "convergence needs --chains >= 2");

  Output o(cfg.out, out);
  Json meta;
  meta["version"] = kVersion;
  meta["command"] = "convergence";
  meta["config"] = config_json(cfg);
  write_metadata(*o, meta);
  *o << "epsilon,h,N,w2,w2_normalized,ci_low,ci_high\n";
  for (double eps : cfg.epsilon) {
    const Schedule sched = resolve_schedule(cfg, target, eps);
    const StationaryStudy st = stationary_error_study(target, sched, cfg.chains, cfg.seed);
    *o << num(eps) << ',' << num(sched.h) << ',' << sched.N << ',' << num(st.w2.distance) << ','
       << num(st.w2.normalized) << ',' << num(st.ci_low) << ',' << num(st.ci_high) << '\n';
  }
  o.finish();
  return kExitOk;
}

int cmd_fig1(const RunConfig& cfg, std::ostream& out) {
  const Target target = make_target(cfg);
  CoupledExperimentConfig exp;
  exp.h_values = cfg.h.empty() ? std::vector<double>{0.025, 0.05, 0.1, 0.2} : cfg.h;
  exp.T = cfg.t_total;
  exp.chains = cfg.chains;
  exp.seed = cfg.seed;
  exp.reference_refinement = cfg.refinement;
  const CoupledErrorTable table = coupled_error_experiment(target, exp);

  Output o(cfg.out, out);
  Json meta;
  meta["version"] = kVersion;
  meta["command"] = "fig1";
  meta["t_total"] = cfg.t_total;
  meta["refinement"] = cfg.refinement;
  meta["reference_step"] = table.reference_step;
  meta["config"] = config_json(cfg);
  write_metadata(*o, meta);
  *o << "h,method,mean_error\n";
  for (const auto& row : table.rows) *o << num(row.h) << ',' << to_string(row.method) << ',' << num(row.mean_error) << '\n';
  for (const auto& [method, slope] : table.slopes) *o << "# slope," << to_string(method) << ',' << num(slope) << '\n';
  o.finish();
  return kExitOk;
}

int cmd_schedule(const RunConfig& cfg, std::ostream& out) {
  if (cfg.epsilon.size() != 1) throw Error(ErrorKind::configuration, "schedule takes a single --epsilon");
  const bool parallel = cfg.parallel || cfg.method == "rmm_parallel";
  const Schedule s = parallel ? schedule_parallel(cfg.epsilon.front(), cfg.kappa, cfg.C, cfg.L, {cfg.c_R, cfg.c_K})
                              : schedule(cfg.epsilon.front(), cfg.kappa, cfg.C, cfg.L);
  Output o(cfg.out, out);
  *o << schedule_json(s, parallel).dump() << '\n';
  o.finish();
  return kExitOk;
}

const std::set<std::string> kFlagKeys{"scale-features", "parallel"};

bool mentions(const std::vector<std::string>& args, const std::string& key) {
  const std::string flag = "--" + key;
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

std::string find_config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return {};
}

}  // namespace

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::configuration, "cannot open config file '" + path + "'");
  std::map<std::string, std::string> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::configuration, path + ":" + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    entries[key] = trim(line.substr(eq + 1));
  }
  return entries;
}

Target make_target(const RunConfig& c) {
  if (c.target == "quadratic") {
    if (!c.diag.empty()) {
      const Vector center = c.center.empty() ? Vector::Zero(static_cast<Eigen::Index>(c.diag.size())) : to_vector(c.center);
      return quadratic_target<double>(to_vector(c.diag), center);
    }
    Target t = geometric_quadratic(c.dim, c.kappa);
    if (!c.center.empty()) return quadratic_target<double>(t.quadratic->diag, to_vector(c.center));
    return t;
  }
  if (c.target == "logistic") {
    Dataset data;
    if (!c.dataset.empty())
      data = load_libsvm(c.dataset, {c.scale_features});
    else if (c.synthetic_n > 0 && c.synthetic_d > 0)
      data = synthetic_logistic_dataset(c.synthetic_n, c.synthetic_d, c.seed);
    else
      throw Error(ErrorKind::configuration, "logistic target needs --dataset (or --synthetic-n and --synthetic-d)");
    return logistic_target(data, c.lambda);
  }
  throw Error(ErrorKind::configuration, "unknown target '" + c.target + "'");
}

Schedule resolve_schedule(const RunConfig& c, const Target& target, double epsilon) {
  const bool parallel = c.parallel || c.method == "rmm_parallel";
  Schedule s = parallel ? schedule_parallel(epsilon, target.condition_number(), c.C, target.smoothness, {c.c_R, c.c_K})
                        : schedule(epsilon, target.condition_number(), c.C, target.smoothness);
  if (c.h.size() > 1) throw Error(ErrorKind::configuration, "this command takes a single --h");
  if (!c.h.empty()) {
    s.h = c.h.front();
    s.N = static_cast<std::uint64_t>(
        std::ceil(2.0 * target.condition_number() / s.h * std::log(20.0 / (epsilon * epsilon))));
  }
  if (c.n_steps >= 0) s.N = static_cast<std::uint64_t>(c.n_steps);
  if (c.r_midpoints > 0) s.R = c.r_midpoints;
  if (c.k_iters > 0) s.K = c.k_iters;
  if (c.method != "lmc") validate(s, target.smoothness);
  return s;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  std::string config_path;

  CLI::App app{"Randomized midpoint sampling for underdamped Langevin dynamics", "rmld_cli"};
  app.require_subcommand(1);
  app.set_help_flag("--help", "Print this help message and exit");  // frees -h for --h
  app.set_version_flag("--version", std::string(kVersion));

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value file; command-line flags take precedence");
    sub->add_option("--target", cfg.target, "quadratic | logistic")->check(CLI::IsMember({"quadratic", "logistic"}));
    sub->add_option("--dim", cfg.dim, "quadratic dimension (geometric spectrum 1..kappa)");
    sub->add_option("--kappa", cfg.kappa, "quadratic condition number");
    sub->add_option("--diag", cfg.diag, "explicit quadratic diagonal")->delimiter(',');
    sub->add_option("--center", cfg.center, "quadratic center")->delimiter(',');
    sub->add_option("--dataset", cfg.dataset, "LIBSVM file for the logistic target");
    sub->add_option("--lambda", cfg.lambda, "ridge parameter of the logistic target");
    sub->add_flag("--scale-features", cfg.scale_features, "scale dataset columns to [-1, 1]");
    sub->add_option("--synthetic-n", cfg.synthetic_n, "synthetic logistic dataset: samples");
    sub->add_option("--synthetic-d", cfg.synthetic_d, "synthetic logistic dataset: features");
    sub->add_option("--seed", cfg.seed, "random seed")->required();
    sub->add_option("--chains", cfg.chains, "independent chains");
    sub->add_option("--out", cfg.out, "output path, '-' for stdout");
  };
  auto add_schedule = [&](CLI::App* sub) {
    sub->add_option("--method", cfg.method, "rmm | rmm_parallel | euler_uld | exp_euler_uld | lmc")
        ->check(CLI::IsMember({"rmm", "rmm_parallel", "euler_uld", "exp_euler_uld", "lmc"}));
    sub->add_option("--epsilon", cfg.epsilon, "target accuracy in units of sqrt(d/m)")->delimiter(',');
    sub->add_option("--h", cfg.h, "step size(s)")->delimiter(',');
    sub->add_option("--n-steps", cfg.n_steps, "iteration count override");
    sub->add_option("--r-midpoints", cfg.r_midpoints, "midpoints per step (rmm_parallel)");
    sub->add_option("--k-iters", cfg.k_iters, "fixed-point sweeps + 1 (rmm_parallel)");
    sub->add_option("--C", cfg.C, "step-size constant");
    sub->add_option("--c-r", cfg.c_R, "midpoint-count constant");
    sub->add_option("--c-k", cfg.c_K, "sweep-count constant");
  };

  auto* sample = app.add_subcommand("sample", "run chains and write final positions");
  add_common(sample);
  add_schedule(sample);
  auto* convergence = app.add_subcommand("convergence", "W2 error of the randomized midpoint chain over an epsilon grid");
  add_common(convergence);
  add_schedule(convergence);
  auto* fig1 = app.add_subcommand("fig1", "coupled strong error versus step size");
  add_common(fig1);
  fig1->add_option("--h", cfg.h, "step sizes")->delimiter(',');
  fig1->add_option("--t-total", cfg.t_total, "integration time");
  fig1->add_option("--refinement", cfg.refinement, "reference refinement factor (>= 32)");
  auto* sched = app.add_subcommand("schedule", "print the step-size schedule as JSON");
  sched->add_option("--config", config_path, "key = value file");
  sched->add_option("--epsilon", cfg.epsilon, "target accuracy")->delimiter(',');
  sched->add_option("--kappa", cfg.kappa, "condition number");
  sched->add_option("--L", cfg.L, "smoothness constant");
  sched->add_option("--C", cfg.C, "step-size constant");
  sched->add_option("--c-r", cfg.c_R, "midpoint-count constant");
  sched->add_option("--c-k", cfg.c_K, "sweep-count constant");
  sched->add_option("--method", cfg.method, "rmm | rmm_parallel");
  sched->add_flag("--parallel", cfg.parallel, "parallel schedule (h, R, K, N)");
  sched->add_option("--out", cfg.out, "output path, '-' for stdout");

  try {
    std::vector<std::string> args = raw_args;
    if (const std::string path = find_config_path(raw_args); !path.empty() && !args.empty()) {
      std::vector<std::string> injected;
      CLI::App* sub = app.get_subcommand_no_throw(args.front());
      for (const auto& [key, value] : read_config_file(path)) {
        if (key == "config" || mentions(raw_args, key)) continue;
        // Keys for other subcommands are ignored.
        if (sub == nullptr || sub->get_option_no_throw("--" + key) == nullptr) continue;
        if (kFlagKeys.count(key)) {
          if (value == "true" || value == "1" || value == "yes") injected.push_back("--" + key);
        } else {
          injected.push_back("--" + key);
          injected.push_back(value);
        }
      }
      args.insert(args.begin() + 1, injected.begin(), injected.end());
    }
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const Error& e) {
    err << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (sample->parsed()) return cmd_sample(cfg, out);
    if (convergence->parsed()) return cmd_convergence(cfg, out);
    if (fig1->parsed()) return cmd_fig1(cfg, out);
    return cmd_schedule(cfg, out);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace rmld::cli
