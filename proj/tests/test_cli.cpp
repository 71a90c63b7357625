#include <doctest.h>

#include "rmld/cli.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace rmld;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

nlohmann::json metadata(const std::string& text) {
  const auto first = lines(text).at(0);
  REQUIRE(first.rfind("# ", 0) == 0);
  return nlohmann::json::parse(first.substr(2));
}

}  // namespace

TEST_CASE("schedule command") {
  auto r = run_cli({"schedule", "--epsilon", "0.5", "--kappa", "1", "--C", "1"});
  REQUIRE(r.code == 0);
  auto j = nlohmann::json::parse(r.out);
  CHECK(j["h"].get<double>() == 0.05);
  CHECK(j["N"].get<int>() == 176);
  CHECK_FALSE(j.contains("R"));

  r = run_cli({"schedule", "--epsilon", "0.5", "--kappa", "1", "--parallel"});
  REQUIRE(r.code == 0);
  j = nlohmann::json::parse(r.out);
  CHECK(j["R"].get<int>() == 2);
  CHECK(j["K"].get<int>() >= 2);

  r = run_cli({"schedule", "--epsilon", "1.5", "--kappa", "1"});
  CHECK(r.code == cli::kExitConfig);
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("sample with zero steps returns the start point") {
  const auto r = run_cli({"sample", "--diag", "1,2", "--center", "3,-1", "--n-steps", "0", "--seed", "4"});
  REQUIRE(r.code == 0);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1] == "chain,x1,x2");
  CHECK(rows[2] == "0,3,-1");
  const auto meta = metadata(r.out);
  CHECK(meta["N"] == 0);
  CHECK(meta["gradient_evaluations"] == 0);
  CHECK(meta["version"] == kVersion);
  CHECK(meta["config"]["diag"] == std::vector<double>{1, 2});
}

TEST_CASE("sample output is byte-identical across runs") {
  const std::vector<std::string> base{"sample", "--dim", "3", "--kappa", "5", "--chains", "4", "--seed", "17"};
  auto a = base, b = base;
  a.insert(a.end(), {"--out", "sample_a.csv"});
  b.insert(b.end(), {"--out", "sample_b.csv"});
  REQUIRE(run_cli(a).code == 0);
  REQUIRE(run_cli(b).code == 0);
  const std::string first = slurp("sample_a.csv");
  CHECK_FALSE(first.empty());
  CHECK(first == slurp("sample_b.csv"));
  CHECK(lines(first).size() == 2 + 4);

  auto c = base;
  c[c.size() - 1] = "18";
  CHECK(run_cli(c).out != run_cli(base).out);
}

TEST_CASE("sample metadata reports the schedule") {
  const auto r = run_cli({"sample", "--dim", "2", "--kappa", "10", "--epsilon", "0.5", "--seed", "1", "--chains", "2"});
  REQUIRE(r.code == 0);
  const auto meta = metadata(r.out);
  const double h = meta["h"];
  const auto N = meta["N"].get<std::uint64_t>();
  CHECK(N == static_cast<std::uint64_t>(std::ceil(2 * 10 / h * std::log(20 / 0.25))));
  CHECK(meta["gradient_evaluations_per_chain"].get<std::uint64_t>() == 2 * N);
  CHECK(meta["gradient_evaluations"].get<std::uint64_t>() == 4 * N);
  CHECK(meta["method"] == "rmm");
  CHECK(meta["seed"] == 1);
}

TEST_CASE("sample supports every method and the logistic target") {
  for (const char* m : {"rmm", "rmm_parallel", "euler_uld", "exp_euler_uld", "lmc"}) {
    CAPTURE(m);
    const auto r = run_cli({"sample", "--method", m, "--n-steps", "5", "--seed", "2", "--dim", "2"});
    CHECK(r.code == 0);
    CHECK(lines(r.out).size() == 3);
  }
  const auto r = run_cli({"sample", "--target", "logistic", "--synthetic-n", "30", "--synthetic-d", "3", "--n-steps",
                          "10", "--seed", "3"});
  CHECK(r.code == 0);
  CHECK(lines(r.out).at(1) == "chain,x1,x2,x3");
}

TEST_CASE("exit codes") {
  CHECK(run_cli({"sample", "--dim", "2"}).code == cli::kExitConfig);  // no seed
  CHECK(run_cli({"sample", "--method", "leapfrog", "--seed", "1"}).code == cli::kExitConfig);
  CHECK(run_cli({"sample", "--target", "logistic", "--seed", "1"}).code == cli::kExitConfig);
  CHECK(run_cli({"sample", "--target", "logistic", "--dataset", "/nonexistent.svm", "--seed", "1"}).code ==
        cli::kExitConfig);
  CHECK(run_cli({"sample", "--diag", "1,-1", "--seed", "1"}).code == cli::kExitConfig);
  CHECK(run_cli({"sample", "--h", "0.5", "--seed", "1"}).code == cli::kExitConfig);
  CHECK(run_cli({"sample", "--seed", "1", "--out", "/nonexistent-dir/out.csv"}).code == cli::kExitRuntime);
  CHECK(run_cli({"bogus"}).code == cli::kExitConfig);
  CHECK(run_cli({}).code == cli::kExitConfig);
  CHECK(run_cli({"sample", "--seed", "1", "--config", "/nonexistent.cfg"}).code == cli::kExitConfig);

  const auto v = run_cli({"--version"});
  CHECK(v.code == 0);
  CHECK(v.out.find(kVersion) != std::string::npos);
}

TEST_CASE("config file values yield to flags") {
  {
    std::ofstream cfg("test.cfg");
    cfg << "# sampler settings\n"
           "method = lmc\n"
           "n_steps = 3   # short\n"
           "chains = 2\n"
           "seed = 7\n"
           "t-total = 4\n"
           "\n";
  }
  auto r = run_cli({"sample", "--config", "test.cfg", "--chains", "3"});
  REQUIRE(r.code == 0);
  const auto meta = metadata(r.out);
  CHECK(meta["method"] == "lmc");
  CHECK(meta["N"] == 3);
  CHECK(meta["chains"] == 3);
  CHECK(meta["seed"] == 7);

  {
    std::ofstream cfg("broken.cfg");
    cfg << "method lmc\n";
  }
  r = run_cli({"sample", "--config", "broken.cfg", "--seed", "1"});
  CHECK(r.code == cli::kExitConfig);
  CHECK(r.err.find("broken.cfg:1") != std::string::npos);

  const auto entries = cli::read_config_file("test.cfg");
  CHECK(entries.at("n-steps") == "3");
  CHECK(entries.at("t-total") == "4");
}

TEST_CASE("convergence command") {
  const auto r = run_cli({"convergence", "--dim", "2", "--kappa", "2", "--epsilon", "0.5,0.25", "--chains", "200",
                          "--seed", "3"});
  REQUIRE(r.code == 0);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 4);
  CHECK(rows[1] == "epsilon,h,N,w2,w2_normalized,ci_low,ci_high");
  CHECK(rows[2].rfind("0.5,", 0) == 0);
  CHECK(rows[3].rfind("0.25,", 0) == 0);

  CHECK(run_cli({"convergence", "--target", "logistic", "--synthetic-n", "20", "--synthetic-d", "2", "--seed", "1",
                 "--chains", "200"})
            .code == cli::kExitConfig);
}

TEST_CASE("fig1 command") {
  const auto r =
      run_cli({"fig1", "--dim", "2", "--kappa", "4", "--h", "0.1,0.2", "--t-total", "1", "--chains", "2", "--seed", "5"});
  REQUIRE(r.code == 0);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 1 + 1 + 4 + 2);
  CHECK(rows[1] == "h,method,mean_error");
  CHECK(rows[2].rfind("0.10000000000000001,rmm,", 0) == 0);
  CHECK(rows[6].rfind("# slope,rmm,", 0) == 0);
  CHECK(rows[7].rfind("# slope,exp_euler_uld,", 0) == 0);
  CHECK(metadata(r.out)["reference_step"].get<double>() == doctest::Approx(0.1 / 32));

  CHECK(run_cli({"fig1", "--h", "0.1,0.15", "--t-total", "1", "--seed", "1"}).code == cli::kExitConfig);
  CHECK(run_cli({"fig1", "--refinement", "8", "--seed", "1"}).code == cli::kExitConfig);
}
