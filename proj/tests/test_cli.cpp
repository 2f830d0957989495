#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "gldp/cli.hpp"

namespace fs = std::filesystem;
using gldp::Json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gldp_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GLDP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Json read_json(const fs::path& p) { return Json::parse(slurp(p)); }

}  // namespace

TEST(Sha256, KnownVector) {
  EXPECT_EQ(gldp::sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Config, OverridesAndValidation) {
  Json c = gldp::default_config();
  gldp::apply_override(c, "model.beta=3.5");
  gldp::apply_override(c, "run.start=uniform:0.4");
  EXPECT_EQ(c["model"]["beta"].get<double>(), 3.5);
  EXPECT_EQ(c["run"]["start"].get<std::string>(), "uniform:0.4");
  EXPECT_THROW(gldp::apply_override(c, "model.gamma=1"), gldp::ConfigError);
  EXPECT_THROW(gldp::apply_override(c, "model.beta=abc"), gldp::ConfigError);
  EXPECT_THROW(gldp::apply_override(c, "nonsense"), gldp::ConfigError);
  Json bad = gldp::default_config();
  bad["run"]["replicas"] = 0;
  EXPECT_THROW(gldp::parse_config(bad), gldp::ConfigError);
  bad = gldp::default_config();
  bad["graphon"]["N"] = 1;
  EXPECT_THROW(gldp::parse_config(bad), gldp::ConfigError);
  bad = gldp::default_config();
  bad["model"]["alpha"] = -1.0;
  EXPECT_THROW(gldp::parse_config(bad), gldp::ConfigError);
}

TEST(CmdSample, HeaderDeterminismAndManifest) {
  const auto a = scratch("sample_a"), b = scratch("sample_b");
  const std::string args = "--set graphon.family=constant graphon.j0=0.5 graphon.N=200 graphon.degree_exponent=1 run.seed=4";
  ASSERT_EQ(run_cli("sample " + args + " --out " + a.string()), 0);
  ASSERT_EQ(run_cli("sample " + args + " --out " + b.string()), 0);
  const std::string net = slurp(a / "network.txt");
  EXPECT_EQ(net.rfind("200 1 4 constant\n", 0), 0u);
  EXPECT_EQ(net, slurp(b / "network.txt"));
  const Json manifest = read_json(a / "manifest.json");
  bool found = false;
  for (const auto& art : manifest["artifacts"]) {
    EXPECT_EQ(art["sha256"].get<std::string>(), gldp::sha256_hex(slurp(a / art["file"].get<std::string>())));
    found = found || art["file"] == "network.txt";
  }
  EXPECT_TRUE(found);
  EXPECT_EQ(manifest["config"]["graphon"]["N"].get<int>(), 200);
  EXPECT_EQ(read_json(a / "report.json")["config"], manifest["config"]);
}

TEST(CmdSample, PowerLawExponentDomain) {
  const auto out = scratch("sample_pl");
  EXPECT_EQ(run_cli("sample --set graphon.family=power-law graphon.power_beta=1.2 --out " + out.string()), 2);
  EXPECT_EQ(run_cli("sample --set graphon.family=power-law graphon.power_beta=0.3 graphon.N=300 --out " + out.string()), 0);
}

TEST(CmdCli, UsageAndConfigErrors) {
  const auto out = scratch("errors");
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("sample --set graphon.nodes=3 --out " + out.string()), 2);
  EXPECT_EQ(run_cli("sample --config /nonexistent/file.json --out " + out.string()), 2);
  EXPECT_EQ(run_cli("compare --set run.replicas=0 --out " + out.string()), 2);
  EXPECT_EQ(run_cli("action --set run.end=bump:1,2 --out " + out.string()), 2);
  EXPECT_EQ(run_cli("action --set run.end=uniform:1.5 --out " + out.string()), 2);
}

TEST(CmdCli, ConfigFileIsMerged) {
  const auto dir = scratch("config_file");
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << R"({"grid": {"M": 8, "T": 0.5, "dt": 0.01}, "run": {"snapshots": 6}})";
  ASSERT_EQ(run_cli("meanfield --config " + (dir / "c.json").string() + " --out " + (dir / "o").string()), 0);
  const Json rep = read_json(dir / "o" / "report.json");
  EXPECT_EQ(rep["config"]["grid"]["M"].get<int>(), 8);
  EXPECT_LT(rep["max_normalization_drift"].get<double>(), 1e-12);
  std::ofstream(dir / "bad.json") << R"({"grid": {"MM": 8}})";
  EXPECT_EQ(run_cli("meanfield --config " + (dir / "bad.json").string() + " --out " + (dir / "o2").string()), 2);
}

TEST(CmdSimulate, DeterministicWithBalancedFlux) {
  const auto a = scratch("sim_a"), b = scratch("sim_b");
  const std::string args = "--set graphon.N=300 grid.T=1 run.replicas=2 run.snapshots=5 grid.M=8";
  ASSERT_EQ(run_cli("simulate " + args + " --out " + a.string()), 0);
  ASSERT_EQ(run_cli("simulate " + args + " --threads 2 --out " + b.string()), 0);
  // Data artifacts are byte-identical; report.json records run.threads and may differ.
  const Json arts_a = read_json(a / "manifest.json")["artifacts"], arts_b = read_json(b / "manifest.json")["artifacts"];
  ASSERT_EQ(arts_a.size(), arts_b.size());
  for (std::size_t k = 0; k < arts_a.size(); ++k) {
    if (arts_a[k]["file"] != "report.json") {
      EXPECT_EQ(arts_a[k], arts_b[k]);
    }
  }
  EXPECT_EQ(read_json(a / "report.json")["max_psi_defect"].get<int>(), 0);
  EXPECT_TRUE(fs::exists(a / "trajectory_001.jsonl"));
  EXPECT_EQ(slurp(a / "flux_000.csv").rfind("channel,bin,t_lo,t_hi,mass\n", 0), 0u);
}

TEST(CmdRate, MeanfieldIsInTheZeroSet) {
  const auto out = scratch("rate");
  ASSERT_EQ(run_cli("rate --set grid.M=64 grid.T=1 grid.dt=0.0005 --out " + out.string()), 0);
  const Json r = read_json(out / "rates.json");
  for (const auto& rec : r["rates"]) {
    EXPECT_TRUE(rec.contains("grid") && rec["grid"].contains("M") && rec["grid"].contains("dt"));
    if (rec["name"] != "rate_I") {
      EXPECT_LT(rec["value"].get<double>(), 1e-4) << rec["name"];
    }
  }
}

TEST(CmdAction, EquilibriumToEquilibriumHasZeroAction) {
  const auto out = scratch("action_eq");
  ASSERT_EQ(run_cli("action --set grid.M=16 grid.K=40 grid.T=1 run.end=equilibrium --out " + out.string()), 0);
  const Json d = read_json(out / "diagnostics.json");
  EXPECT_NEAR(d["action"].get<double>(), 0.0, 1e-12);
  EXPECT_TRUE(d["formula_discrepancies"].empty());
}

TEST(CmdAction, EquilibriumToBumpPassesDiagnostics) {
  const auto out = scratch("action_bump");
  ASSERT_EQ(run_cli("action --set grid.M=16 grid.K=60 grid.T=2 --out " + out.string()), 0);
  const Json d = read_json(out / "diagnostics.json");
  EXPECT_GT(d["action"].get<double>(), 0.0);
  EXPECT_LE(d["grad_norm"].get<double>(), 1e-6);
  EXPECT_LE(d["gradient_check"].get<double>(), 1e-5);
  for (const char* key : {"action", "grad_norm", "el_residual_max", "iters", "formula_discrepancies"})
    EXPECT_TRUE(d.contains(key)) << key;
  EXPECT_EQ(slurp(out / "path.csv").rfind("t,theta,s\n", 0), 0u);
  EXPECT_TRUE(fs::exists(out / "el_residual.csv"));
}

TEST(CmdAction, NonConvergenceExitsWithNumericalFailure) {
  const auto out = scratch("action_fail");
  EXPECT_EQ(run_cli("action --set grid.M=16 grid.K=40 grid.T=2 run.max_iters=1 --out " + out.string()), 3);
  EXPECT_TRUE(fs::exists(out / "diagnostics.json"));
}

TEST(CmdCompare, PureRecoveryDeviationFollowsBinomialScale) {
  // beta = 0: node j is infected at t with probability p_I(x^j) e^{-alpha t},
  // independently, so each bin mass fluctuates with sd <= sqrt(N / M / 4) / N.
  const auto out = scratch("compare_beta0");
  ASSERT_EQ(run_cli("compare --set model.beta=0 grid.T=2 grid.M=16 run.replicas=5 run.snapshots=11 "
                    "run.N_sweep=[500,2000] --out " + out.string()), 0);
  const Json r = read_json(out / "report.json");
  std::vector<double> med;
  for (const auto& p : r["sweep"]) {
    const double n = p["N"].get<double>();
    const double sd = std::sqrt(n / 16.0 / 4.0) / n;
    const double dev = p["median_deviation"].get<double>();
    EXPECT_LT(dev, 6.0 * sd) << "N = " << n;
    EXPECT_GT(dev, 0.5 * sd) << "N = " << n;
    EXPECT_EQ(p["max_psi_defect"].get<int>(), 0);
    med.push_back(dev);
  }
  // O(N^{-1/2}): quadrupling N should roughly halve the deviation.
  EXPECT_GT(med[0] / med[1], 1.3);
  EXPECT_LT(med[0] / med[1], 3.5);
}

TEST(CmdLdpCheck, PassesAndReportsSlopes) {
  const auto out = scratch("ldp");
  ASSERT_EQ(run_cli("ldp-check --out " + out.string()), 0);
  const Json r = read_json(out / "ldp_check.json");
  EXPECT_TRUE(r["passed"].get<bool>());
  EXPECT_EQ(r["slopes"].size(), 4u);
  EXPECT_EQ(run_cli("ldp-check --set run.ldp_N=[10] --out " + out.string()), 3);
}
