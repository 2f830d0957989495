#pragma once

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "gldp/action_path.hpp"
#include "gldp/compare.hpp"
#include "gldp/config.hpp"
#include "gldp/graphon.hpp"
#include "gldp/meanfield.hpp"
#include "gldp/rate_function.hpp"
#include "gldp/simulator.hpp"

// Link against OpenSSL::Crypto when including this header (manifest hashes).

namespace gldp {

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

/// Collects artifacts in memory and writes them, plus manifest.json, at the end.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {}

  void add(const std::string& name, std::string content) {
    files_.emplace_back(name, std::move(content));
  }
  void add_json(const std::string& name, const Json& j) { add(name, j.dump(2) + "\n"); }

  /// Writes every artifact and the manifest; returns the manifest.
  Json commit(const std::string& command, const Json& config) const {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw ConfigError("--out " + root_.string() + ": " + ec.message());
    Json artifacts = Json::array();
    for (const auto& [name, content] : files_) {
      std::ofstream out(root_ / name, std::ios::binary);
      if (!out) throw ConfigError("--out " + root_.string() + ": cannot write " + name);
      out << content;
      artifacts.push_back({{"file", name}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
    }
    Json manifest = {{"command", command}, {"artifacts", artifacts}, {"config", config}};
    std::ofstream m(root_ / "manifest.json");
    if (!m) throw ConfigError("--out " + root_.string() + ": cannot write manifest.json");
    m << manifest.dump(2) << "\n";
    return manifest;
  }

  const std::vector<std::pair<std::string, std::string>>& files() const { return files_; }

 private:
  std::filesystem::path root_;
  std::vector<std::pair<std::string, std::string>> files_;
};

/// Result of one subcommand. `failed` marks a numerical failure (exit code 3)
/// reported after the artifacts are written.
struct CommandStatus {
  Json summary;
  bool failed = false;
  std::string message;
};

inline Json rate_record(const std::string& name, const Cost& c, std::size_t m, double dt, double tol) {
  Json v = c.finite() ? Json(c.value()) : Json("inf");
  return {{"name", name}, {"value", v}, {"grid", {{"M", m}, {"dt", dt}}}, {"tolerance", tol}};
}

inline CommandStatus cmd_sample(const ExperimentConfig& cfg, OutputDir& out) {
  const GraphonSpec spec = cfg.graphon(cfg.N);
  const Network net = sample_network(spec, cfg.N, cfg.phi(cfg.N), cfg.seed);
  std::ostringstream os;
  write_network(os, net);
  out.add("network.txt", os.str());
  const auto audit = audit_kernel(spec);
  const auto eta = eta_diagnostic(net, spec);
  CommandStatus st;
  st.summary = {{"command", "sample"},
                {"N", net.size()},
                {"phi_N", net.phi()},
                {"edges", net.edges().size()},
                {"max_degree", net.max_degree()},
                {"mean_eta", eta.mean_eta},
                {"kernel_within_bound", audit.within_bound},
                {"kernel_lipschitz_ok", audit.lipschitz_ok},
                {"config", cfg.resolved}};
  out.add_json("report.json", st.summary);
  return st;
}

inline CommandStatus cmd_simulate(const ExperimentConfig& cfg, OutputDir& out) {
  const GraphonSpec spec = cfg.graphon(cfg.N);
  const SisRates rates(cfg.sis, spec.bound);
  const auto p_infected = init_profile(cfg.init);
  const SpatialBins bins{cfg.M, 0.0, spec.family == GraphonFamily::kPowerLaw ? 1.0 : kTwoPi};
  std::vector<double> edges(cfg.snapshots);
  for (std::size_t k = 0; k < cfg.snapshots; ++k)
    edges[k] = cfg.T * static_cast<double>(k) / static_cast<double>(cfg.snapshots - 1);

  auto trajs = run_replicas<TrajectoryRecord>(cfg.replicas, cfg.threads, cfg.seed,
                                              [&](std::size_t, std::mt19937_64& rng) {
    const Network net = sample_network(spec, cfg.N, cfg.phi(cfg.N), rng());
    const auto init = bernoulli_init(net, p_infected, rng);
    return simulate(net, rates, init, cfg.T, rng);
  });

  Json reps = Json::array();
  std::int64_t worst_psi = 0;
  for (std::size_t r = 0; r < trajs.size(); ++r) {
    const auto& tr = trajs[r];
    std::ostringstream name;
    name << std::setw(3) << std::setfill('0') << r;
    std::ostringstream traj_os, flux_os, occ_os;
    write_trajectory_jsonl(traj_os, tr);
    write_flux_csv(flux_os, extract_flux(tr), tr.states, bins, edges);
    write_occupation_csv(occ_os, occupation_series(tr, edges, bins), tr.states);
    out.add("trajectory_" + name.str() + ".jsonl", traj_os.str());
    out.add("flux_" + name.str() + ".csv", flux_os.str());
    out.add("occupation_" + name.str() + ".csv", occ_os.str());
    const std::int64_t psi = psi_identity_defect(tr, cfg.T, bins);
    worst_psi = std::max(worst_psi, psi);
    reps.push_back({{"replica", r}, {"events", tr.events.size()}, {"psi_defect", psi}});
  }
  CommandStatus st;
  st.summary = {{"command", "simulate"}, {"replicas", reps}, {"max_psi_defect", worst_psi},
                {"config", cfg.resolved}};
  out.add_json("report.json", st.summary);
  if (worst_psi != 0) {
    st.failed = true;
    st.message = "flux-occupation balance violated";
  }
  return st;
}

inline CommandStatus cmd_meanfield(const ExperimentConfig& cfg, OutputDir& out) {
  const SpatialGrid grid = SpatialGrid::circle(cfg.M);
  const EvolveResult res = config_meanfield(cfg, cfg.M);
  const StateSpace states = StateSpace::sis();
  std::ostringstream dens, flux;
  // Rows at the snapshot cadence keep files small; the solver step is dt.
  const std::size_t stride = std::max<std::size_t>(1, res.density.steps / (cfg.snapshots - 1));
  write_density_csv(dens, res.density, grid, states, stride);
  write_limit_flux_csv(flux, res.flux, grid, states, stride);
  out.add("density.csv", dens.str());
  out.add("limit_flux.csv", flux.str());
  CommandStatus st;
  st.summary = {{"command", "meanfield"},
                {"max_normalization_drift", res.max_normalization_drift},
                {"min_density", res.min_density},
                {"flux_balance_defect", flux_balance_defect(res)},
                {"config", cfg.resolved}};
  out.add_json("report.json", st.summary);
  return st;
}

inline CommandStatus cmd_compare(const ExperimentConfig& cfg, OutputDir& out) {
  const CompareResult res = compare_sweep(cfg, cfg.N_sweep);
  std::ostringstream csv;
  csv.precision(17);
  csv << "N,replica,deviation\n";
  Json points = Json::array();
  for (const auto& p : res.points) {
    for (std::size_t r = 0; r < p.deviations.size(); ++r) csv << p.N << ',' << r << ',' << p.deviations[r] << '\n';
    points.push_back({{"N", p.N}, {"phi_N", p.phi}, {"median_deviation", p.median_deviation},
                      {"deviations", p.deviations}, {"max_psi_defect", p.max_psi_defect}});
  }
  out.add("deviations.csv", csv.str());
  CommandStatus st;
  st.summary = {{"command", "compare"}, {"sweep", points}, {"meanfield_drift", res.meanfield_drift},
                {"units", "occupation mass per bin (count / N)"}, {"config", cfg.resolved}};
  out.add_json("report.json", st.summary);
  return st;
}

/// Rate functions on the mean-field solution: rate_G on its fluxes and
/// sis_action on its susceptible path, both zero in the limit of fine grids.
inline CommandStatus cmd_rate(const ExperimentConfig& cfg, OutputDir& out) {
  const SpatialGrid grid = SpatialGrid::circle(cfg.M);
  const KernelOperator kernel(grid, cfg.circle_kernel());
  const EvolveResult res = config_meanfield(cfg, cfg.M);
  std::vector<std::vector<double>> nu0(2);
  for (State a = 0; a < 2; ++a) {
    auto sl = res.density.slice(0, a);
    nu0[a].assign(sl.begin(), sl.end());
  }
  const Cost g = rate_G(res.flux, nu0, grid, kernel, SisRates(cfg.sis));
  const Cost h = sis_action(res.density, cfg.sis, kernel, grid);
  CommandStatus st;
  st.summary = {{"command", "rate"},
                {"rates", Json::array({rate_record("rate_G", g, cfg.M, cfg.dt, 1e-4),
                                       rate_record("sis_action", h, cfg.M, cfg.dt, 1e-4),
                                       rate_record("rate_I", Cost(rate_I(res.flux, grid)), cfg.M, cfg.dt, 0.0)})},
                {"config", cfg.resolved}};
  out.add_json("rates.json", st.summary);
  return st;
}

inline CommandStatus cmd_action(const ExperimentConfig& cfg, OutputDir& out) {
  const SpatialGrid grid = SpatialGrid::circle(cfg.M);
  const KernelOperator kernel(grid, cfg.circle_kernel());
  std::vector<double> guess(cfg.M, 0.5);
  const std::vector<double> eq = sis_equilibrium(grid, kernel, cfg.sis, guess);
  PathProblem problem;
  problem.start = endpoint_preset(cfg.start, grid, eq);
  problem.end = endpoint_preset(cfg.end, grid, eq);
  problem.horizon = cfg.T;
  problem.steps = cfg.K;

  MinimizeOptions opts;
  opts.tol_grad = cfg.tol_grad;
  opts.max_iters = cfg.max_iters;
  opts.seed = cfg.seed;
  opts.extra_starts = cfg.extra_starts;
  const MinimizeResult res = minimize_action(problem, cfg.sis, kernel, opts);

  const ActionObjective obj(problem, cfg.sis, kernel);
  const double grad_check = gradient_check(obj, gradient_check_point(obj), 50, cfg.seed);
  const ElResidual el = el_residual(res.path, problem.dt(), cfg.sis, kernel);

  std::ostringstream path_os, el_os;
  write_path_csv(path_os, res.path, problem.dt(), grid);
  el_os.precision(17);
  el_os << "t,theta,value\n";
  for (std::size_t n = 1; n < cfg.K; ++n)
    for (std::size_t i = 0; i < cfg.M; ++i)
      el_os << problem.dt() * static_cast<double>(n) << ',' << grid.nodes[i] << ',' << el.at(n, i) << '\n';
  out.add("path.csv", path_os.str());
  out.add("el_residual.csv", el_os.str());

  CommandStatus st;
  st.summary = {{"action", res.action},
                {"grad_norm", res.grad_norm},
                {"el_residual_max", res.el_residual_max},
                {"iters", res.iterations},
                {"converged", res.converged},
                {"min_d2L", res.min_d2L},
                {"gradient_check", grad_check},
                {"distinct_minima", res.distinct_minima},
                {"formula_discrepancies", res.formula_discrepancies},
                {"warning", res.warning},
                {"config", cfg.resolved}};
  out.add_json("diagnostics.json", st.summary);
  if (!res.converged) {
    st.failed = true;
    st.message = "action minimization did not converge: " + res.warning;
  }
  return st;
}

/// Exact Poisson tail slopes N^{-1} log P(count / N >= a) against -ell(a).
inline CommandStatus cmd_ldp_check(const ExperimentConfig& cfg, OutputDir& out) {
  const double limit = -ell(cfg.ldp_a);
  Json rows = Json::array();
  double last_gap = 0.0;
  for (std::size_t n : cfg.ldp_N) {
    const double slope = poisson_ldp_slope(n, cfg.ldp_a);
    last_gap = std::abs(slope - limit);
    rows.push_back({{"N", n}, {"slope", slope}, {"gap", last_gap}});
  }
  CommandStatus st;
  st.summary = {{"command", "ldp-check"}, {"a", cfg.ldp_a}, {"limit", limit}, {"slopes", rows},
                {"tolerance", cfg.ldp_tolerance}, {"passed", last_gap <= cfg.ldp_tolerance},
                {"config", cfg.resolved}};
  out.add_json("ldp_check.json", st.summary);
  if (last_gap > cfg.ldp_tolerance) {
    st.failed = true;
    st.message = "Poisson tail slope outside tolerance at the largest N";
  }
  return st;
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"sample", "simulate", "meanfield", "compare",
                                              "rate", "action", "ldp-check"};
  return names;
}

/// Runs one subcommand and writes its artifacts and manifest under `out_dir`.
inline CommandStatus run_command(const std::string& name, const ExperimentConfig& cfg,
                                 const std::filesystem::path& out_dir) {
  OutputDir out(out_dir);
  CommandStatus st;
  if (name == "sample") st = cmd_sample(cfg, out);
  else if (name == "simulate") st = cmd_simulate(cfg, out);
  else if (name == "meanfield") st = cmd_meanfield(cfg, out);
  else if (name == "compare") st = cmd_compare(cfg, out);
  else if (name == "rate") st = cmd_rate(cfg, out);
  else if (name == "action") st = cmd_action(cfg, out);
  else if (name == "ldp-check") st = cmd_ldp_check(cfg, out);
  else throw ConfigError("unknown subcommand '" + name + "'");
  out.commit(name, cfg.resolved);
  return st;
}

}  // namespace gldp
