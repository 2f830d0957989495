#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gldp/config.hpp"
#include "gldp/graphon.hpp"
#include "gldp/meanfield.hpp"
#include "gldp/simulator.hpp"

namespace gldp {

/// Periodic linear interpolation of grid values f_i = f(2 pi i / M) at x.
inline double interpolate_circle(std::span<const double> f, double x) {
  const std::size_t m = f.size();
  double r = x / kTwoPi * static_cast<double>(m);
  r -= std::floor(r / static_cast<double>(m)) * static_cast<double>(m);
  const auto i0 = static_cast<std::size_t>(std::floor(r)) % m;
  const double frac = r - std::floor(r);
  return (1.0 - frac) * f[i0] + frac * f[(i0 + 1) % m];
}

/// Mean-field prediction of binned occupation masses for a given node set:
/// mass(alpha, bin) = N^{-1} sum_{j in bin} nu(alpha, x^j).
inline std::vector<std::vector<double>> meanfield_bin_masses(const DensityField& density,
                                                             std::size_t n,
                                                             std::span<const double> positions,
                                                             const SpatialBins& bins) {
  std::vector<std::vector<double>> mass(density.num_states, std::vector<double>(bins.count, 0.0));
  const double unit = 1.0 / static_cast<double>(positions.size());
  for (State a = 0; a < density.num_states; ++a) {
    auto sl = density.slice(n, a);
    for (double x : positions) mass[a][bins.index(x)] += unit * interpolate_circle(sl, x);
  }
  return mass;
}

/// max over snapshots, states and bins of |empirical mass - mean-field mass|.
inline double occupation_deviation(const TrajectoryRecord& traj, const DensityField& density,
                                   std::span<const std::size_t> snapshot_steps,
                                   const SpatialBins& bins) {
  std::vector<double> times;
  for (std::size_t n : snapshot_steps) times.push_back(std::min(density.time(n), traj.horizon));
  const auto series = occupation_series(traj, times, bins);
  double worst = 0.0;
  for (std::size_t k = 0; k < snapshot_steps.size(); ++k) {
    const auto mf = meanfield_bin_masses(density, snapshot_steps[k], traj.positions, bins);
    for (State a = 0; a < density.num_states; ++a)
      for (std::size_t b = 0; b < bins.count; ++b)
        worst = std::max(worst, std::abs(series[k].mass(a, b) - mf[a][b]));
  }
  return worst;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

struct SweepPoint {
  std::size_t N = 0;
  double phi = 0.0;
  std::vector<double> deviations;
  double median_deviation = 0.0;
  std::int64_t max_psi_defect = 0;
};

struct CompareResult {
  std::vector<SweepPoint> points;
  double meanfield_drift = 0.0;
};

/// Mean-field SIS solution for the config's kernel and initial profile on an
/// M-point circle grid.
inline EvolveResult config_meanfield(const ExperimentConfig& cfg, std::size_t m) {
  const SpatialGrid grid = SpatialGrid::circle(m);
  const KernelOperator kernel(grid, cfg.circle_kernel());
  const auto p_infected = init_profile(cfg.init);
  std::vector<double> s0(m);
  for (std::size_t i = 0; i < m; ++i) s0[i] = 1.0 - p_infected(grid.nodes[i]);
  const SisRates rates(cfg.sis);
  return evolve(grid, kernel, rates, sis_density(s0), cfg.T, cfg.dt);
}

/// Snapshot indices on the mean-field time grid, `count` equally spaced over [0, T].
inline std::vector<std::size_t> snapshot_steps(const DensityField& density, std::size_t count) {
  std::vector<std::size_t> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double t = density.horizon() * static_cast<double>(k) / static_cast<double>(count - 1);
    const double r = t / density.dt;
    const auto n = static_cast<std::size_t>(std::llround(r));
    if (std::abs(r - static_cast<double>(n)) > 1e-6)
      throw ConfigError("run.snapshots: snapshot times must fall on the grid.dt time grid");
    out[k] = n;
  }
  return out;
}

/// For each N: R replicas of (sample network, Bernoulli initial state, simulate
/// to T), each compared with the mean-field solution on `cfg.M` bins.
inline CompareResult compare_sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& sizes) {
  if (cfg.replicas == 0) throw ConfigError("run.replicas: must be positive");
  const EvolveResult mf = config_meanfield(cfg, cfg.meanfield_M);
  const auto steps = snapshot_steps(mf.density, cfg.snapshots);
  const SpatialBins bins{cfg.M, 0.0, kTwoPi};
  const auto p_infected = init_profile(cfg.init);
  CompareResult out;
  out.meanfield_drift = mf.max_normalization_drift;
  for (std::size_t n : sizes) {
    const GraphonSpec spec = cfg.graphon(n);
    const double phi = cfg.phi(n);
    const SisRates rates(cfg.sis, spec.bound);
    struct Rep {
      double deviation = 0.0;
      std::int64_t psi = 0;
    };
    const std::uint64_t sweep_seed = cfg.seed * 1000003ULL + n;
    auto reps = run_replicas<Rep>(cfg.replicas, cfg.threads, sweep_seed,
                                  [&](std::size_t, std::mt19937_64& rng) {
      const Network net = sample_network(spec, n, phi, rng());
      const auto init = bernoulli_init(net, p_infected, rng);
      const TrajectoryRecord traj = simulate(net, rates, init, cfg.T, rng);
      return Rep{occupation_deviation(traj, mf.density, steps, bins),
                 psi_identity_defect(traj, cfg.T, bins)};
    });
    SweepPoint pt;
    pt.N = n;
    pt.phi = phi;
    for (const auto& r : reps) {
      pt.deviations.push_back(r.deviation);
      pt.max_psi_defect = std::max(pt.max_psi_defect, r.psi);
    }
    pt.median_deviation = median(pt.deviations);
    out.points.push_back(std::move(pt));
  }
  return out;
}

}  // namespace gldp
