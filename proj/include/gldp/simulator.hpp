#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "gldp/common.hpp"
#include "gldp/core_model.hpp"
#include "gldp/network.hpp"

namespace gldp {

struct TransitionEvent {
  double t = 0.0;
  std::uint32_t node = 0;
  State from = 0;
  State to = 0;
};

struct TrajectoryRecord {
  std::vector<TransitionEvent> events;
  std::vector<State> initial_config;
  std::vector<double> positions;
  StateSpace states = StateSpace::sis();
  double horizon = 0.0;

  std::size_t size() const { return initial_config.size(); }
};

/// Independent RNG stream for replica `replica` of a run seeded by `seed`.
inline std::mt19937_64 replica_rng(std::uint64_t seed, std::uint64_t replica) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replica), static_cast<std::uint32_t>(replica >> 32)};
  return std::mt19937_64(seq);
}

namespace detail {

/// Binary tree of partial sums over nonnegative leaf weights. Parents are
/// recomputed from children on every update, so no rounding drift builds up.
class SumTree {
 public:
  explicit SumTree(std::size_t n) : leaves_(1) {
    while (leaves_ < n) leaves_ *= 2;
    tree_.assign(2 * leaves_, 0.0);
  }

  void set(std::size_t i, double w) {
    std::size_t p = i + leaves_;
    tree_[p] = w;
    for (p /= 2; p >= 1; p /= 2) tree_[p] = tree_[2 * p] + tree_[2 * p + 1];
  }

  double total() const { return tree_[1]; }
  double weight(std::size_t i) const { return tree_[i + leaves_]; }

  /// Leaf index whose cumulative interval contains u in [0, total()).
  std::size_t find(double u) const {
    std::size_t p = 1;
    while (p < leaves_) {
      const double left = tree_[2 * p];
      const double right = tree_[2 * p + 1];
      if ((u < left && left > 0.0) || right <= 0.0) {
        p = 2 * p;
      } else {
        u -= left;
        p = 2 * p + 1;
      }
    }
    return p - leaves_;
  }

 private:
  std::size_t leaves_;
  std::vector<double> tree_;
};

}  // namespace detail

/// Exact Doob-Gillespie simulation of the network jump process on [0, T].
///
/// Rates depend only on the current configuration, so an exponential clock
/// with the total rate followed by a node/channel draw is exact. Local fields
/// are kept as integer coupling sums per state and patched only for nodes
/// influenced by the flipped node.
inline TrajectoryRecord simulate(const Network& net, const RateFamily& rates,
                                 std::span<const State> init, double horizon,
                                 std::mt19937_64& rng) {
  const std::size_t n = net.size();
  const std::size_t ns = rates.states().size();
  if (init.size() != n) throw ConfigError("simulate: initial configuration length differs from N");
  if (!(horizon > 0.0)) throw ConfigError("simulate: horizon must be positive");
  for (State s : init)
    if (s >= ns) throw ConfigError("simulate: initial state out of range");

  TrajectoryRecord rec;
  rec.initial_config.assign(init.begin(), init.end());
  rec.positions = net.positions();
  rec.states = rates.states();
  rec.horizon = horizon;

  std::vector<State> config(init.begin(), init.end());
  std::vector<std::int64_t> counts(n * ns, 0);
  for (const Edge& e : net.edges()) counts[e.j * ns + config[e.k]] += e.weight;

  const double unit = net.field_unit();
  std::vector<double> field(ns);
  std::vector<double> channel(ns);
  auto load_field = [&](std::size_t j) {
    for (std::size_t b = 0; b < ns; ++b) field[b] = static_cast<double>(counts[j * ns + b]) * unit;
  };

  detail::SumTree tree(n);
  double t = 0.0;
  auto refresh = [&](std::size_t j) {
    load_field(j);
    const double r = rates.total_out(net.position(j), config[j], field);
    if (!std::isfinite(r) || r < 0.0) {
      std::ostringstream msg;
      msg << "simulate: invalid rate " << r << " at node " << j << ", t = " << t;
      throw NumericalError(msg.str());
    }
    tree.set(j, r);
  };
  for (std::size_t j = 0; j < n; ++j) refresh(j);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  while (true) {
    const double total = tree.total();
    if (!(total > 0.0)) break;
    t += std::exponential_distribution<double>(total)(rng);
    if (t > horizon) break;

    const std::size_t j = tree.find(unif(rng) * total);
    const State from = config[j];
    load_field(j);
    double out = 0.0;
    for (State b = 0; b < ns; ++b) {
      channel[b] = b == from ? 0.0 : rates.rate(b, net.position(j), from, field);
      out += channel[b];
    }
    double u = unif(rng) * out;
    State to = from;
    for (State b = 0; b < ns; ++b) {
      if (channel[b] <= 0.0) continue;
      to = b;
      if (u < channel[b]) break;
      u -= channel[b];
    }
    if (to == from) throw NumericalError("simulate: selected node has no positive channel");

    config[j] = to;
    rec.events.push_back({t, static_cast<std::uint32_t>(j), from, to});
    for (const auto& inf : net.influenced_by(j)) {
      counts[inf.target * ns + from] -= inf.weight;
      counts[inf.target * ns + to] += inf.weight;
      refresh(inf.target);
    }
    refresh(j);
  }
  return rec;
}

inline TrajectoryRecord simulate(const Network& net, const RateFamily& rates,
                                 std::span<const State> init, double horizon,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return simulate(net, rates, init, horizon, rng);
}

/// Independent per-node initial states: node j is infected with probability
/// infected_profile(x^j).
inline std::vector<State> bernoulli_init(const Network& net,
                                         const std::function<double(double)>& infected_profile,
                                         std::mt19937_64& rng) {
  std::vector<State> init(net.size());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t j = 0; j < net.size(); ++j)
    init[j] = unif(rng) < infected_profile(net.position(j)) ? kInfected : kSusceptible;
  return init;
}

/// Uniform partition of [lo, hi) into M bins.
struct SpatialBins {
  std::size_t count = 64;
  double lo = 0.0;
  double hi = kTwoPi;

  std::size_t index(double x) const {
    const double r = (x - lo) / (hi - lo) * static_cast<double>(count);
    const auto b = static_cast<long long>(std::floor(r + 1e-9));
    return static_cast<std::size_t>(std::clamp<long long>(b, 0, static_cast<long long>(count) - 1));
  }
  double edge(std::size_t b) const {
    return lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(count);
  }
};

struct FluxAtom {
  double position = 0.0;
  double t = 0.0;
};

/// Empirical reaction flux: per channel (from, to), one atom of weight 1/N per event.
struct EmpiricalFlux {
  std::size_t num_nodes = 0;
  std::size_t num_states = 0;
  std::vector<std::vector<FluxAtom>> channels;  // index from * S + to

  const std::vector<FluxAtom>& channel(State from, State to) const {
    return channels[from * num_states + to];
  }
  double weight() const { return 1.0 / static_cast<double>(num_nodes); }
  double mass(State from, State to) const {
    return static_cast<double>(channel(from, to).size()) * weight();
  }
};

inline EmpiricalFlux extract_flux(const TrajectoryRecord& traj) {
  EmpiricalFlux f;
  f.num_nodes = traj.size();
  f.num_states = traj.states.size();
  f.channels.resize(f.num_states * f.num_states);
  for (const auto& e : traj.events)
    f.channels[e.from * f.num_states + e.to].push_back({traj.positions[e.node], e.t});
  return f;
}

/// Event counts per (channel, bin) with t in (t_lo, t_hi]. Index [from*S+to][bin].
inline std::vector<std::vector<std::int64_t>> flux_counts(const EmpiricalFlux& flux,
                                                          const SpatialBins& bins, double t_lo,
                                                          double t_hi) {
  std::vector<std::vector<std::int64_t>> c(flux.channels.size(),
                                           std::vector<std::int64_t>(bins.count, 0));
  for (std::size_t ch = 0; ch < flux.channels.size(); ++ch)
    for (const auto& a : flux.channels[ch])
      if (a.t > t_lo && a.t <= t_hi) ++c[ch][bins.index(a.position)];
  return c;
}

/// Empirical occupation at one time: node counts per (state, bin).
struct EmpiricalOccupation {
  double t = 0.0;
  std::size_t num_nodes = 0;
  std::vector<std::vector<std::int64_t>> counts;  // [state][bin]

  double mass(State s, std::size_t bin) const {
    return static_cast<double>(counts[s][bin]) / static_cast<double>(num_nodes);
  }
  double total_mass() const {
    std::int64_t total = 0;
    for (const auto& row : counts)
      for (auto c : row) total += c;
    return static_cast<double>(total) / static_cast<double>(num_nodes);
  }
};

/// Replays events with time <= t and bins the resulting configuration.
inline EmpiricalOccupation occupation_at(const TrajectoryRecord& traj, double t,
                                         const SpatialBins& bins) {
  if (t < 0.0 || t > traj.horizon) throw std::out_of_range("occupation_at: time out of range");
  std::vector<State> config = traj.initial_config;
  for (const auto& e : traj.events) {
    if (e.t > t) break;
    config[e.node] = e.to;
  }
  EmpiricalOccupation occ;
  occ.t = t;
  occ.num_nodes = traj.size();
  occ.counts.assign(traj.states.size(), std::vector<std::int64_t>(bins.count, 0));
  for (std::size_t j = 0; j < config.size(); ++j) ++occ.counts[config[j]][bins.index(traj.positions[j])];
  return occ;
}

/// Occupation snapshots at sorted times, replaying the event log once.
inline std::vector<EmpiricalOccupation> occupation_series(const TrajectoryRecord& traj,
                                                          std::span<const double> times,
                                                          const SpatialBins& bins) {
  std::vector<EmpiricalOccupation> out;
  out.reserve(times.size());
  std::vector<std::int64_t> node_bin(traj.size());
  EmpiricalOccupation occ;
  occ.num_nodes = traj.size();
  occ.counts.assign(traj.states.size(), std::vector<std::int64_t>(bins.count, 0));
  for (std::size_t j = 0; j < traj.size(); ++j) {
    node_bin[j] = static_cast<std::int64_t>(bins.index(traj.positions[j]));
    ++occ.counts[traj.initial_config[j]][node_bin[j]];
  }
  std::size_t e = 0;
  for (double t : times) {
    if (t < 0.0 || t > traj.horizon) throw std::out_of_range("occupation_series: time out of range");
    for (; e < traj.events.size() && traj.events[e].t <= t; ++e) {
      const auto& ev = traj.events[e];
      --occ.counts[ev.from][node_bin[ev.node]];
      ++occ.counts[ev.to][node_bin[ev.node]];
    }
    occ.t = t;
    out.push_back(occ);
  }
  return out;
}

/// Discrete flux balance on [0, t]: for every state and bin, the occupation
/// change minus the net inflow of events, in integer node counts. All entries
/// are zero for a consistent trajectory; returns the largest |defect|.
inline std::int64_t psi_identity_defect(const TrajectoryRecord& traj, double t,
                                        const SpatialBins& bins) {
  const EmpiricalFlux flux = extract_flux(traj);
  const auto counts = flux_counts(flux, bins, -1.0, t);
  const std::size_t ns = traj.states.size();
  const EmpiricalOccupation start = occupation_at(traj, 0.0, bins);
  const EmpiricalOccupation end = occupation_at(traj, t, bins);
  // Events at exactly t = 0 cannot occur (clock times are positive), so the
  // window (-1, t] holds every event with time <= t.
  std::int64_t worst = 0;
  for (State a = 0; a < ns; ++a) {
    for (std::size_t bin = 0; bin < bins.count; ++bin) {
      std::int64_t net = 0;
      for (State b = 0; b < ns; ++b) {
        if (a == b) continue;
        net += counts[b * ns + a][bin] - counts[a * ns + b][bin];
      }
      const std::int64_t change = end.counts[a][bin] - start.counts[a][bin];
      worst = std::max<std::int64_t>(worst, std::abs(change - net));
    }
  }
  return worst;
}

/// Runs `replicas` independent jobs on up to `threads` workers. Job r receives
/// its own RNG stream, so results do not depend on the thread count.
template <typename Result>
std::vector<Result> run_replicas(std::size_t replicas, std::size_t threads, std::uint64_t seed,
                                 const std::function<Result(std::size_t, std::mt19937_64&)>& job) {
  std::vector<Result> results(replicas);
  threads = std::max<std::size_t>(1, std::min(threads, replicas));
  auto worker = [&](std::size_t first) {
    for (std::size_t r = first; r < replicas; r += threads) {
      auto rng = replica_rng(seed, r);
      results[r] = job(r, rng);
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(worker, w);
  }
  return results;
}

/// JSONL, one `{t, j, from, to}` object per event.
inline void write_trajectory_jsonl(std::ostream& os, const TrajectoryRecord& traj) {
  for (const auto& e : traj.events) {
    nlohmann::json j = {{"t", e.t},
                        {"j", e.node},
                        {"from", traj.states.label(e.from)},
                        {"to", traj.states.label(e.to)}};
    os << j.dump() << '\n';
  }
}

inline void write_flux_csv(std::ostream& os, const EmpiricalFlux& flux, const StateSpace& states,
                           const SpatialBins& bins, std::span<const double> time_edges) {
  os.precision(17);
  os << "channel,bin,t_lo,t_hi,mass\n";
  for (std::size_t w = 0; w + 1 < time_edges.size(); ++w) {
    auto counts = flux_counts(flux, bins, time_edges[w], time_edges[w + 1]);
    for (State a = 0; a < states.size(); ++a) {
      for (State b = 0; b < states.size(); ++b) {
        if (a == b) continue;
        for (std::size_t bin = 0; bin < bins.count; ++bin)
          os << states.label(a) << "->" << states.label(b) << ',' << bin << ','
             << time_edges[w] << ',' << time_edges[w + 1] << ','
             << static_cast<double>(counts[a * states.size() + b][bin]) * flux.weight() << '\n';
      }
    }
  }
}

inline void write_occupation_csv(std::ostream& os, const std::vector<EmpiricalOccupation>& series,
                                 const StateSpace& states) {
  os.precision(17);
  os << "channel,bin,t_lo,t_hi,mass\n";
  for (const auto& occ : series)
    for (State a = 0; a < states.size(); ++a)
      for (std::size_t bin = 0; bin < occ.counts[a].size(); ++bin)
        os << states.label(a) << ',' << bin << ',' << occ.t << ',' << occ.t << ','
           << occ.mass(a, bin) << '\n';
}

}  // namespace gldp
