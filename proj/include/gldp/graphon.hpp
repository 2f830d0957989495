#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gldp/common.hpp"
#include "gldp/network.hpp"

namespace gldp {

enum class GraphonFamily { kConstant, kInhomogeneousCircle, kPowerLaw, kSmallWorld, kCustom };

inline std::string to_string(GraphonFamily f) {
  switch (f) {
    case GraphonFamily::kConstant: return "constant";
    case GraphonFamily::kInhomogeneousCircle: return "inhomogeneous-circle";
    case GraphonFamily::kPowerLaw: return "power-law";
    case GraphonFamily::kSmallWorld: return "small-world";
    case GraphonFamily::kCustom: return "custom";
  }
  return "custom";
}

inline GraphonFamily graphon_family_from_string(const std::string& s) {
  if (s == "constant") return GraphonFamily::kConstant;
  if (s == "inhomogeneous-circle") return GraphonFamily::kInhomogeneousCircle;
  if (s == "power-law") return GraphonFamily::kPowerLaw;
  if (s == "small-world") return GraphonFamily::kSmallWorld;
  if (s == "custom") return GraphonFamily::kCustom;
  throw ConfigError("unknown graphon family '" + s + "'");
}

using Kernel = std::function<double(double, double)>;

/// Continuum connectivity kernel J(theta, theta') with its bound C_J.
struct GraphonSpec {
  Kernel kernel;
  double bound = 1.0;
  bool symmetric = true;
  GraphonFamily family = GraphonFamily::kCustom;
  /// Kernel is not Lipschitz (unbounded or discontinuous); skips that check.
  bool lipschitz_exempt = false;
  /// Power-law exponents; gamma is carried for completeness only.
  double power_beta = 0.0;
  double power_gamma = 0.0;

  double operator()(double x, double y) const { return kernel(x, y); }

  /// Canonical node positions: 2 pi j / N on the circle, (j + 1) / N on (0, 1].
  std::vector<double> canonical_positions(std::size_t n) const {
    std::vector<double> x(n);
    for (std::size_t j = 0; j < n; ++j) {
      x[j] = family == GraphonFamily::kPowerLaw
                 ? static_cast<double>(j + 1) / static_cast<double>(n)
                 : kTwoPi * static_cast<double>(j) / static_cast<double>(n);
    }
    return x;
  }

  double distance(double a, double b) const {
    return family == GraphonFamily::kPowerLaw ? std::abs(a - b) : circle_distance(a, b);
  }
};

inline GraphonSpec constant_graphon(double j0) {
  return {[j0](double, double) { return j0; }, std::abs(j0), true, GraphonFamily::kConstant};
}

/// J(theta, theta') = a + b cos(theta - theta').
inline GraphonSpec circle_graphon(double a, double b) {
  GraphonSpec g;
  g.kernel = [a, b](double x, double y) { return a + b * std::cos(x - y); };
  g.bound = std::abs(a) + std::abs(b);
  g.family = GraphonFamily::kInhomogeneousCircle;
  return g;
}

/// J(x, y) = (1 - beta)^2 (x y)^{-beta} on (0, 1], with 0 < beta < gamma < 1.
/// The bound reported is the value at the smallest canonical position 1/n.
inline GraphonSpec power_law_graphon(double beta, double gamma, std::size_t n) {
  if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("power-law beta must lie in (0, 1)");
  if (!(gamma > beta && gamma < 1.0))
    throw ConfigError("power-law gamma must satisfy beta < gamma < 1");
  GraphonSpec g;
  g.kernel = [beta](double x, double y) {
    return (1.0 - beta) * (1.0 - beta) * std::pow(x * y, -beta);
  };
  const double xmin = 1.0 / static_cast<double>(n);
  g.bound = (1.0 - beta) * (1.0 - beta) * std::pow(xmin * xmin, -beta);
  g.family = GraphonFamily::kPowerLaw;
  g.lipschitz_exempt = true;
  g.power_beta = beta;
  g.power_gamma = gamma;
  return g;
}

/// Ring surrogate of a rewired lattice: `high` within distance d0, `low` beyond.
inline GraphonSpec small_world_graphon(double high, double low, double d0) {
  if (!(d0 > 0.0 && d0 <= std::numbers::pi)) throw ConfigError("small-world d0 must lie in (0, pi]");
  GraphonSpec g;
  g.kernel = [=](double x, double y) { return circle_distance(x, y) <= d0 ? high : low; };
  g.bound = std::max(std::abs(high), std::abs(low));
  g.family = GraphonFamily::kSmallWorld;
  g.lipschitz_exempt = true;
  return g;
}

/// Positive and negative edge-probability profiles, p_+ - p_- = J.
struct EdgeProbabilities {
  Kernel p_plus;
  Kernel p_minus;

  static EdgeProbabilities from(const GraphonSpec& spec) {
    Kernel k = spec.kernel;
    return {[k](double x, double y) { return std::max(k(x, y), 0.0); },
            [k](double x, double y) { return std::max(-k(x, y), 0.0); }};
  }
};

/// Samples a W-random network with P(J^{jk} = +-1) = phi * p_+-(x^j, x^k).
///
/// Self-couplings are never drawn. With spec.symmetric, one draw per unordered
/// pair sets both J^{jk} and J^{kj}.
inline Network sample_network(const GraphonSpec& spec, std::size_t n, double phi,
                              std::uint64_t seed, const EdgeProbabilities& probs) {
  if (n < 2) throw ConfigError("sample_network: N must be at least 2");
  if (!(phi > 0.0)) throw ConfigError("sample_network: phi_N must be positive");
  const std::vector<double> x = spec.canonical_positions(n);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Edge> edges;

  auto draw = [&](std::size_t j, std::size_t k) -> std::int8_t {
    const double pp = phi * probs.p_plus(x[j], x[k]);
    const double pm = phi * probs.p_minus(x[j], x[k]);
    if (pp < 0.0 || pm < 0.0 || pp + pm > 1.0) {
      std::ostringstream msg;
      msg << "edge probability overflow at pair (" << j << ", " << k << "): phi*p_+ = " << pp
          << ", phi*p_- = " << pm;
      throw ConfigError(msg.str());
    }
    const double u = unif(rng);
    if (u < pp) return 1;
    if (u < pp + pm) return -1;
    return 0;
  };

  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = spec.symmetric ? j + 1 : 0; k < n; ++k) {
      if (k == j) continue;
      const std::int8_t w = draw(j, k);
      if (w == 0) continue;
      edges.push_back({static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(k), w});
      if (spec.symmetric)
        edges.push_back({static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(j), w});
    }
  }
  return Network(x, std::move(edges), phi, seed, to_string(spec.family), true);
}

inline Network sample_network(const GraphonSpec& spec, std::size_t n, double phi,
                              std::uint64_t seed) {
  return sample_network(spec, n, phi, seed, EdgeProbabilities::from(spec));
}

/// Largest |J| and largest finite-difference slope over a uniform grid of the
/// domain, for spot-checking the bound and Lipschitz constant.
struct KernelAudit {
  double max_abs = 0.0;
  double max_slope = 0.0;
  bool within_bound = true;
  bool lipschitz_ok = true;
};

inline KernelAudit audit_kernel(const GraphonSpec& spec, std::size_t points = 256) {
  const std::vector<double> x = spec.canonical_positions(points);
  KernelAudit a;
  for (std::size_t i = 0; i < points; ++i) {
    for (std::size_t k = 0; k < points; ++k) {
      const double v = spec(x[i], x[k]);
      a.max_abs = std::max(a.max_abs, std::abs(v));
      const std::size_t kn = (k + 1) % points;
      if (kn == 0 && spec.family == GraphonFamily::kPowerLaw) continue;
      const double h = spec.distance(x[k], x[kn]);
      a.max_slope = std::max(a.max_slope, std::abs(spec(x[i], x[kn]) - v) / h);
    }
  }
  a.within_bound = spec.family == GraphonFamily::kPowerLaw ||
                   a.max_abs <= spec.bound * (1.0 + 1e-12);
  a.lipschitz_ok = spec.lipschitz_exempt || a.max_slope <= spec.bound * (1.0 + 1e-9);
  return a;
}

struct ConvergenceDiagnostic {
  std::vector<double> eta;
  double mean_eta = 0.0;
};

/// eta^j = sup over alpha in {-1,0,1}^N of |sum_k (J^{jk}/phi - J(x^j,x^k)) alpha^k|.
///
/// The supremum is attained at alpha^k = sign(J^{jk}/phi - J(x^j, x^k)), so
/// eta^j is the l1 norm of row j of the discrepancy. `trials` is unused.
inline ConvergenceDiagnostic eta_diagnostic(const Network& net, const GraphonSpec& spec,
                                            std::size_t /*trials*/ = 1,
                                            std::uint64_t /*seed*/ = 0) {
  const std::size_t n = net.size();
  const auto& x = net.positions();
  const auto& edges = net.edges();
  ConvergenceDiagnostic d;
  d.eta.assign(n, 0.0);
  std::vector<double> row(n);
  std::size_t e = 0;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) row[k] = -spec(x[j], x[k]);
    for (; e < edges.size() && edges[e].j == j; ++e) row[edges[e].k] += edges[e].weight / net.phi();
    double s = 0.0;
    for (double v : row) s += std::abs(v);
    d.eta[j] = s;
  }
  double total = 0.0;
  for (double v : d.eta) total += v;
  d.mean_eta = total / static_cast<double>(n);
  return d;
}

/// Writes `N phi_N seed family`, an optional `positions` block, then `j k w` lines.
inline void write_network(std::ostream& os, const Network& net) {
  os.precision(17);
  os << net.size() << ' ' << net.phi() << ' ' << net.seed() << ' ' << net.family() << '\n';
  if (!net.canonical_positions()) {
    os << "positions\n";
    for (double p : net.positions()) os << p << '\n';
  }
  for (const Edge& e : net.edges()) os << e.j << ' ' << e.k << ' ' << int(e.weight) << '\n';
}

inline Network read_network(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw ConfigError("network file: missing header");
  std::istringstream hs(header);
  std::size_t n = 0;
  double phi = 0.0;
  std::uint64_t seed = 0;
  std::string family;
  if (!(hs >> n >> phi >> seed >> family)) throw ConfigError("network file: malformed header");

  std::vector<double> positions;
  bool canonical = true;
  std::vector<Edge> edges;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line == "positions") {
      canonical = false;
      positions.resize(n);
      for (std::size_t j = 0; j < n; ++j)
        if (!(is >> positions[j])) throw ConfigError("network file: truncated positions block");
      std::getline(is, line);
      continue;
    }
    std::istringstream ls(line);
    long long j = 0, k = 0, w = 0;
    if (!(ls >> j >> k >> w)) throw ConfigError("network file: malformed edge line '" + line + "'");
    if (j < 0 || k < 0 || static_cast<std::size_t>(j) >= n || static_cast<std::size_t>(k) >= n)
      throw ConfigError("network file: edge index out of range");
    edges.push_back({static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(k),
                     static_cast<std::int8_t>(w)});
  }
  if (canonical) {
    GraphonSpec probe;
    probe.family = graphon_family_from_string(family);
    positions = probe.canonical_positions(n);
  }
  return Network(std::move(positions), std::move(edges), phi, seed, family, canonical);
}

}  // namespace gldp
