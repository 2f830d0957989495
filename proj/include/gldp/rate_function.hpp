#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "gldp/common.hpp"
#include "gldp/core_model.hpp"
#include "gldp/meanfield.hpp"

namespace gldp {

// ---------------------------------------------------------------------------
// Uncoupled and coupled flux rate functions

namespace detail {

inline double trapezoid_weight(std::size_t n, std::size_t steps, double dt) {
  return (n == 0 || n == steps) ? 0.5 * dt : dt;
}

inline std::string node_location(double t, double theta) {
  std::ostringstream os;
  os << "t = " << t << ", theta = " << theta;
  return os.str();
}

}  // namespace detail

/// sum over off-diagonal channels of the space-time integral of ell(p) rho.
inline double rate_I(const LimitFlux& flux, const SpatialGrid& grid) {
  double total = 0.0;
  for (std::size_t n = 0; n <= flux.steps; ++n) {
    const double wt = detail::trapezoid_weight(n, flux.steps, flux.dt);
    for (State a = 0; a < flux.num_states; ++a)
      for (State b = 0; b < flux.num_states; ++b) {
        if (a == b) continue;
        for (std::size_t i = 0; i < grid.size; ++i)
          total += wt * grid.weights[i] * grid.density[i] * ell(flux.at(n, a, b, i));
      }
  }
  return total;
}

/// Occupation densities implied by fluxes and an initial density:
/// nu_t(alpha) = nu_0(alpha) + sum_beta int_0^t (p_{beta->alpha} - p_{alpha->beta}) ds,
/// with the time integral done by the cumulative trapezoid rule.
inline DensityField reconstruct_density(const LimitFlux& flux,
                                        const std::vector<std::vector<double>>& nu0) {
  const std::size_t ns = flux.num_states;
  const std::size_t m = flux.grid_size;
  DensityField nu(flux.steps, ns, m, flux.dt);
  auto net = [&](std::size_t n, State a, std::size_t i) {
    double v = 0.0;
    for (State b = 0; b < ns; ++b)
      if (b != a) v += flux.at(n, b, a, i) - flux.at(n, a, b, i);
    return v;
  };
  for (State a = 0; a < ns; ++a)
    for (std::size_t i = 0; i < m; ++i) nu.at(0, a, i) = nu0[a][i];
  for (std::size_t n = 0; n < flux.steps; ++n)
    for (State a = 0; a < ns; ++a)
      for (std::size_t i = 0; i < m; ++i)
        nu.at(n + 1, a, i) = nu.at(n, a, i) + 0.5 * flux.dt * (net(n, a, i) + net(n + 1, a, i));
  return nu;
}

/// Coupled flux rate function
///   G = sum_{alpha != beta} int int lambda ell(p / lambda) dt dkappa,
///   lambda_{(alpha,beta)} = f_beta(x, alpha, w) nu_t(alpha, x),
/// with nu and w rebuilt from the fluxes themselves. Returns an infinite cost
/// when the rebuilt density leaves [0, 1] or a channel carries flux with zero
/// intensity.
inline Cost rate_G(const LimitFlux& flux, const std::vector<std::vector<double>>& nu0,
                   const SpatialGrid& grid, const KernelOperator& kernel, const RateFamily& rates,
                   double density_tolerance = 1e-6) {
  const std::size_t ns = flux.num_states;
  const std::size_t m = grid.size;
  if (rates.states().size() != ns) throw ConfigError("rate_G: state count mismatch");
  const DensityField nu = reconstruct_density(flux, nu0);

  Cost total;
  std::vector<double> field(ns);
  Eigen::MatrixXd w(ns, m);
  for (std::size_t n = 0; n <= flux.steps; ++n) {
    for (State a = 0; a < ns; ++a) {
      auto sl = nu.slice(n, a);
      for (std::size_t i = 0; i < m; ++i) {
        if (sl[i] < -density_tolerance || sl[i] > 1.0 + density_tolerance)
          return Cost::infinite("density leaves [0,1] at " +
                                detail::node_location(nu.time(n), grid.nodes[i]));
      }
      w.row(a) = kernel.apply(Eigen::Map<const Eigen::VectorXd>(sl.data(), m)).transpose();
    }
    const double wt = detail::trapezoid_weight(n, flux.steps, flux.dt);
    double slice = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      for (State a = 0; a < ns; ++a) field[a] = w(a, i);
      for (State a = 0; a < ns; ++a) {
        for (State b = 0; b < ns; ++b) {
          if (a == b) continue;
          const double p = flux.at(n, a, b, i);
          const double lam = rates.rate(b, grid.nodes[i], a, field) * std::max(nu.at(n, a, i), 0.0);
          if (lam <= 0.0) {
            if (p > 0.0)
              return Cost::infinite("flux with zero intensity at " +
                                    detail::node_location(nu.time(n), grid.nodes[i]));
            continue;
          }
          slice += grid.weights[i] * grid.density[i] * scaled_ell(p, lam, kDensityFloor);
        }
      }
    }
    total += wt * slice;
  }
  return total;
}

// ---------------------------------------------------------------------------
// SIS Lagrangian

/// Nonnegative root of a^2 + a sdot - alpha lambda (1 - s) = 0.
inline double sis_A(double sdot, double s, double lambda, double alpha) {
  const double q = alpha * lambda * (1.0 - s);
  if (q <= 0.0) return std::max(0.0, -sdot);
  const double root = std::sqrt(sdot * sdot + 4.0 * q);
  // Rationalized form avoids cancellation when sdot > 0.
  return sdot > 0.0 ? 2.0 * q / (sdot + root) : 0.5 * (root - sdot);
}

/// Closed-form minimum over a, b >= 0 with sdot = b - a of
///   lambda ell(a / lambda) + alpha (1 - s) ell(b / (alpha (1 - s))).
/// Infinite when a required flow has zero intensity.
inline Cost sis_lagrangian(double sdot, double s, double lambda, double alpha) {
  const double c = alpha * (1.0 - s);
  if (lambda < 0.0 || c < 0.0) throw std::domain_error("sis_lagrangian: negative intensity");
  if (lambda == 0.0 && sdot < 0.0) return Cost::infinite("infection flux required with lambda = 0");
  if (c == 0.0 && sdot > 0.0) return Cost::infinite("recovery flux required with 1 - s = 0");
  const double a = sis_A(sdot, s, lambda, alpha);
  const double b = sdot + a;
  double value = 0.0;
  value += lambda > 0.0 ? scaled_ell(a, lambda, kDensityFloor) : 0.0;
  value += c > 0.0 ? scaled_ell(std::max(b, 0.0), c, kDensityFloor) : 0.0;
  return value;
}

/// lambda_theta(s) = beta s(theta) int J(theta, .) (1 - s) on the grid.
inline Eigen::VectorXd sis_lambda(const KernelOperator& kernel, const SisParams& params,
                                  const Eigen::VectorXd& s) {
  const Eigen::VectorXd pull = kernel.apply(Eigen::VectorXd::Ones(s.size()) - s);
  return params.beta * s.cwiseProduct(pull);
}

/// Mean-field drift -lambda_theta(s) + alpha (1 - s).
inline Eigen::VectorXd sis_drift(const KernelOperator& kernel, const SisParams& params,
                                 const Eigen::VectorXd& s) {
  return -sis_lambda(kernel, params, s) +
         params.alpha * (Eigen::VectorXd::Ones(s.size()) - s);
}

/// Finite-difference time derivative of a path sampled at steps + 1 nodes:
/// centered inside, second-order one-sided at the ends.
inline double path_time_derivative(const DensityField& path, std::size_t n, std::size_t i) {
  const double dt = path.dt;
  const std::size_t K = path.steps;
  if (K < 2) throw ConfigError("path needs at least two time intervals");
  if (n == 0)
    return (-3.0 * path.at(0, kSusceptible, i) + 4.0 * path.at(1, kSusceptible, i) -
            path.at(2, kSusceptible, i)) / (2.0 * dt);
  if (n == K)
    return (3.0 * path.at(K, kSusceptible, i) - 4.0 * path.at(K - 1, kSusceptible, i) +
            path.at(K - 2, kSusceptible, i)) / (2.0 * dt);
  return (path.at(n + 1, kSusceptible, i) - path.at(n - 1, kSusceptible, i)) / (2.0 * dt);
}

/// H_T(s) = int_0^T int L_theta(sdot, s) dt dtheta with the susceptible slice of
/// `path` as s. Trapezoid in time, grid weights in space.
inline Cost sis_action(const DensityField& path, const SisParams& params,
                       const KernelOperator& kernel, const SpatialGrid& grid) {
  const std::size_t m = grid.size;
  if (path.grid_size != m) throw ConfigError("sis_action: path and grid sizes differ");
  for (double v : path.values)
    if (v < 0.0 || v > 1.0) throw ConfigError("sis_action: path values must lie in [0, 1]");
  Cost total;
  for (std::size_t n = 0; n <= path.steps; ++n) {
    auto sl = path.slice(n, kSusceptible);
    const Eigen::VectorXd s = Eigen::Map<const Eigen::VectorXd>(sl.data(), m);
    const Eigen::VectorXd lam = sis_lambda(kernel, params, s);
    Cost slice;
    for (std::size_t i = 0; i < m; ++i) {
      Cost l = sis_lagrangian(path_time_derivative(path, n, i), s[i], std::max(lam[i], 0.0),
                              params.alpha);
      if (!l.finite()) return Cost::infinite(l.where() + " (" + detail::node_location(path.time(n), grid.nodes[i]) + ")");
      slice += grid.weights[i] * grid.density[i] * l.value();
    }
    total += detail::trapezoid_weight(n, path.steps, path.dt) * slice;
  }
  return total;
}

/// Wraps a susceptible profile s[n][i] as a two-state DensityField.
inline DensityField sis_path(const std::vector<std::vector<double>>& s, double dt) {
  if (s.size() < 2) throw ConfigError("sis_path: need at least two time nodes");
  DensityField d(s.size() - 1, 2, s.front().size(), dt);
  for (std::size_t n = 0; n < s.size(); ++n)
    for (std::size_t i = 0; i < s[n].size(); ++i) {
      d.at(n, kSusceptible, i) = s[n][i];
      d.at(n, kInfected, i) = 1.0 - s[n][i];
    }
  return d;
}

// ---------------------------------------------------------------------------
// Contracted Lagrangian

struct ContractedSolution {
  Cost value;
  std::vector<std::vector<double>> flux;  // optimal q[from][to]
  std::size_t iterations = 0;
};

/// min over q >= 0 with r_zeta = sum_alpha (q_{alpha->zeta} - q_{zeta->alpha}) of
///   sum_{alpha != beta} lambda_{alpha beta} ell(q_{alpha beta} / lambda_{alpha beta})
/// at a single point, by Newton ascent on the concave dual
///   g(phi) = sum phi_zeta r_zeta - sum lambda_{ab} (exp(phi_b - phi_a) - 1),
/// whose maximizer gives q_{ab} = lambda_{ab} exp(phi_b - phi_a).
/// `intensity[a][b]` is lambda_{a -> b}.
inline ContractedSolution contracted_L_local(std::span<const double> r,
                                             const std::vector<std::vector<double>>& intensity) {
  const std::size_t ns = r.size();
  if (intensity.size() != ns) throw ConfigError("contracted_L: intensity matrix has wrong size");
  double rsum = 0.0, rabs = 0.0;
  for (double v : r) {
    rsum += v;
    rabs += std::abs(v);
  }
  if (std::abs(rsum) > 1e-12 * (1.0 + rabs))
    throw ConfigError("contracted_L: r violates mass conservation (sum r != 0)");

  ContractedSolution sol;
  sol.flux.assign(ns, std::vector<double>(ns, 0.0));
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ns));

  auto fluxes = [&](const Eigen::VectorXd& p) {
    std::vector<std::vector<double>> q(ns, std::vector<double>(ns, 0.0));
    for (std::size_t a = 0; a < ns; ++a)
      for (std::size_t b = 0; b < ns; ++b)
        if (a != b && intensity[a][b] > 0.0) q[a][b] = intensity[a][b] * std::exp(p[b] - p[a]);
    return q;
  };
  auto dual = [&](const Eigen::VectorXd& p) {
    double g = 0.0;
    for (std::size_t z = 0; z < ns; ++z) g += p[z] * r[z];
    for (std::size_t a = 0; a < ns; ++a)
      for (std::size_t b = 0; b < ns; ++b)
        if (a != b && intensity[a][b] > 0.0) g -= intensity[a][b] * std::expm1(p[b] - p[a]);
    return g;
  };

  const Eigen::Index red = static_cast<Eigen::Index>(ns) - 1;
  double scale = rabs;
  for (const auto& row : intensity)
    for (double v : row) scale += std::abs(v);
  constexpr std::size_t kMaxIter = 200;
  for (sol.iterations = 0; sol.iterations < kMaxIter; ++sol.iterations) {
    auto q = fluxes(phi);
    Eigen::VectorXd grad(red);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(red, red);
    for (std::size_t z = 1; z < ns; ++z) {
      double in = 0.0, out = 0.0;
      for (std::size_t a = 0; a < ns; ++a) {
        in += q[a][z];
        out += q[z][a];
      }
      grad[z - 1] = r[z] - (in - out);
      hess(z - 1, z - 1) = in + out;
      for (std::size_t y = 1; y < ns; ++y)
        if (y != z) hess(z - 1, y - 1) = -(q[y][z] + q[z][y]);
    }
    if (grad.cwiseAbs().maxCoeff() <= 1e-14 * scale) break;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    Eigen::VectorXd step = ldlt.solve(grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite())
      return {Cost::infinite("contracted_L: r is not reachable with the given intensities"), {}, sol.iterations};
    Eigen::VectorXd full = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ns));
    full.tail(red) = step;
    // Near the maximum the dual is flat to rounding while the gradient is not,
    // so ascent is only required up to that rounding level.
    const double g0 = dual(phi);
    const double slack = 1e-13 * (1.0 + std::abs(g0));
    double t = 1.0;
    Eigen::VectorXd trial = phi + full;
    while (!(dual(trial) >= g0 - slack) && t > 1e-12) {
      t *= 0.5;
      trial = phi + t * full;
    }
    if (!(dual(trial) >= g0 - slack)) break;
    if ((trial - phi).cwiseAbs().maxCoeff() == 0.0) break;
    phi = trial;
    if (phi.cwiseAbs().maxCoeff() > 600.0)
      return {Cost::infinite("contracted_L: r is not reachable with the given intensities"), {}, sol.iterations};
  }

  sol.flux = fluxes(phi);
  // Residual constraint violation signals an unreachable r (dual unbounded).
  for (std::size_t z = 0; z < ns; ++z) {
    double in = 0.0, out = 0.0;
    for (std::size_t a = 0; a < ns; ++a) {
      in += sol.flux[a][z];
      out += sol.flux[z][a];
    }
    if (std::abs(r[z] - (in - out)) > 1e-9 * (1.0 + scale))
      return {Cost::infinite("contracted_L: r is not reachable with the given intensities"), sol.flux, sol.iterations};
  }
  double value = 0.0;
  for (std::size_t a = 0; a < ns; ++a)
    for (std::size_t b = 0; b < ns; ++b)
      if (a != b && intensity[a][b] > 0.0) value += scaled_ell(sol.flux[a][b], intensity[a][b]);
  sol.value = value;
  return sol;
}

/// L_t(r, w) = int over the grid of the pointwise contracted minimum, with
/// intensities lambda_{a->b}(x) = f_b(x, a, w(x)) nu(a, x).
/// `r` and `nu` are indexed [state][i]; `field` is one FieldVector per node.
inline Cost contracted_L(const std::vector<std::vector<double>>& r,
                         const std::vector<std::vector<double>>& nu,
                         const std::vector<FieldVector>& field, const RateFamily& rates,
                         const SpatialGrid& grid) {
  const std::size_t ns = rates.states().size();
  if (ns > 3) throw ConfigError("contracted_L: only |Gamma| <= 3 is supported");
  if (r.size() != ns || nu.size() != ns) throw ConfigError("contracted_L: state count mismatch");
  Cost total;
  std::vector<double> rloc(ns);
  std::vector<std::vector<double>> lam(ns, std::vector<double>(ns, 0.0));
  for (std::size_t i = 0; i < grid.size; ++i) {
    for (State a = 0; a < ns; ++a) {
      rloc[a] = r[a][i];
      for (State b = 0; b < ns; ++b)
        lam[a][b] = a == b ? 0.0 : rates.rate(b, grid.nodes[i], a, field[i]) * nu[a][i];
    }
    auto sol = contracted_L_local(rloc, lam);
    if (!sol.value.finite()) return sol.value;
    total += grid.weights[i] * grid.density[i] * sol.value.value();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Exact Poisson tail

/// log P(X >= k) for X ~ Poisson(mean), summed in log space.
inline double poisson_log_upper_tail(double mean, long long k) {
  if (k <= 0) return 0.0;
  const double log_mean = std::log(mean);
  auto log_pmf = [&](long long j) {
    return -mean + static_cast<double>(j) * log_mean - std::lgamma(static_cast<double>(j) + 1.0);
  };
  const double head = log_pmf(k);
  double sum = 0.0;  // sum of exp(log_pmf(j) - head)
  for (long long j = k;; ++j) {
    const double term = std::exp(log_pmf(j) - head);
    sum += term;
    if (static_cast<double>(j) > mean && term < 1e-18 * sum) break;
  }
  return head + std::log(sum);
}

/// N^{-1} log P(N^{-1} sum of N unit-rate Poisson counts on [0, T] >= a).
inline double poisson_ldp_slope(std::size_t n, double a, double horizon = 1.0) {
  const double mean = static_cast<double>(n) * horizon;
  const auto k = static_cast<long long>(std::ceil(a * static_cast<double>(n) - 1e-9));
  return poisson_log_upper_tail(mean, k) / static_cast<double>(n);
}

}  // namespace gldp
