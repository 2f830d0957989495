#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <vector>

#include "gldp/common.hpp"
#include "gldp/core_model.hpp"
#include "gldp/graphon.hpp"

namespace gldp {

/// Uniform periodic grid on the circle with trapezoidal weights 1/M.
///
/// The reference measure is normalized to total mass one and the node density
/// is uniform, so integrals against kappa and mu_Rie coincide.
struct SpatialGrid {
  std::size_t size = 64;
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> density;

  static SpatialGrid circle(std::size_t m) {
    if (m < 2) throw ConfigError("spatial grid needs at least two nodes");
    SpatialGrid g;
    g.size = m;
    g.nodes.resize(m);
    for (std::size_t i = 0; i < m; ++i)
      g.nodes[i] = kTwoPi * static_cast<double>(i) / static_cast<double>(m);
    g.weights.assign(m, 1.0 / static_cast<double>(m));
    g.density.assign(m, 1.0);
    return g;
  }

  double integrate(std::span<const double> f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < size; ++i) s += weights[i] * density[i] * f[i];
    return s;
  }
};

/// Dense quadrature of the kernel integral operator on a grid.
class KernelOperator {
 public:
  KernelOperator(const SpatialGrid& grid, const Kernel& kernel)
      : matrix_(grid.size, grid.size), weights_(grid.size) {
    for (std::size_t i = 0; i < grid.size; ++i) {
      weights_[i] = grid.weights[i] * grid.density[i];
      for (std::size_t k = 0; k < grid.size; ++k)
        matrix_(i, k) = kernel(grid.nodes[i], grid.nodes[k]);
    }
  }

  std::size_t size() const { return weights_.size(); }

  /// (Kx)_i = sum_k w_k J(theta_i, theta_k) x_k
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    return matrix_ * weights_.cwiseProduct(x);
  }

  /// (K'y)_i = sum_j w_j J(theta_j, theta_i) y_j
  Eigen::VectorXd apply_adjoint(const Eigen::VectorXd& y) const {
    return matrix_.transpose() * weights_.cwiseProduct(y);
  }

  const Eigen::VectorXd& weights() const { return weights_; }
  const Eigen::MatrixXd& matrix() const { return matrix_; }

 private:
  Eigen::MatrixXd matrix_;
  Eigen::VectorXd weights_;
};

/// Occupation densities nu[t_n][alpha][i] on a time grid t_n = n * dt.
struct DensityField {
  std::size_t steps = 0;  // number of intervals; steps + 1 time nodes
  std::size_t num_states = 2;
  std::size_t grid_size = 0;
  double dt = 0.0;
  std::vector<double> values;

  DensityField() = default;
  DensityField(std::size_t steps_, std::size_t states, std::size_t m, double dt_)
      : steps(steps_), num_states(states), grid_size(m), dt(dt_),
        values((steps_ + 1) * states * m, 0.0) {}

  double horizon() const { return dt * static_cast<double>(steps); }
  double time(std::size_t n) const { return dt * static_cast<double>(n); }

  double& at(std::size_t n, State a, std::size_t i) {
    return values[(n * num_states + a) * grid_size + i];
  }
  double at(std::size_t n, State a, std::size_t i) const {
    return values[(n * num_states + a) * grid_size + i];
  }
  std::span<const double> slice(std::size_t n, State a) const {
    return {values.data() + (n * num_states + a) * grid_size, grid_size};
  }
  std::span<double> slice(std::size_t n, State a) {
    return {values.data() + (n * num_states + a) * grid_size, grid_size};
  }
};

/// Flux densities p_{alpha -> beta}[t_n][i].
struct LimitFlux {
  std::size_t steps = 0;
  std::size_t num_states = 2;
  std::size_t grid_size = 0;
  double dt = 0.0;
  std::vector<double> values;

  LimitFlux() = default;
  LimitFlux(std::size_t steps_, std::size_t states, std::size_t m, double dt_)
      : steps(steps_), num_states(states), grid_size(m), dt(dt_),
        values((steps_ + 1) * states * states * m, 0.0) {}

  double& at(std::size_t n, State from, State to, std::size_t i) {
    return values[((n * num_states + from) * num_states + to) * grid_size + i];
  }
  double at(std::size_t n, State from, State to, std::size_t i) const {
    return values[((n * num_states + from) * num_states + to) * grid_size + i];
  }
};

/// w_alpha(theta_i) = sum_k w_k J(theta_i, theta_k) nu(alpha, theta_k) for each node.
/// `density` is indexed [alpha][i].
inline std::vector<FieldVector> field_from_density(
    const KernelOperator& kernel, const std::vector<std::vector<double>>& density) {
  const std::size_t ns = density.size();
  const std::size_t m = kernel.size();
  std::vector<FieldVector> out(m, FieldVector(ns, 0.0));
  for (std::size_t a = 0; a < ns; ++a) {
    Eigen::VectorXd v = kernel.apply(Eigen::Map<const Eigen::VectorXd>(density[a].data(), m));
    for (std::size_t i = 0; i < m; ++i) out[i][a] = v[i];
  }
  return out;
}

struct EvolveResult {
  DensityField density;
  LimitFlux flux;
  double max_normalization_drift = 0.0;
  double min_density = 1.0;
};

namespace detail {

/// Time derivative of nu (S x M, column-major by state) and the channel fluxes.
inline void meanfield_rhs(const SpatialGrid& grid, const KernelOperator& kernel,
                          const RateFamily& rates, const Eigen::MatrixXd& nu,
                          Eigen::MatrixXd& dnu, std::vector<double>* flux_out) {
  const std::size_t ns = static_cast<std::size_t>(nu.rows());
  const std::size_t m = grid.size;
  Eigen::MatrixXd w(ns, m);
  for (std::size_t a = 0; a < ns; ++a) w.row(a) = kernel.apply(nu.row(a).transpose()).transpose();
  dnu.setZero(ns, m);
  std::vector<double> field(ns);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t a = 0; a < ns; ++a) field[a] = w(a, i);
    for (State a = 0; a < ns; ++a) {
      for (State b = 0; b < ns; ++b) {
        if (a == b) continue;
        const double p = rates.rate(b, grid.nodes[i], a, field) * nu(a, i);
        dnu(a, i) -= p;
        dnu(b, i) += p;
        if (flux_out) (*flux_out)[(a * ns + b) * m + i] = p;
      }
    }
  }
}

}  // namespace detail

/// Integrates d nu(alpha)/dt = sum_{beta != alpha} [f_alpha(beta) nu(beta) - f_beta(alpha) nu(alpha)]
/// with classical RK4 at fixed step, recording flux densities f_beta(alpha, w) nu(alpha)
/// at every time node. `nu0` is indexed [alpha][i].
inline EvolveResult evolve(const SpatialGrid& grid, const KernelOperator& kernel,
                           const RateFamily& rates, const std::vector<std::vector<double>>& nu0,
                           double horizon, double dt) {
  const std::size_t ns = rates.states().size();
  const std::size_t m = grid.size;
  if (nu0.size() != ns) throw ConfigError("evolve: initial density has wrong number of states");
  if (!(horizon > 0.0) || !(dt > 0.0)) throw ConfigError("evolve: horizon and dt must be positive");
  const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
  if (steps == 0 || std::abs(static_cast<double>(steps) * dt - horizon) > 1e-9 * horizon)
    throw ConfigError("evolve: horizon must be an integer multiple of dt");

  Eigen::MatrixXd nu(ns, m);
  for (std::size_t a = 0; a < ns; ++a) {
    if (nu0[a].size() != m) throw ConfigError("evolve: initial density has wrong grid size");
    for (std::size_t i = 0; i < m; ++i) nu(a, i) = nu0[a][i];
  }
  for (std::size_t i = 0; i < m; ++i)
    if (std::abs(nu.col(i).sum() - 1.0) > 1e-8)
      throw ConfigError("evolve: initial density is not normalized");

  EvolveResult res{DensityField(steps, ns, m, dt), LimitFlux(steps, ns, m, dt)};
  std::vector<double> flux(ns * ns * m, 0.0);
  Eigen::MatrixXd k1, k2, k3, k4;

  auto record = [&](std::size_t n) {
    for (std::size_t a = 0; a < ns; ++a)
      for (std::size_t i = 0; i < m; ++i) res.density.at(n, a, i) = nu(a, i);
    for (std::size_t a = 0; a < ns; ++a)
      for (std::size_t b = 0; b < ns; ++b)
        for (std::size_t i = 0; i < m; ++i) res.flux.at(n, a, b, i) = flux[(a * ns + b) * m + i];
    res.min_density = std::min(res.min_density, nu.minCoeff());
    const double drift = (nu.colwise().sum().array() - 1.0).abs().maxCoeff();
    res.max_normalization_drift = std::max(res.max_normalization_drift, drift);
    if (drift > 1e-8) {
      std::ostringstream msg;
      msg << "evolve: normalization drift " << drift << " at t = " << res.density.time(n);
      throw NumericalError(msg.str());
    }
  };

  detail::meanfield_rhs(grid, kernel, rates, nu, k1, &flux);
  record(0);
  for (std::size_t n = 0; n < steps; ++n) {
    detail::meanfield_rhs(grid, kernel, rates, nu + 0.5 * dt * k1, k2, nullptr);
    detail::meanfield_rhs(grid, kernel, rates, nu + 0.5 * dt * k2, k3, nullptr);
    detail::meanfield_rhs(grid, kernel, rates, nu + dt * k3, k4, nullptr);
    nu += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    detail::meanfield_rhs(grid, kernel, rates, nu, k1, &flux);
    record(n + 1);
  }
  return res;
}

/// Continuum flux balance: max over states, nodes and even time indices n of
/// |nu_n - nu_0 - int_0^{t_n} sum_beta (p_{beta->alpha} - p_{alpha->beta}) dt|,
/// with composite Simpson quadrature of the recorded fluxes.
inline double flux_balance_defect(const EvolveResult& res) {
  const DensityField& d = res.density;
  const LimitFlux& f = res.flux;
  const std::size_t ns = d.num_states, m = d.grid_size;
  auto net = [&](std::size_t n, State a, std::size_t i) {
    double v = 0.0;
    for (State b = 0; b < ns; ++b) {
      if (a == b) continue;
      v += f.at(n, b, a, i) - f.at(n, a, b, i);
    }
    return v;
  };
  double worst = 0.0;
  for (State a = 0; a < ns; ++a) {
    for (std::size_t i = 0; i < m; ++i) {
      double integral = 0.0;
      for (std::size_t n = 2; n <= d.steps; n += 2) {
        integral += d.dt / 3.0 * (net(n - 2, a, i) + 4.0 * net(n - 1, a, i) + net(n, a, i));
        worst = std::max(worst, std::abs(d.at(n, a, i) - d.at(0, a, i) - integral));
      }
    }
  }
  return worst;
}

/// SIS initial density from a susceptible profile s0(theta_i).
inline std::vector<std::vector<double>> sis_density(std::span<const double> s0) {
  std::vector<std::vector<double>> nu(2, std::vector<double>(s0.size()));
  for (std::size_t i = 0; i < s0.size(); ++i) {
    nu[kSusceptible][i] = s0[i];
    nu[kInfected][i] = 1.0 - s0[i];
  }
  return nu;
}

/// Stationary susceptible profile reached from `s_start` by integrating the
/// SIS mean-field dynamics until max |ds/dt| < tol.
inline std::vector<double> sis_equilibrium(const SpatialGrid& grid, const KernelOperator& kernel,
                                           const SisParams& params, std::vector<double> s,
                                           double tol = 1e-13, std::size_t max_rounds = 400) {
  SisRates rates(params);
  const double dt = 0.01;
  for (std::size_t round = 0; round < max_rounds; ++round) {
    auto res = evolve(grid, kernel, rates, sis_density(s), 1.0, dt);
    auto last = res.density.slice(res.density.steps, kSusceptible);
    s.assign(last.begin(), last.end());
    Eigen::MatrixXd nu(2, grid.size), dnu;
    for (std::size_t i = 0; i < grid.size; ++i) {
      nu(0, i) = s[i];
      nu(1, i) = 1.0 - s[i];
    }
    detail::meanfield_rhs(grid, kernel, rates, nu, dnu, nullptr);
    if (dnu.row(0).cwiseAbs().maxCoeff() < tol) return s;
  }
  throw NumericalError("sis_equilibrium: no stationary profile within the iteration budget");
}

/// CSV `t,alpha,theta,value`, writing every `stride`-th time node.
inline void write_density_csv(std::ostream& os, const DensityField& d, const SpatialGrid& grid,
                              const StateSpace& states, std::size_t stride = 1) {
  os.precision(17);
  os << "t,alpha,theta,value\n";
  for (std::size_t n = 0; n <= d.steps; n += std::max<std::size_t>(1, stride))
    for (State a = 0; a < d.num_states; ++a)
      for (std::size_t i = 0; i < d.grid_size; ++i)
        os << d.time(n) << ',' << states.label(a) << ',' << grid.nodes[i] << ',' << d.at(n, a, i)
           << '\n';
}

/// CSV `t,channel,theta,value`.
inline void write_limit_flux_csv(std::ostream& os, const LimitFlux& f, const SpatialGrid& grid,
                                 const StateSpace& states, std::size_t stride = 1) {
  os.precision(17);
  os << "t,channel,theta,value\n";
  for (std::size_t n = 0; n <= f.steps; n += std::max<std::size_t>(1, stride))
    for (State a = 0; a < f.num_states; ++a)
      for (State b = 0; b < f.num_states; ++b) {
        if (a == b) continue;
        for (std::size_t i = 0; i < f.grid_size; ++i)
          os << f.dt * static_cast<double>(n) << ',' << states.label(a) << "->" << states.label(b)
             << ',' << grid.nodes[i] << ',' << f.at(n, a, b, i) << '\n';
      }
}

}  // namespace gldp
