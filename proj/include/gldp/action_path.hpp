#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gldp/common.hpp"
#include "gldp/core_model.hpp"
#include "gldp/meanfield.hpp"
#include "gldp/rate_function.hpp"

namespace gldp {

// ---------------------------------------------------------------------------
// Pointwise derivatives of L_theta

/// Derivatives of the SIS Lagrangian at one node, from the closed-form
/// expressions. `c` is alpha (1 - s); `disc` is sdot^2 + 4 alpha lambda (1 - s).
struct LocalPartials {
  double A = 0.0;
  double disc = 0.0;
  double dA = 0.0;   // dA/dsdot
  double d2A = 0.0;  // d2A/dsdot2
  double dL = 0.0;   // dL/dsdot
  double d2L = 0.0;  // d2L/dsdot2
  double M = 0.0;    // coefficient of D lambda . x
  double N = 0.0;    // coefficient of x(theta)
  bool degenerate = false;
};

/// Pointwise partials. Requires lambda (1 - s) > floor; otherwise the result
/// is flagged degenerate and its entries are left at zero.
inline LocalPartials local_partials(double sdot, double s, double lambda, double alpha,
                                    double floor = kDensityFloor) {
  LocalPartials p;
  const double c = alpha * (1.0 - s);
  if (!(lambda > floor) || !(c > floor) || !(lambda * (1.0 - s) > floor)) {
    p.degenerate = true;
    return p;
  }
  p.A = sis_A(sdot, s, lambda, alpha);
  p.disc = sdot * sdot + 4.0 * alpha * lambda * (1.0 - s);
  const double inv_root = 1.0 / std::sqrt(p.disc);
  const double A = p.A;
  const double log_ratio = std::log(lambda / A);
  const double bracket = 1.0 + c * lambda / (A * A);

  p.dA = -0.5 + 0.5 * sdot * inv_root;
  p.d2A = 0.5 * inv_root - 0.5 * sdot * sdot * inv_root * inv_root * inv_root;
  p.dL = -p.dA * log_ratio * bracket;
  p.d2L = -p.d2A * log_ratio * bracket +
          p.dA * p.dA *
              (1.0 / A + 2.0 * c * lambda / (A * A * A) * log_ratio + c * lambda / (A * A * A));
  p.M = ell(A / lambda) + (c / A + A / lambda) * log_ratio +
        c * inv_root * log_ratio * (-c * lambda / (A * A) - 1.0);
  p.N = -alpha * ell(lambda / A) +
        alpha * lambda * inv_root * log_ratio * (c * lambda / (A * A) + 1.0);
  return p;
}

/// Scalar Lagrangian for hot loops; +infinity only on degenerate input.
inline double lagrangian_value(double sdot, double s, double lambda, double alpha) {
  return sis_lagrangian(sdot, s, lambda, alpha).value_or(std::numeric_limits<double>::infinity());
}

// ---------------------------------------------------------------------------
// Field-level operators

/// Pointwise and nonlocal Euler-Lagrange operators on a spatial grid.
struct ElOperators {
  Eigen::VectorXd lambda;
  Eigen::VectorXd pull;  // int J(theta, .) (1 - s)
  Eigen::VectorXd A, dA, d2A, dL, d2L;
  Eigen::VectorXd M, N, G;
  Eigen::VectorXd delta_lambda;  // D lambda . sdot
  Eigen::VectorXd delta_A;       // D A . sdot
  Eigen::VectorXd O;
  std::vector<bool> degenerate;
  bool any_degenerate = false;
};

/// The sdot-derivative block: lambda, A and the partials in sdot.
inline ElOperators el_partials(const Eigen::VectorXd& sdot, const Eigen::VectorXd& s,
                               const SisParams& params, const KernelOperator& kernel) {
  const Eigen::Index m = s.size();
  ElOperators op;
  op.pull = kernel.apply(Eigen::VectorXd::Ones(m) - s);
  op.lambda = params.beta * s.cwiseProduct(op.pull);
  op.A.resize(m); op.dA.resize(m); op.d2A.resize(m); op.dL.resize(m); op.d2L.resize(m);
  op.M.resize(m); op.N.resize(m);
  op.degenerate.assign(static_cast<std::size_t>(m), false);
  for (Eigen::Index i = 0; i < m; ++i) {
    const LocalPartials p = local_partials(sdot[i], s[i], op.lambda[i], params.alpha);
    op.A[i] = p.A; op.dA[i] = p.dA; op.d2A[i] = p.d2A; op.dL[i] = p.dL; op.d2L[i] = p.d2L;
    op.M[i] = p.M; op.N[i] = p.N;
    op.degenerate[static_cast<std::size_t>(i)] = p.degenerate;
    op.any_degenerate = op.any_degenerate || p.degenerate;
  }
  return op;
}

/// Adds the nonlocal block to `op`:
///   G = N + beta M int J(theta,.)(1-s) - beta int M(.) J(., theta) s(.),
///   D lambda . x = x beta int J(1-s) - beta s int J x,
///   D A . x = alpha disc^{-1/2} (-lambda x + (1-s) D lambda . x),
/// and O, the derivative of dL/dsdot along the direction sdot.
inline void el_frechet(ElOperators& op, const Eigen::VectorXd& sdot, const Eigen::VectorXd& s,
                       const SisParams& params, const KernelOperator& kernel) {
  const Eigen::Index m = s.size();
  const double beta = params.beta;
  const double alpha = params.alpha;
  op.G = op.N + beta * op.M.cwiseProduct(op.pull) - beta * kernel.apply_adjoint(op.M.cwiseProduct(s));
  op.delta_lambda = beta * sdot.cwiseProduct(op.pull) - beta * s.cwiseProduct(kernel.apply(sdot));
  op.delta_A.resize(m);
  op.O.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (op.degenerate[static_cast<std::size_t>(i)]) {
      op.delta_A[i] = 0.0;
      op.O[i] = 0.0;
      continue;
    }
    const double lam = op.lambda[i];
    const double A = op.A[i];
    const double c = alpha * (1.0 - s[i]);
    const double disc = sdot[i] * sdot[i] + 4.0 * alpha * lam * (1.0 - s[i]);
    const double inv_root = 1.0 / std::sqrt(disc);
    const double dlam = op.delta_lambda[i];
    const double dA_x = alpha * inv_root * (-lam * sdot[i] + (1.0 - s[i]) * dlam);
    op.delta_A[i] = dA_x;
    const double log_ratio = std::log(lam / A);
    const double bracket = 1.0 + c * lam / (A * A);
    op.O[i] = op.dA[i] * bracket * (dA_x / A - dlam / lam) +
              alpha * sdot[i] * log_ratio * bracket * inv_root * inv_root * inv_root *
                  ((1.0 - s[i]) * dlam - lam * sdot[i]) +
              alpha * op.dA[i] * log_ratio *
                  (sdot[i] * lam / (A * A) + 2.0 * (1.0 - s[i]) * lam / (A * A * A) * dA_x -
                   (1.0 - s[i]) / (A * A) * dlam);
  }
}

inline ElOperators el_operators(const Eigen::VectorXd& sdot, const Eigen::VectorXd& s,
                                const SisParams& params, const KernelOperator& kernel) {
  ElOperators op = el_partials(sdot, s, params, kernel);
  el_frechet(op, sdot, s, params, kernel);
  return op;
}

// ---------------------------------------------------------------------------
// Formula audit against variational finite differences

struct FormulaCheck {
  std::string name;
  double max_error = 0.0;  // max |analytic - oracle| / (1 + |oracle|)
  std::size_t samples = 0;
  bool passed = true;
};

struct FormulaAudit {
  std::vector<FormulaCheck> checks;
  double threshold = 1e-3;

  bool passed(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return c.passed;
    return true;
  }
  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }
  std::vector<std::string> discrepancies() const {
    std::vector<std::string> out;
    for (const auto& c : checks)
      if (!c.passed) {
        std::ostringstream os;
        os << c.name << ": max relative error " << c.max_error << " > " << threshold;
        out.push_back(os.str());
      }
    return out;
  }
};

namespace detail {

inline void record_check(FormulaCheck& c, double analytic, double oracle) {
  c.max_error = std::max(c.max_error, std::abs(analytic - oracle) / (1.0 + std::abs(oracle)));
  ++c.samples;
}

}  // namespace detail

/// Compares every closed-form derivative with its defining finite difference:
/// dL, d2L against sis_lagrangian; dA, d2A against sis_A; M and N against
/// partials of L in lambda and in s(theta); G against the directional
/// derivative of int L_theta dtheta; O against the s-difference of dL along
/// sdot. Samples are random smooth profiles with s in [0.05, 0.95].
inline FormulaAudit audit_el_formulas(const SisParams& params, const KernelOperator& kernel,
                                      std::size_t samples, std::uint64_t seed,
                                      double threshold = 1e-3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Eigen::Index m = static_cast<Eigen::Index>(kernel.size());
  FormulaAudit audit;
  audit.threshold = threshold;
  FormulaCheck c_dL{"dL/dsdot"}, c_d2L{"d2L/dsdot2"}, c_dA{"dA/dsdot"}, c_d2A{"d2A/dsdot2"},
      c_M{"M_theta"}, c_N{"N_theta"}, c_G{"G_theta"}, c_O{"O_theta"};

  auto smooth = [&](double lo, double hi) {
    const double a0 = unif(rng), a1 = unif(rng) - 0.5, a2 = unif(rng) - 0.5;
    const double ph1 = kTwoPi * unif(rng), ph2 = kTwoPi * unif(rng);
    Eigen::VectorXd v(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double th = kTwoPi * static_cast<double>(i) / static_cast<double>(m);
      const double u = 0.5 * a0 + 0.25 + 0.3 * a1 * std::cos(th + ph1) + 0.2 * a2 * std::cos(2 * th + ph2);
      v[i] = lo + (hi - lo) * std::clamp(u, 0.0, 1.0);
    }
    return v;
  };

  const double alpha = params.alpha;
  auto L_of = [&](double sd, double s, double lam) { return lagrangian_value(sd, s, lam, alpha); };
  auto total_L = [&](const Eigen::VectorXd& sd, const Eigen::VectorXd& s) {
    const Eigen::VectorXd lam = sis_lambda(kernel, params, s);
    double t = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) t += kernel.weights()[i] * L_of(sd[i], s[i], lam[i]);
    return t;
  };

  for (std::size_t k = 0; k < samples; ++k) {
    const Eigen::VectorXd s = smooth(0.05, 0.95);
    const Eigen::VectorXd sd = smooth(-1.5, 1.5);
    const ElOperators op = el_operators(sd, s, params, kernel);
    const auto i = static_cast<Eigen::Index>(unif(rng) * static_cast<double>(m)) % m;
    if (op.degenerate[static_cast<std::size_t>(i)]) continue;
    const double lam = op.lambda[i];

    const double h1 = 1e-5 * (1.0 + std::abs(sd[i]));
    const double l0 = L_of(sd[i], s[i], lam);
    const double lp = L_of(sd[i] + h1, s[i], lam), lm = L_of(sd[i] - h1, s[i], lam);
    detail::record_check(c_dL, op.dL[i], (lp - lm) / (2 * h1));
    const double h2 = 1e-4 * (1.0 + std::abs(sd[i]));
    const double lp2 = L_of(sd[i] + h2, s[i], lam), lm2 = L_of(sd[i] - h2, s[i], lam);
    detail::record_check(c_d2L, op.d2L[i], (lp2 - 2 * l0 + lm2) / (h2 * h2));

    auto A_of = [&](double x) { return sis_A(x, s[i], lam, alpha); };
    detail::record_check(c_dA, op.dA[i], (A_of(sd[i] + h1) - A_of(sd[i] - h1)) / (2 * h1));
    detail::record_check(c_d2A, op.d2A[i],
                         (A_of(sd[i] + h2) - 2 * A_of(sd[i]) + A_of(sd[i] - h2)) / (h2 * h2));

    const double hl = 1e-6 * lam;
    detail::record_check(c_M, op.M[i],
                         (L_of(sd[i], s[i], lam + hl) - L_of(sd[i], s[i], lam - hl)) / (2 * hl));
    // N: derivative in s(theta) through alpha (1 - s) only, lambda held fixed.
    const double hs = 1e-6;
    detail::record_check(c_N, op.N[i],
                         (L_of(sd[i], s[i] + hs, lam) - L_of(sd[i], s[i] - hs, lam)) / (2 * hs));

    const Eigen::VectorXd x = smooth(-1.0, 1.0);
    const double eps = 1e-6;
    const double directional = (total_L(sd, s + eps * x) - total_L(sd, s - eps * x)) / (2 * eps);
    detail::record_check(c_G, kernel.weights().cwiseProduct(x).dot(op.G), directional);

    const ElOperators up = el_partials(sd, s + eps * sd, params, kernel);
    const ElOperators dn = el_partials(sd, s - eps * sd, params, kernel);
    detail::record_check(c_O, op.O[i], (up.dL[i] - dn.dL[i]) / (2 * eps));
  }
  for (auto* c : {&c_dL, &c_d2L, &c_dA, &c_d2A, &c_M, &c_N, &c_G, &c_O}) {
    c->passed = c->max_error <= threshold;
    audit.checks.push_back(*c);
  }
  return audit;
}

// ---------------------------------------------------------------------------
// Discretized action

/// Pinned-endpoint path problem on a uniform time grid with K intervals.
struct PathProblem {
  std::vector<double> start;
  std::vector<double> end;
  double horizon = 1.0;
  std::size_t steps = 200;
  /// Optional initial path, (steps + 1) x M; linear interpolation otherwise.
  std::vector<std::vector<double>> initial;

  void validate(std::size_t m) const {
    if (start.size() != m || end.size() != m) throw ConfigError("path endpoints must match the grid size");
    if (!(horizon > 0.0)) throw ConfigError("path horizon must be positive");
    if (steps < 2) throw ConfigError("path needs at least two time intervals");
    for (const auto* v : {&start, &end})
      for (double x : *v)
        if (!(x > 0.0 && x < 1.0))
          throw ConfigError("path endpoints must lie strictly inside (0, 1)");
  }
  double dt() const { return horizon / static_cast<double>(steps); }
};

/// Midpoint discretization of the SIS action,
///   S = sum_k dt sum_i w_i L_i((s_{k+1} - s_k)/dt, (s_k + s_{k+1})/2),
/// as a function of the interior nodes s_1 .. s_{K-1}.
/// Which derivatives fall back to finite differences after the formula audit.
struct ObjectiveChoices {
  bool numeric_dL = false;
  bool numeric_MN = false;
};

class ActionObjective {
 public:
  using Choices = ObjectiveChoices;

  ActionObjective(const PathProblem& problem, const SisParams& params,
                  const KernelOperator& kernel, Choices choices = {})
      : problem_(problem), params_(params), kernel_(kernel), choices_(choices),
        m_(static_cast<Eigen::Index>(kernel.size())) {
    problem_.validate(kernel.size());
  }

  Eigen::Index size() const { return static_cast<Eigen::Index>(problem_.steps - 1) * m_; }
  Eigen::Index grid_size() const { return m_; }
  double dt() const { return problem_.dt(); }
  const PathProblem& problem() const { return problem_; }

  /// Node n of the full path (endpoints included) from the interior vector.
  Eigen::VectorXd node(const Eigen::VectorXd& x, std::size_t n) const {
    if (n == 0) return Eigen::Map<const Eigen::VectorXd>(problem_.start.data(), m_);
    if (n == problem_.steps) return Eigen::Map<const Eigen::VectorXd>(problem_.end.data(), m_);
    return x.segment(static_cast<Eigen::Index>(n - 1) * m_, m_);
  }

  Eigen::VectorXd initial_guess() const {
    Eigen::VectorXd x(size());
    const std::size_t K = problem_.steps;
    for (std::size_t n = 1; n < K; ++n) {
      for (Eigen::Index i = 0; i < m_; ++i) {
        double v;
        if (!problem_.initial.empty()) {
          v = problem_.initial[n][static_cast<std::size_t>(i)];
        } else {
          const double r = static_cast<double>(n) / static_cast<double>(K);
          v = (1.0 - r) * problem_.start[static_cast<std::size_t>(i)] + r * problem_.end[static_cast<std::size_t>(i)];
        }
        x[static_cast<Eigen::Index>(n - 1) * m_ + i] = v;
      }
    }
    return x;
  }

  /// Action value; fills `grad` when non-null. Returns +infinity when some
  /// node has lambda (1 - s) at or below the floor or an unreachable flow.
  double evaluate(const Eigen::VectorXd& x, Eigen::VectorXd* grad,
                  Eigen::MatrixXd* d2L_out = nullptr) const {
    const std::size_t K = problem_.steps;
    const double h = dt();
    const double alpha = params_.alpha;
    const double beta = params_.beta;
    const Eigen::VectorXd& w = kernel_.weights();
    if (grad) grad->setZero(size());
    if (d2L_out) d2L_out->resize(static_cast<Eigen::Index>(K), m_);

    double total = 0.0;
    Eigen::VectorXd prev_node = node(x, 0);
    Eigen::VectorXd p(m_), M(m_), N(m_), L(m_);
    for (std::size_t k = 0; k < K; ++k) {
      const Eigen::VectorXd next_node = node(x, k + 1);
      const Eigen::VectorXd v = (next_node - prev_node) / h;
      const Eigen::VectorXd mid = 0.5 * (prev_node + next_node);
      const Eigen::VectorXd pull = kernel_.apply(Eigen::VectorXd::Ones(m_) - mid);
      const Eigen::VectorXd lam = beta * mid.cwiseProduct(pull);
      for (Eigen::Index i = 0; i < m_; ++i) {
        // The Euler-Lagrange calculus needs lambda (1 - s) > floor; such
        // nodes are outside the admissible set.
        if (!(lam[i] > kDensityFloor) || !(lam[i] * (1.0 - mid[i]) > kDensityFloor) ||
            !(alpha * (1.0 - mid[i]) > kDensityFloor))
          return std::numeric_limits<double>::infinity();
        const double li = lagrangian_value(v[i], mid[i], lam[i], alpha);
        if (!std::isfinite(li)) return std::numeric_limits<double>::infinity();
        L[i] = li;
        if (!grad && !d2L_out) continue;
        const LocalPartials lp = local_partials(v[i], mid[i], lam[i], alpha);
        if (lp.degenerate) return std::numeric_limits<double>::infinity();
        p[i] = choices_.numeric_dL ? numeric_dL(v[i], mid[i], lam[i]) : lp.dL;
        if (choices_.numeric_MN) {
          M[i] = numeric_M(v[i], mid[i], lam[i]);
          N[i] = numeric_N(v[i], mid[i], lam[i]);
        } else {
          M[i] = lp.M;
          N[i] = lp.N;
        }
        if (d2L_out) (*d2L_out)(static_cast<Eigen::Index>(k), i) = lp.d2L;
      }
      total += h * w.dot(L);
      if (grad) {
        const Eigen::VectorXd G =
            N + beta * M.cwiseProduct(pull) - beta * kernel_.apply_adjoint(M.cwiseProduct(mid));
        // Slice k touches nodes k (left) and k + 1 (right).
        if (k >= 1) {
          auto seg = grad->segment(static_cast<Eigen::Index>(k - 1) * m_, m_);
          seg += w.cwiseProduct(-p + 0.5 * h * G);
        }
        if (k + 1 <= K - 1) {
          auto seg = grad->segment(static_cast<Eigen::Index>(k) * m_, m_);
          seg += w.cwiseProduct(p + 0.5 * h * G);
        }
      }
      prev_node = next_node;
    }
    return total;
  }

  /// Gradient divided by dt * w_i: the discrete Euler-Lagrange residual density.
  Eigen::VectorXd scaled_gradient(const Eigen::VectorXd& grad) const {
    Eigen::VectorXd g = grad;
    const Eigen::VectorXd& w = kernel_.weights();
    for (Eigen::Index j = 0; j < g.size(); ++j) g[j] /= dt() * w[j % m_];
    return g;
  }

  /// Full path as rows t_0 .. t_K.
  std::vector<std::vector<double>> full_path(const Eigen::VectorXd& x) const {
    std::vector<std::vector<double>> out(problem_.steps + 1);
    for (std::size_t n = 0; n <= problem_.steps; ++n) {
      const Eigen::VectorXd v = node(x, n);
      out[n].assign(v.data(), v.data() + v.size());
    }
    return out;
  }

 private:
  double numeric_dL(double sd, double s, double lam) const {
    const double h = 1e-6 * (1.0 + std::abs(sd));
    return (lagrangian_value(sd + h, s, lam, params_.alpha) -
            lagrangian_value(sd - h, s, lam, params_.alpha)) / (2 * h);
  }
  double numeric_M(double sd, double s, double lam) const {
    const double h = 1e-6 * lam;
    return (lagrangian_value(sd, s, lam + h, params_.alpha) -
            lagrangian_value(sd, s, lam - h, params_.alpha)) / (2 * h);
  }
  double numeric_N(double sd, double s, double lam) const {
    const double h = 1e-7;
    return (lagrangian_value(sd, s + h, lam, params_.alpha) -
            lagrangian_value(sd, s - h, lam, params_.alpha)) / (2 * h);
  }

  PathProblem problem_;
  SisParams params_;
  const KernelOperator& kernel_;
  Choices choices_;
  Eigen::Index m_;
};

/// Max over sampled coordinates of |analytic - central FD| / max(|grad|_inf, tiny).
inline double gradient_check(const ActionObjective& obj, const Eigen::VectorXd& x,
                             std::size_t samples, std::uint64_t seed, double h = 1e-6) {
  Eigen::VectorXd g;
  obj.evaluate(x, &g);
  const double scale = std::max(g.cwiseAbs().maxCoeff(), 1e-300);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, x.size() - 1);
  double worst = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    const Eigen::Index j = pick(rng);
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const double fd = (obj.evaluate(xp, nullptr) - obj.evaluate(xm, nullptr)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g[j]) / scale);
  }
  return worst;
}

/// Interior point for gradient_check away from stationarity: the initial
/// guess plus a smooth space-time bump of height `amplitude`, kept in (0, 1).
/// At a converged minimizer the gradient is at rounding level and the
/// relative check would only measure finite-difference noise.
inline Eigen::VectorXd gradient_check_point(const ActionObjective& obj, double amplitude = 0.03) {
  Eigen::VectorXd x = obj.initial_guess();
  const std::size_t K = obj.problem().steps;
  const Eigen::Index m = obj.grid_size();
  for (std::size_t n = 1; n < K; ++n)
    for (Eigen::Index i = 0; i < m; ++i) {
      const double t = std::sin(std::numbers::pi * static_cast<double>(n) / static_cast<double>(K));
      const double th = std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(m));
      double& v = x[static_cast<Eigen::Index>(n - 1) * m + i];
      v = std::clamp(v + amplitude * t * (0.5 + 0.5 * th), 0.01, 0.99);
    }
  return x;
}

// ---------------------------------------------------------------------------
// Euler-Lagrange residual

struct ElResidual {
  std::size_t steps = 0;
  std::size_t grid_size = 0;
  double dt = 0.0;
  std::vector<double> values;  // interior nodes 1 .. K-1, row-major
  double max_abs = 0.0;
  double min_d2L = std::numeric_limits<double>::infinity();
  bool any_degenerate = false;

  double at(std::size_t n, std::size_t i) const { return values[(n - 1) * grid_size + i]; }
};

/// Pointwise residual s'' d2L/dsdot2 + O - G at interior time nodes, with
/// centered differences for s' and s''.
inline ElResidual el_residual(const std::vector<std::vector<double>>& path, double dt,
                              const SisParams& params, const KernelOperator& kernel) {
  if (path.size() < 3) throw ConfigError("el_residual: need at least three time nodes");
  const std::size_t K = path.size() - 1;
  const auto m = static_cast<Eigen::Index>(kernel.size());
  ElResidual r;
  r.steps = K;
  r.grid_size = kernel.size();
  r.dt = dt;
  r.values.assign((K - 1) * r.grid_size, 0.0);
  for (std::size_t n = 1; n < K; ++n) {
    const Eigen::Map<const Eigen::VectorXd> sp(path[n + 1].data(), m), s(path[n].data(), m),
        sm(path[n - 1].data(), m);
    const Eigen::VectorXd sd = (sp - sm) / (2 * dt);
    const Eigen::VectorXd sdd = (sp - 2 * s + sm) / (dt * dt);
    const ElOperators op = el_operators(sd, s, params, kernel);
    r.any_degenerate = r.any_degenerate || op.any_degenerate;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (op.degenerate[static_cast<std::size_t>(i)]) continue;
      const double v = sdd[i] * op.d2L[i] + op.O[i] - op.G[i];
      r.values[(n - 1) * r.grid_size + static_cast<std::size_t>(i)] = v;
      r.max_abs = std::max(r.max_abs, std::abs(v));
      r.min_d2L = std::min(r.min_d2L, op.d2L[i]);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Minimization

struct MinimizeOptions {
  double tol_grad = 1e-6;  // sup-norm of the gradient density
  std::size_t max_iters = 20000;
  std::size_t memory = 12;
  std::size_t precondition_every = 50;
  double precondition_shift = 1.0;
  double box_floor = kDensityFloor;
  std::size_t audit_samples = 200;
  std::uint64_t seed = 1;
  std::size_t extra_starts = 0;
};

struct MinimizeResult {
  std::vector<std::vector<double>> path;
  double action = 0.0;
  double grad_norm = 0.0;  // sup-norm of the gradient density
  double el_residual_max = 0.0;
  double min_d2L = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  bool stalled = false;
  std::string warning;
  std::vector<double> history;
  std::vector<std::string> formula_discrepancies;
  std::size_t distinct_minima = 1;
};

namespace detail {

/// Per spatial node, tridiagonal time operator
///   w_i [ (1/dt) tridiag(-h_{n-1}, h_{n-1} + h_n, -h_n) + dt * shift ],
/// the sdot-sdot block of the action Hessian with a diagonal shift.
class TimePreconditioner {
 public:
  TimePreconditioner() = default;
  TimePreconditioner(const Eigen::MatrixXd& d2L, const Eigen::VectorXd& weights, double dt,
                     double shift)
      : K_(static_cast<std::size_t>(d2L.rows())), m_(weights.size()) {
    const std::size_t n_int = K_ - 1;
    diag_.resize(n_int * static_cast<std::size_t>(m_));
    off_.resize(n_int * static_cast<std::size_t>(m_));
    for (Eigen::Index i = 0; i < m_; ++i) {
      for (std::size_t n = 1; n <= n_int; ++n) {
        const double hl = d2L(static_cast<Eigen::Index>(n - 1), i);
        const double hr = d2L(static_cast<Eigen::Index>(n), i);
        diag_[idx(n - 1, i)] = weights[i] * ((hl + hr) / dt + dt * shift);
        off_[idx(n - 1, i)] = n < n_int ? -weights[i] * hr / dt : 0.0;
      }
    }
  }

  bool ready() const { return K_ > 0; }

  /// Solves P z = q (Thomas algorithm per spatial node).
  Eigen::VectorXd solve(const Eigen::VectorXd& q) const {
    const std::size_t n_int = K_ - 1;
    Eigen::VectorXd z(q.size());
    std::vector<double> c(n_int), d(n_int);
    for (Eigen::Index i = 0; i < m_; ++i) {
      double denom = diag_[idx(0, i)];
      c[0] = off_[idx(0, i)] / denom;
      d[0] = q[static_cast<Eigen::Index>(idx(0, i))] / denom;
      for (std::size_t n = 1; n < n_int; ++n) {
        const double a = off_[idx(n - 1, i)];
        denom = diag_[idx(n, i)] - a * c[n - 1];
        c[n] = off_[idx(n, i)] / denom;
        d[n] = (q[static_cast<Eigen::Index>(idx(n, i))] - a * d[n - 1]) / denom;
      }
      z[static_cast<Eigen::Index>(idx(n_int - 1, i))] = d[n_int - 1];
      for (std::size_t n = n_int - 1; n-- > 0;)
        z[static_cast<Eigen::Index>(idx(n, i))] = d[n] - c[n] * z[static_cast<Eigen::Index>(idx(n + 1, i))];
    }
    return z;
  }

 private:
  std::size_t idx(std::size_t n, Eigen::Index i) const {
    return n * static_cast<std::size_t>(m_) + static_cast<std::size_t>(i);
  }
  std::size_t K_ = 0;
  Eigen::Index m_ = 0;
  std::vector<double> diag_, off_;
};

inline Eigen::VectorXd project(Eigen::VectorXd x, double lo, double hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

struct LbfgsOutcome {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd grad;
  std::size_t iterations = 0;
  bool converged = false;
  bool stalled = false;
  std::vector<double> history;
};

/// Projected, preconditioned L-BFGS with Armijo backtracking. Falls back to
/// the preconditioned gradient, then the raw gradient, when a quasi-Newton
/// step fails to decrease the action.
inline LbfgsOutcome run_lbfgs(const ActionObjective& obj, Eigen::VectorXd x,
                              const MinimizeOptions& opts) {
  const double lo = opts.box_floor, hi = 1.0 - opts.box_floor;
  LbfgsOutcome out;
  x = project(std::move(x), lo, hi);
  Eigen::VectorXd g;
  Eigen::MatrixXd d2L;
  double f = obj.evaluate(x, &g, &d2L);
  if (!std::isfinite(f)) throw ConfigError("minimize_action: infinite action at the initial guess");
  out.history.push_back(f);

  std::deque<Eigen::VectorXd> S, Y;
  std::deque<double> rho;
  TimePreconditioner pre;
  std::size_t since_pre = opts.precondition_every;

  auto converged = [&](const Eigen::VectorXd& grad) {
    return obj.scaled_gradient(grad).cwiseAbs().maxCoeff() <= opts.tol_grad;
  };

  for (out.iterations = 0; out.iterations < opts.max_iters; ++out.iterations) {
    if (converged(g)) {
      out.converged = true;
      break;
    }
    if (since_pre >= opts.precondition_every) {
      obj.evaluate(x, nullptr, &d2L);
      pre = TimePreconditioner(d2L, Eigen::VectorXd::Ones(obj.grid_size()) / static_cast<double>(obj.grid_size()),
                               obj.dt(), opts.precondition_shift);
      S.clear(); Y.clear(); rho.clear();
      since_pre = 0;
    }
    ++since_pre;

    // Two-loop recursion with H0 = P^{-1}.
    Eigen::VectorXd q = g;
    std::vector<double> alpha(S.size());
    for (std::size_t k = S.size(); k-- > 0;) {
      alpha[k] = rho[k] * S[k].dot(q);
      q -= alpha[k] * Y[k];
    }
    Eigen::VectorXd r = pre.solve(q);
    for (std::size_t k = 0; k < S.size(); ++k) {
      const double b = rho[k] * Y[k].dot(r);
      r += S[k] * (alpha[k] - b);
    }

    bool accepted = false;
    Eigen::VectorXd x_new, g_new;
    double f_new = f;
    for (int attempt = 0; attempt < 3 && !accepted; ++attempt) {
      Eigen::VectorXd d = attempt == 0 ? Eigen::VectorXd(-r)
                        : attempt == 1 ? Eigen::VectorXd(-pre.solve(g))
                                       : Eigen::VectorXd(-g / g.cwiseAbs().maxCoeff() * 1e-2);
      if (g.dot(d) >= 0.0) continue;
      double t = 1.0;
      for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
        x_new = project(x + t * d, lo, hi);
        const double dec = g.dot(x_new - x);
        if (dec >= 0.0) continue;
        f_new = obj.evaluate(x_new, nullptr);
        if (std::isfinite(f_new) && f_new <= f + 1e-4 * dec) {
          accepted = true;
          break;
        }
      }
      if (!accepted && attempt == 0) {
        S.clear(); Y.clear(); rho.clear();
      }
    }
    if (!accepted) {
      out.stalled = true;
      break;
    }
    f_new = obj.evaluate(x_new, &g_new);
    const Eigen::VectorXd s_vec = x_new - x;
    const Eigen::VectorXd y_vec = g_new - g;
    const double sy = s_vec.dot(y_vec);
    if (sy > 1e-12 * s_vec.norm() * y_vec.norm()) {
      S.push_back(s_vec);
      Y.push_back(y_vec);
      rho.push_back(1.0 / sy);
      if (S.size() > opts.memory) {
        S.pop_front(); Y.pop_front(); rho.pop_front();
      }
    }
    x = std::move(x_new);
    g = std::move(g_new);
    f = f_new;
    out.history.push_back(f);
  }
  if (!out.converged && converged(g)) out.converged = true;
  out.x = std::move(x);
  out.value = f;
  out.grad = std::move(g);
  return out;
}

}  // namespace detail

/// Minimizes the discretized action with pinned endpoints. The closed-form
/// derivatives are audited first; any that disagree with their finite
/// difference oracle are replaced by the numerical derivative and listed in
/// `formula_discrepancies`.
inline MinimizeResult minimize_action(const PathProblem& problem, const SisParams& params,
                                      const KernelOperator& kernel,
                                      const MinimizeOptions& opts = {}) {
  problem.validate(kernel.size());
  const FormulaAudit audit = audit_el_formulas(params, kernel, opts.audit_samples, opts.seed);
  ActionObjective::Choices choices;
  choices.numeric_dL = !audit.passed("dL/dsdot");
  choices.numeric_MN = !audit.passed("M_theta") || !audit.passed("N_theta") || !audit.passed("G_theta");
  ActionObjective obj(problem, params, kernel, choices);

  MinimizeResult res;
  res.formula_discrepancies = audit.discrepancies();

  const Eigen::VectorXd x0 = obj.initial_guess();
  if (!std::isfinite(obj.evaluate(detail::project(x0, opts.box_floor, 1.0 - opts.box_floor), nullptr)))
    throw ConfigError("minimize_action: infinite action at the initial guess");
  detail::LbfgsOutcome best = detail::run_lbfgs(obj, x0, opts);

  if (opts.extra_starts > 0) {
    std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> minima{best.value};
    const std::size_t K = problem.steps;
    const Eigen::Index m = obj.grid_size();
    for (std::size_t st = 0; st < opts.extra_starts; ++st) {
      const double amp = 0.1 * gauss(rng), phase = kTwoPi * std::uniform_real_distribution<double>(0, 1)(rng);
      Eigen::VectorXd x = x0;
      for (std::size_t n = 1; n < K; ++n) {
        const double bump = std::sin(std::numbers::pi * static_cast<double>(n) / static_cast<double>(K));
        for (Eigen::Index i = 0; i < m; ++i) {
          const double th = kTwoPi * static_cast<double>(i) / static_cast<double>(m);
          x[static_cast<Eigen::Index>(n - 1) * m + i] += amp * bump * std::cos(th + phase);
        }
      }
      detail::LbfgsOutcome trial = detail::run_lbfgs(obj, x, opts);
      const bool distinct = std::none_of(minima.begin(), minima.end(), [&](double v) {
        return std::abs(v - trial.value) <= 1e-6 * (1.0 + std::abs(v));
      });
      if (distinct) minima.push_back(trial.value);
      if (trial.value < best.value) best = std::move(trial);
    }
    res.distinct_minima = minima.size();
  }

  res.path = obj.full_path(best.x);
  res.action = best.value;
  res.grad_norm = obj.scaled_gradient(best.grad).cwiseAbs().maxCoeff();
  res.iterations = best.iterations;
  res.converged = best.converged;
  res.stalled = best.stalled;
  res.history = std::move(best.history);
  if (!res.converged)
    res.warning = best.stalled ? "line search stalled before reaching tol_grad"
                               : "max_iters reached before tol_grad";
  const ElResidual el = el_residual(res.path, problem.dt(), params, kernel);
  res.el_residual_max = el.max_abs;
  res.min_d2L = el.min_d2L;
  return res;
}

// ---------------------------------------------------------------------------
// Endpoint presets and export

/// Parses `equilibrium`, `uniform:c` or `bump:center,width,depth`; the bump
/// lowers the equilibrium profile by depth * exp(-d^2 / (2 width^2)).
inline std::vector<double> endpoint_preset(const std::string& spec, const SpatialGrid& grid,
                                           const std::vector<double>& equilibrium) {
  auto numbers = [&](const std::string& body, std::size_t count) {
    std::vector<double> v;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
      std::size_t pos = 0;
      double x = 0.0;
      try {
        x = std::stod(item, &pos);
      } catch (const std::exception&) {
        throw ConfigError("malformed endpoint preset '" + spec + "'");
      }
      if (pos != item.size()) throw ConfigError("malformed endpoint preset '" + spec + "'");
      v.push_back(x);
    }
    if (v.size() != count) throw ConfigError("malformed endpoint preset '" + spec + "'");
    return v;
  };
  std::vector<double> out(grid.size);
  if (spec == "equilibrium") {
    out = equilibrium;
  } else if (spec.rfind("uniform:", 0) == 0) {
    const double c = numbers(spec.substr(8), 1)[0];
    std::fill(out.begin(), out.end(), c);
  } else if (spec.rfind("bump:", 0) == 0) {
    const auto v = numbers(spec.substr(5), 3);
    if (!(v[1] > 0.0)) throw ConfigError("bump width must be positive in '" + spec + "'");
    for (std::size_t i = 0; i < grid.size; ++i) {
      const double d = circle_distance(grid.nodes[i], v[0]);
      out[i] = equilibrium[i] - v[2] * std::exp(-d * d / (2.0 * v[1] * v[1]));
    }
  } else {
    throw ConfigError("unknown endpoint preset '" + spec + "'");
  }
  for (double x : out)
    if (!(x > 0.0 && x < 1.0))
      throw ConfigError("endpoint preset '" + spec + "' leaves the open interval (0, 1)");
  return out;
}

/// CSV `t,theta,s`.
inline void write_path_csv(std::ostream& os, const std::vector<std::vector<double>>& path,
                           double dt, const SpatialGrid& grid) {
  os.precision(17);
  os << "t,theta,s\n";
  for (std::size_t n = 0; n < path.size(); ++n)
    for (std::size_t i = 0; i < path[n].size(); ++i)
      os << dt * static_cast<double>(n) << ',' << grid.nodes[i] << ',' << path[n][i] << '\n';
}

}  // namespace gldp
