#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gldp/graphon.hpp"
#include "gldp/meanfield.hpp"

using namespace gldp;

namespace {

std::vector<std::vector<double>> sis_init(const SpatialGrid& g, const std::function<double(double)>& s0) {
  std::vector<double> s(g.size);
  for (std::size_t i = 0; i < g.size; ++i) s[i] = s0(g.nodes[i]);
  return sis_density(s);
}

}  // namespace

TEST(FieldFromDensity, ConstantKernelConstantDensity) {
  const auto g = SpatialGrid::circle(32);
  KernelOperator k(g, constant_graphon(1.7).kernel);
  std::vector<std::vector<double>> nu{std::vector<double>(32, 0.6), std::vector<double>(32, 0.4)};
  for (const auto& w : field_from_density(k, nu)) EXPECT_NEAR(w[kInfected], 1.7 * 0.4, 1e-14);
}

TEST(FieldFromDensity, MeanZeroKernelGivesZeroField) {
  const auto g = SpatialGrid::circle(32);
  KernelOperator k(g, circle_graphon(0.0, 1.0).kernel);
  std::vector<std::vector<double>> nu{std::vector<double>(32, 0.7), std::vector<double>(32, 0.3)};
  for (const auto& w : field_from_density(k, nu)) EXPECT_NEAR(w[kInfected], 0.0, 1e-14);
}

TEST(FieldFromDensity, ConvergesUnderRefinement) {
  // Non-smooth kernel (small world) makes the quadrature error visible; the
  // error against a fine-grid reference must shrink under refinement.
  auto spec = small_world_graphon(1.0, 0.2, 1.0);
  auto density = [](double x) { return 0.5 + 0.3 * std::sin(x) + 0.1 * std::cos(3 * x); };
  auto field_at_zero = [&](std::size_t m) {
    const auto g = SpatialGrid::circle(m);
    KernelOperator k(g, spec.kernel);
    std::vector<std::vector<double>> nu(2, std::vector<double>(m));
    for (std::size_t i = 0; i < m; ++i) nu[1][i] = density(g.nodes[i]), nu[0][i] = 1 - nu[1][i];
    return field_from_density(k, nu)[0][kInfected];
  };
  // Exact: int_{-1}^{1} rho + 0.2 * int outside, normalised by 2 pi.
  auto F = [](double x) { return 0.5 * x - 0.3 * std::cos(x) + 0.1 / 3 * std::sin(3 * x); };
  const double inside = F(1.0) - F(-1.0);
  const double total = F(kTwoPi) - F(0.0);
  const double exact = (inside + 0.2 * (total - inside)) / kTwoPi;
  const double e1 = std::abs(field_at_zero(64) - exact);
  const double e2 = std::abs(field_at_zero(256) - exact);
  EXPECT_LT(e2, e1);
  EXPECT_LT(e2, 1e-2);

  // Smooth kernel: spectral accuracy, exact in closed form.
  const auto g = SpatialGrid::circle(16);
  KernelOperator k(g, circle_graphon(1.0, 0.5).kernel);
  std::vector<std::vector<double>> nu(2, std::vector<double>(16));
  for (std::size_t i = 0; i < 16; ++i) nu[1][i] = 0.5 + 0.3 * std::sin(g.nodes[i]), nu[0][i] = 1 - nu[1][i];
  const auto w = field_from_density(k, nu);
  for (std::size_t i = 0; i < 16; ++i)
    EXPECT_NEAR(w[i][kInfected], 0.5 + 0.5 * 0.5 * 0.3 * std::sin(g.nodes[i]), 1e-14);
}

TEST(Evolve, ConstantKernelReducesToScalarOde) {
  const double beta = 2.0, alpha = 1.0, j0 = 1.0, T = 3.0, dt = 0.01;
  const auto g = SpatialGrid::circle(8);
  KernelOperator k(g, constant_graphon(j0).kernel);
  const auto res = evolve(g, k, SisRates({beta, alpha}), sis_init(g, [](double) { return 0.9; }), T, dt);
  // Scalar logistic-type ODE s' = (1 - s)(alpha - beta J0 s), solved in closed form:
  // with u = 1 - s, u' = u (beta J0 - alpha - beta J0 u), a logistic equation.
  const double r = beta * j0 - alpha, K = r / (beta * j0);
  auto u = [&](double t) { const double u0 = 0.1; return K / (1 + (K / u0 - 1) * std::exp(-r * t)); };
  for (std::size_t n = 0; n <= res.density.steps; n += 50)
    for (std::size_t i = 0; i < 8; ++i)
      EXPECT_NEAR(res.density.at(n, kSusceptible, i), 1 - u(res.density.time(n)), 1e-9);
}

TEST(Evolve, EndemicEquilibrium) {
  const double beta = 2.0, alpha = 1.0, j0 = 1.0;
  const auto g = SpatialGrid::circle(16);
  KernelOperator k(g, constant_graphon(j0).kernel);
  const auto s = sis_equilibrium(g, k, {beta, alpha}, std::vector<double>(16, 0.9));
  for (double v : s) EXPECT_NEAR(v, alpha / (beta * j0), 1e-10);
}

TEST(Evolve, DiseaseFreeIsStationary) {
  const auto g = SpatialGrid::circle(16);
  KernelOperator k(g, circle_graphon(1.0, 0.5).kernel);
  const auto res = evolve(g, k, SisRates({2.0, 1.0}), sis_init(g, [](double) { return 1.0; }), 1.0, 0.01);
  for (double v : res.density.slice(res.density.steps, kSusceptible)) EXPECT_EQ(v, 1.0);
}

TEST(Evolve, PureRecoveryClosedForm) {
  const auto g = SpatialGrid::circle(16);
  KernelOperator k(g, circle_graphon(1.0, 0.5).kernel);
  auto s0 = [](double x) { return 0.5 + 0.3 * std::cos(x); };
  // beta must be positive; 1e-300 makes infection numerically absent.
  const auto res = evolve(g, k, SisRates({1e-300, 0.7}), sis_init(g, s0), 2.0, 0.01);
  for (std::size_t n = 0; n <= res.density.steps; n += 20)
    for (std::size_t i = 0; i < 16; ++i)
      EXPECT_NEAR(res.density.at(n, kSusceptible, i),
                  1 - (1 - s0(g.nodes[i])) * std::exp(-0.7 * res.density.time(n)), 1e-10);
}

TEST(Evolve, PositivityNormalizationAndFluxBalance) {
  const auto g = SpatialGrid::circle(32);
  KernelOperator k(g, circle_graphon(1.0, 0.5).kernel);
  auto run = [&](double dt) {
    return evolve(g, k, SisRates({2.0, 1.0}), sis_init(g, [](double x) { return 0.85 - 0.1 * std::cos(x); }), 2.0, dt);
  };
  const auto coarse = run(0.02), fine = run(0.01);
  EXPECT_LE(coarse.max_normalization_drift, 1e-12);
  EXPECT_GT(coarse.min_density, 0.0);
  const double d1 = flux_balance_defect(coarse), d2 = flux_balance_defect(fine);
  EXPECT_LT(d1, 1e-7);
  // Fourth-order quadrature of fourth-order fluxes: halving dt cuts the defect ~16x.
  EXPECT_GT(d1 / d2, 8.0);
}

TEST(Evolve, RejectsBadInput) {
  const auto g = SpatialGrid::circle(8);
  KernelOperator k(g, constant_graphon(1.0).kernel);
  SisRates r({1, 1});
  EXPECT_THROW(evolve(g, k, r, sis_init(g, [](double) { return 0.5; }), 1.0, 0.3), ConfigError);
  auto bad = sis_init(g, [](double) { return 0.5; });
  bad[0][0] = 0.9;
  EXPECT_THROW(evolve(g, k, r, bad, 1.0, 0.1), ConfigError);
  EXPECT_THROW(SpatialGrid::circle(1), ConfigError);
}

TEST(Output, DensityAndFluxCsvHeaders) {
  const auto g = SpatialGrid::circle(4);
  KernelOperator k(g, constant_graphon(1.0).kernel);
  const auto res = evolve(g, k, SisRates({2, 1}), sis_init(g, [](double) { return 0.8; }), 0.2, 0.1);
  std::ostringstream d, f;
  write_density_csv(d, res.density, g, StateSpace::sis());
  write_limit_flux_csv(f, res.flux, g, StateSpace::sis());
  EXPECT_EQ(d.str().rfind("t,alpha,theta,value\n", 0), 0u);
  EXPECT_EQ(f.str().rfind("t,channel,theta,value\n", 0), 0u);
}
