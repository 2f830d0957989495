#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "gldp/graphon.hpp"

using namespace gldp;

TEST(SampleNetwork, ConstantKernelEdgeDensityWithinBinomialBand) {
  // phi = 1: each ordered pair connected with probability J0 (one draw per unordered pair).
  const double j0 = 0.3;
  const std::size_t n = 400;
  const Network net = sample_network(constant_graphon(j0), n, 1.0, 7);
  const double pairs = n * (n - 1) / 2.0;
  const double edges = net.edges().size() / 2.0;
  const double sigma = std::sqrt(pairs * j0 * (1 - j0));
  EXPECT_NEAR(edges, pairs * j0, 3 * sigma);
}

TEST(SampleNetwork, ZeroProbabilitiesGiveEmptyGraph) {
  EdgeProbabilities zero{[](double, double) { return 0.0; }, [](double, double) { return 0.0; }};
  const Network net = sample_network(circle_graphon(1.0, 0.5), 100, 1.0, 1, zero);
  EXPECT_TRUE(net.edges().empty());
}

TEST(SampleNetwork, NoSelfLoopsAndSymmetric) {
  const Network net = sample_network(circle_graphon(0.5, 0.4), 200, 1.0, 2);
  for (const Edge& e : net.edges()) EXPECT_NE(e.j, e.k);
  std::set<std::pair<std::uint32_t, std::uint32_t>> pairs;
  for (const Edge& e : net.edges()) pairs.insert({e.j, e.k});
  for (const Edge& e : net.edges()) EXPECT_TRUE(pairs.count({e.k, e.j}));
}

TEST(SampleNetwork, SignedKernelProducesNegativeEdges) {
  const Network net = sample_network(circle_graphon(0.0, 0.8), 300, 1.0, 4);
  std::size_t neg = 0, pos = 0;
  for (const Edge& e : net.edges()) (e.weight > 0 ? pos : neg)++;
  EXPECT_GT(neg, 0u);
  EXPECT_GT(pos, 0u);
  EXPECT_NEAR(static_cast<double>(neg) / static_cast<double>(pos), 1.0, 0.1);
}

TEST(SampleNetwork, OverflowNamesThePair) {
  try {
    sample_network(constant_graphon(2.0), 10, 1.0, 1);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("(0, 1)"), std::string::npos);
  }
}

TEST(SampleNetwork, DeterministicGivenSeed) {
  const auto spec = circle_graphon(1.0, 0.5);
  EXPECT_EQ(sample_network(spec, 300, 0.5, 9), sample_network(spec, 300, 0.5, 9));
  EXPECT_FALSE(sample_network(spec, 300, 0.5, 9) == sample_network(spec, 300, 0.5, 10));
}

TEST(SampleNetwork, PowerLawDegreeProfile) {
  // Expected degree of node j: phi sum_k (1-b)^2 (x_j x_k)^{-b}, proportional to x_j^{-b}.
  const double b = 0.3;
  const std::size_t n = 4000;
  const auto spec = power_law_graphon(b, 0.6, n);
  const double phi = 1.0 / spec.bound;  // keeps phi * J <= 1 everywhere
  const Network net = sample_network(spec, n, phi, 5);
  const auto deg = net.out_degrees();
  const auto& x = net.positions();
  double sum_k = 0.0;
  for (double xk : x) sum_k += std::pow(xk, -b);
  // Compare block-averaged degrees with the exact expectation.
  const std::size_t block = 400;
  for (std::size_t start = 0; start < n; start += block) {
    double emp = 0.0, expect = 0.0;
    for (std::size_t j = start; j < start + block; ++j) {
      emp += static_cast<double>(deg[j]);
      expect += phi * (1 - b) * (1 - b) * std::pow(x[j], -b) * (sum_k - std::pow(x[j], -b));
    }
    EXPECT_NEAR(emp / expect, 1.0, 4.0 / std::sqrt(expect)) << "block at " << start;
  }
  // Degree ratio between first and last block follows x^{-b}.
  double d_lo = 0.0, d_hi = 0.0;
  for (std::size_t j = 0; j < block; ++j) d_lo += deg[j], d_hi += deg[n - 1 - j];
  EXPECT_GT(d_lo, d_hi);
}

TEST(PowerLaw, ParameterDomain) {
  EXPECT_THROW(power_law_graphon(1.0, 1.2, 10), ConfigError);
  EXPECT_THROW(power_law_graphon(0.5, 0.4, 10), ConfigError);
  EXPECT_THROW(power_law_graphon(0.0, 0.4, 10), ConfigError);
  EXPECT_NO_THROW(power_law_graphon(0.3, 0.6, 10));
}

TEST(KernelAudit, BoundsAndLipschitz) {
  auto a = audit_kernel(circle_graphon(1.0, 0.5));
  EXPECT_TRUE(a.within_bound);
  EXPECT_TRUE(a.lipschitz_ok);
  EXPECT_NEAR(a.max_abs, 1.5, 1e-12);
  auto sw = audit_kernel(small_world_graphon(1.0, 0.2, 0.5));
  EXPECT_TRUE(sw.within_bound);
  EXPECT_TRUE(sw.lipschitz_ok);  // exempt: discontinuous kernel
  GraphonSpec bad = circle_graphon(1.0, 0.5);
  bad.bound = 1.0;
  EXPECT_FALSE(audit_kernel(bad).within_bound);
}

TEST(EtaDiagnostic, DenseExactCaseIsZero) {
  // J = 1 and phi = 1: every pair present, so J^{jk}/phi - J = 0 off the diagonal;
  // the diagonal contributes |0 - 1| = 1 since self-couplings are never drawn.
  const std::size_t n = 60;
  const Network net = sample_network(constant_graphon(1.0), n, 1.0, 1);
  const auto d = eta_diagnostic(net, constant_graphon(1.0));
  for (double e : d.eta) EXPECT_NEAR(e, 1.0, 1e-12);
}

TEST(EtaDiagnostic, EmptyGraphGivesNTimesJ0) {
  const std::size_t n = 40;
  const double j0 = 0.7;
  Network empty(constant_graphon(j0).canonical_positions(n), {}, 1.0, 0, "constant", true);
  const auto d = eta_diagnostic(empty, constant_graphon(j0));
  for (double e : d.eta) EXPECT_NEAR(e, n * j0, 1e-9);
}

TEST(EtaDiagnostic, MeanEtaMatchesBernoulliExpectation) {
  // Off the diagonal, E|B/phi - J| = 2 J (1 - phi J) for B ~ Bernoulli(phi J);
  // the missing self-coupling adds J(x, x).
  const auto spec = circle_graphon(1.0, 0.5);
  for (std::size_t n : {500u, 2000u}) {
    const double phi = std::pow(static_cast<double>(n), -0.3);
    const auto x = spec.canonical_positions(n);
    double expect = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) {
        const double J = spec(x[j], x[k]);
        expect += j == k ? J : 2.0 * J * (1.0 - phi * J);
      }
    expect /= static_cast<double>(n);
    const auto d = eta_diagnostic(sample_network(spec, n, phi, 3), spec);
    EXPECT_NEAR(d.mean_eta / expect, 1.0, 0.02) << "N = " << n;
  }
}

TEST(EtaDiagnostic, SignTrickDominatesRandomSigns) {
  const auto spec = circle_graphon(1.0, 0.5);
  const std::size_t n = 200;
  const Network net = sample_network(spec, n, 0.3, 9);
  const auto d = eta_diagnostic(net, spec);
  std::vector<std::vector<double>> dense(n, std::vector<double>(n));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k) dense[j][k] = -spec(net.position(j), net.position(k));
  for (const auto& e : net.edges()) dense[e.j][e.k] += e.weight / net.phi();
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> sign(-1, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t j = static_cast<std::size_t>(trial) % n;
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) sum += dense[j][k] * sign(rng);
    EXPECT_LE(std::abs(sum), d.eta[j] + 1e-9);
  }
}

TEST(NetworkIo, RoundTripAndHeader) {
  const Network net = sample_network(constant_graphon(0.5), 30, 1.0, 12);
  std::ostringstream os;
  write_network(os, net);
  EXPECT_EQ(os.str().rfind("30 1 12 constant\n", 0), 0u);
  std::istringstream is(os.str());
  EXPECT_EQ(read_network(is), net);

  Network custom({0.1, 0.5, 0.9}, {{0, 2, -1}}, 0.5, 4, "custom", false);
  std::ostringstream os2;
  write_network(os2, custom);
  std::istringstream is2(os2.str());
  EXPECT_EQ(read_network(is2), custom);
}

TEST(NetworkIo, MalformedInputIsRejected) {
  std::istringstream bad_header("abc\n");
  EXPECT_THROW(read_network(bad_header), ConfigError);
  std::istringstream bad_edge("3 1 0 constant\n0 5 1\n");
  EXPECT_THROW(read_network(bad_edge), ConfigError);
  std::istringstream bad_weight("3 1 0 constant\n0 1 2\n");
  EXPECT_THROW(read_network(bad_weight), ConfigError);
}
