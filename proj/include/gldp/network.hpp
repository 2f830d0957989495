#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gldp/common.hpp"

namespace gldp {

/// Coupling J^{jk} in {-1, +1}: node k influences node j.
struct Edge {
  std::uint32_t j = 0;
  std::uint32_t k = 0;
  std::int8_t weight = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge& a, const Edge& b) {
    if (a.j != b.j) return a.j <=> b.j;
    return a.k <=> b.k;
  }
};

/// A sampled network: positions, sparse signed adjacency and scale phi_N.
///
/// phi is the edge-probability scale, P(J^{jk} = +-1) = phi * p_+-(x^j, x^k),
/// so the expected degree is of order N * phi and the local field is
/// w^j = (N phi)^{-1} sum_k J^{jk} chi{sigma^k = beta}.
class Network {
 public:
  Network() = default;

  Network(std::vector<double> positions, std::vector<Edge> edges, double phi,
          std::uint64_t seed, std::string family, bool canonical_positions)
      : positions_(std::move(positions)),
        edges_(std::move(edges)),
        phi_(phi),
        seed_(seed),
        family_(std::move(family)),
        canonical_(canonical_positions) {
    if (positions_.size() < 2) throw ConfigError("network needs N >= 2");
    if (!(phi_ > 0.0)) throw ConfigError("phi_N must be positive");
    if (!std::is_sorted(positions_.begin(), positions_.end()))
      throw ConfigError("node positions must be sorted ascending");
    std::sort(edges_.begin(), edges_.end());
    const auto n = static_cast<std::uint32_t>(positions_.size());
    for (const Edge& e : edges_) {
      if (e.j >= n || e.k >= n) throw ConfigError("edge index out of range");
      if (e.weight != 1 && e.weight != -1) throw ConfigError("edge weight must be +-1");
    }
    build_influence_lists();
  }

  std::size_t size() const { return positions_.size(); }
  double phi() const { return phi_; }
  std::uint64_t seed() const { return seed_; }
  const std::string& family() const { return family_; }
  bool canonical_positions() const { return canonical_; }
  const std::vector<double>& positions() const { return positions_; }
  double position(std::size_t j) const { return positions_[j]; }
  const std::vector<Edge>& edges() const { return edges_; }

  /// 1 / (N phi_N), the weight of one coupling in a local field.
  double field_unit() const { return 1.0 / (static_cast<double>(size()) * phi_); }

  /// Nodes j with J^{jk} != 0, i.e. those whose field changes when k flips.
  struct Influence {
    std::uint32_t target;
    std::int8_t weight;
  };
  std::span<const Influence> influenced_by(std::size_t k) const {
    return {influence_.data() + offsets_[k], influence_.data() + offsets_[k + 1]};
  }

  std::vector<std::size_t> out_degrees() const {
    std::vector<std::size_t> deg(size(), 0);
    for (const Edge& e : edges_) ++deg[e.j];
    return deg;
  }

  std::size_t max_degree() const {
    auto d = out_degrees();
    return d.empty() ? 0 : *std::max_element(d.begin(), d.end());
  }

  friend bool operator==(const Network& a, const Network& b) {
    return a.positions_ == b.positions_ && a.edges_ == b.edges_ && a.phi_ == b.phi_ &&
           a.seed_ == b.seed_ && a.family_ == b.family_;
  }

 private:
  void build_influence_lists() {
    offsets_.assign(size() + 1, 0);
    for (const Edge& e : edges_) ++offsets_[e.k + 1];
    for (std::size_t i = 0; i < size(); ++i) offsets_[i + 1] += offsets_[i];
    influence_.resize(edges_.size());
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (const Edge& e : edges_) influence_[fill[e.k]++] = {e.j, e.weight};
  }

  std::vector<double> positions_;
  std::vector<Edge> edges_;
  double phi_ = 1.0;
  std::uint64_t seed_ = 0;
  std::string family_;
  bool canonical_ = true;
  std::vector<std::size_t> offsets_;
  std::vector<Influence> influence_;
};

}  // namespace gldp
