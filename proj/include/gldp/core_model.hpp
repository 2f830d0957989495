#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "gldp/common.hpp"
#include "gldp/network.hpp"

namespace gldp {

using State = std::size_t;

/// Finite state space with ordered labels.
class StateSpace {
 public:
  explicit StateSpace(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.size() < 2) throw ConfigError("state space needs at least two states");
    std::unordered_set<std::string> seen(labels_.begin(), labels_.end());
    if (seen.size() != labels_.size()) throw ConfigError("state labels must be unique");
  }

  static StateSpace sis() { return StateSpace({"S", "I"}); }

  std::size_t size() const { return labels_.size(); }
  const std::string& label(State s) const { return labels_.at(s); }
  const std::vector<std::string>& labels() const { return labels_; }

  State index_of(const std::string& label) const {
    for (std::size_t i = 0; i < labels_.size(); ++i)
      if (labels_[i] == label) return i;
    throw ConfigError("unknown state label '" + label + "'");
  }

  friend bool operator==(const StateSpace&, const StateSpace&) = default;

 private:
  std::vector<std::string> labels_;
};

/// Per-state field components w_zeta.
using FieldVector = std::vector<double>;

/// Transition-rate family f_(to)(position, from, field).
///
/// Implementations must return exactly 0 for to == from.
class RateFamily {
 public:
  virtual ~RateFamily() = default;

  virtual const StateSpace& states() const = 0;

  virtual double rate(State to, double position, State from,
                      std::span<const double> field) const = 0;

  /// Declared bounds c_f <= f <= C_f for off-diagonal transitions.
  virtual double lower_bound() const = 0;
  virtual double upper_bound() const = 0;
  virtual double lipschitz() const = 0;

  /// True when the family satisfies 0 < c_f everywhere on its domain.
  virtual bool bounded_below() const = 0;

  /// Sum of outgoing rates from `from`.
  double total_out(double position, State from, std::span<const double> field) const {
    double sum = 0.0;
    for (State to = 0; to < states().size(); ++to)
      if (to != from) sum += rate(to, position, from, field);
    return sum;
  }
};

struct SisParams {
  double beta = 1.0;
  double alpha = 1.0;

  void validate() const {
    if (!(beta >= 0.0)) throw ConfigError("SIS beta must be nonnegative");
    if (!(alpha > 0.0)) throw ConfigError("SIS alpha must be positive");
  }
};

inline constexpr State kSusceptible = 0;
inline constexpr State kInfected = 1;

/// SIS rates: S -> I at beta * w_I, I -> S at alpha.
///
/// The infection rate vanishes when w_I = 0, so bounded_below() is false.
class SisRates final : public RateFamily {
 public:
  explicit SisRates(SisParams params, double field_bound = 1.0)
      : params_(params), field_bound_(field_bound), states_(StateSpace::sis()) {
    params_.validate();
  }

  const StateSpace& states() const override { return states_; }

  double rate(State to, double /*position*/, State from,
              std::span<const double> field) const override {
    if (to == kInfected && from == kSusceptible) return params_.beta * field[kInfected];
    if (to == kSusceptible && from == kInfected) return params_.alpha;
    return 0.0;
  }

  double lower_bound() const override { return 0.0; }
  double upper_bound() const override {
    return std::max(params_.alpha, params_.beta * field_bound_);
  }
  double lipschitz() const override { return params_.beta; }
  bool bounded_below() const override { return false; }

  const SisParams& params() const { return params_; }

 private:
  SisParams params_;
  double field_bound_;
  StateSpace states_;
};

/// Field-independent rates from a |Gamma| x |Gamma| matrix (diagonal ignored).
class ConstantRates final : public RateFamily {
 public:
  ConstantRates(StateSpace states, std::vector<std::vector<double>> matrix)
      : states_(std::move(states)), matrix_(std::move(matrix)) {
    const std::size_t n = states_.size();
    if (matrix_.size() != n) throw ConfigError("rate matrix has wrong size");
    lo_ = std::numeric_limits<double>::infinity();
    hi_ = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (matrix_[i].size() != n) throw ConfigError("rate matrix has wrong size");
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        if (!(matrix_[i][j] >= 0.0)) throw ConfigError("rates must be nonnegative");
        lo_ = std::min(lo_, matrix_[i][j]);
        hi_ = std::max(hi_, matrix_[i][j]);
      }
    }
  }

  const StateSpace& states() const override { return states_; }

  /// matrix[from][to]
  double rate(State to, double, State from, std::span<const double>) const override {
    return to == from ? 0.0 : matrix_[from][to];
  }

  double lower_bound() const override { return lo_; }
  double upper_bound() const override { return hi_; }
  double lipschitz() const override { return 0.0; }
  bool bounded_below() const override { return lo_ > 0.0; }

 private:
  StateSpace states_;
  std::vector<std::vector<double>> matrix_;
  double lo_;
  double hi_;
};

inline std::shared_ptr<const SisRates> sis_rates(SisParams params, double field_bound = 1.0) {
  return std::make_shared<const SisRates>(params, field_bound);
}

/// Local field w^j_beta = (N phi_N)^{-1} sum_k J^{jk} chi{sigma^k = beta}.
inline FieldVector local_field(std::size_t node, const Network& network,
                               std::span<const State> config, std::size_t num_states) {
  if (node >= network.size()) throw std::out_of_range("local_field: node index out of range");
  if (config.size() != network.size())
    throw std::invalid_argument("local_field: configuration length differs from N");
  FieldVector w(num_states, 0.0);
  const auto& edges = network.edges();
  auto first = std::lower_bound(edges.begin(), edges.end(),
                                Edge{static_cast<std::uint32_t>(node), 0, 0});
  for (auto it = first; it != edges.end() && it->j == node; ++it)
    w[config[it->k]] += it->weight;
  for (double& v : w) v *= network.field_unit();
  return w;
}

}  // namespace gldp
