#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gldp/common.hpp"
#include "gldp/core_model.hpp"
#include "gldp/graphon.hpp"

namespace gldp {

using Json = nlohmann::json;

/// Defaults for every recognised key. Unknown keys in a config file or an
/// override are rejected, so typos cannot silently fall back to a default.
inline Json default_config() {
  return Json::parse(R"({
    "model": {
      "beta": 2.0,
      "alpha": 1.0,
      "init": "cosine:0.15,0.1"
    },
    "graphon": {
      "family": "inhomogeneous-circle",
      "j0": 1.0,
      "a": 1.0,
      "b": 0.5,
      "power_beta": 0.3,
      "power_gamma": 0.6,
      "high": 1.5,
      "low": 0.5,
      "d0": 1.0,
      "N": 1000,
      "degree_exponent": 0.7,
      "symmetric": true
    },
    "grid": {
      "M": 64,
      "meanfield_M": 512,
      "K": 200,
      "dt": 0.0025,
      "T": 5.0
    },
    "run": {
      "replicas": 1,
      "seed": 1,
      "threads": 1,
      "N_sweep": [500, 1000, 2000],
      "snapshots": 51,
      "start": "equilibrium",
      "end": "bump:3.141592653589793,0.5,0.2",
      "tol_grad": 1e-6,
      "max_iters": 20000,
      "extra_starts": 0,
      "ldp_a": 1.2,
      "ldp_N": [250, 500, 1000, 2000],
      "ldp_tolerance": 2e-3
    }
  })");
}

namespace detail {

inline void merge_known(Json& base, const Json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError(path.empty() ? "config root must be an object" : path + ": expected a section");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError(key + ": unknown key");
    Json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_known(slot, it.value(), key);
    } else {
      const bool numeric_ok = slot.is_number() && it.value().is_number();
      if (slot.type() != it.value().type() && !numeric_ok)
        throw ConfigError(key + ": expected " + std::string(slot.type_name()) + ", got " +
                          std::string(it.value().type_name()));
      slot = it.value();
    }
  }
}

}  // namespace detail

/// Applies `section.key=value`; the value is parsed as JSON when possible and
/// taken as a string otherwise.
inline void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
  detail::merge_known(config, patch, "");
}

inline Json load_config(const std::string& file, const std::vector<std::string>& overrides) {
  Json config = default_config();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError(file + ": cannot open config file");
    Json user;
    try {
      user = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ConfigError(file + ": " + e.what());
    }
    try {
      detail::merge_known(config, user, "");
    } catch (const ConfigError& e) {
      throw ConfigError(file + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(config, o);
  return config;
}

/// Initial infected probability p_I(theta) from `uniform:p` or `cosine:mean,amp`.
inline std::function<double(double)> init_profile(const std::string& spec) {
  auto numbers = [&](const std::string& body) {
    std::vector<double> v;
    std::stringstream ss(body);
    for (std::string item; std::getline(ss, item, ',');) {
      std::size_t pos = 0;
      double x = 0.0;
      try {
        x = std::stod(item, &pos);
      } catch (const std::exception&) {
        throw ConfigError("model.init: malformed profile '" + spec + "'");
      }
      if (pos != item.size()) throw ConfigError("model.init: malformed profile '" + spec + "'");
      v.push_back(x);
    }
    return v;
  };
  if (spec.rfind("uniform:", 0) == 0) {
    const auto v = numbers(spec.substr(8));
    if (v.size() != 1 || v[0] < 0.0 || v[0] > 1.0)
      throw ConfigError("model.init: uniform probability must lie in [0, 1]");
    const double p = v[0];
    return [p](double) { return p; };
  }
  if (spec.rfind("cosine:", 0) == 0) {
    const auto v = numbers(spec.substr(7));
    if (v.size() != 2 || v[0] - std::abs(v[1]) < 0.0 || v[0] + std::abs(v[1]) > 1.0)
      throw ConfigError("model.init: cosine profile must stay inside [0, 1]");
    const double mean = v[0], amp = v[1];
    return [mean, amp](double x) { return mean + amp * std::cos(x); };
  }
  throw ConfigError("model.init: unknown profile '" + spec + "'");
}

/// Typed, validated view of a resolved config.
struct ExperimentConfig {
  Json resolved;
  SisParams sis;
  std::string init;
  std::string family;
  std::size_t N = 0;
  double degree_exponent = 0.7;
  std::size_t M = 64;
  std::size_t meanfield_M = 512;
  std::size_t K = 200;
  double dt = 0.0025;
  double T = 5.0;
  std::size_t replicas = 1;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::vector<std::size_t> N_sweep;
  std::size_t snapshots = 51;
  std::string start, end;
  double tol_grad = 1e-6;
  std::size_t max_iters = 20000;
  std::size_t extra_starts = 0;
  double ldp_a = 1.2;
  std::vector<std::size_t> ldp_N;
  double ldp_tolerance = 2e-3;

  /// phi_N = N^{exponent - 1}: the mean degree grows like N^{exponent}.
  /// The unbounded power-law kernel is capped so that phi_N J <= 1 on the
  /// sampled positions.
  double phi(std::size_t n) const {
    const double p = std::pow(static_cast<double>(n), degree_exponent - 1.0);
    if (family != "power-law") return p;
    return std::min(p, 1.0 / graphon(n).bound);
  }

  GraphonSpec graphon(std::size_t n) const {
    const Json& g = resolved["graphon"];
    GraphonSpec spec;
    switch (graphon_family_from_string(family)) {
      case GraphonFamily::kConstant: spec = constant_graphon(g["j0"].get<double>()); break;
      case GraphonFamily::kInhomogeneousCircle:
        spec = circle_graphon(g["a"].get<double>(), g["b"].get<double>());
        break;
      case GraphonFamily::kPowerLaw:
        spec = power_law_graphon(g["power_beta"].get<double>(), g["power_gamma"].get<double>(), n);
        break;
      case GraphonFamily::kSmallWorld:
        spec = small_world_graphon(g["high"].get<double>(), g["low"].get<double>(), g["d0"].get<double>());
        break;
      case GraphonFamily::kCustom: throw ConfigError("graphon.family: custom kernels need the library API");
    }
    spec.symmetric = g["symmetric"].get<bool>();
    return spec;
  }

  /// Kernel for continuum solvers; those run on the circle only.
  Kernel circle_kernel() const {
    if (family == "power-law") throw ConfigError("graphon.family: continuum solvers need a circle kernel");
    return graphon(N).kernel;
  }
};

namespace detail {

template <typename T>
T read_positive(const Json& j, const std::string& key, const char* section) {
  const std::string path = std::string(section) + "." + key;
  const Json& v = j[key];
  if (!v.is_number()) throw ConfigError(path + ": expected a number");
  const double x = v.get<double>();
  if (!(x > 0.0)) throw ConfigError(path + ": must be positive");
  if constexpr (std::is_integral_v<T>) {
    if (std::floor(x) != x) throw ConfigError(path + ": must be an integer");
  }
  return static_cast<T>(x);
}

inline std::vector<std::size_t> read_sizes(const Json& j, const std::string& key, const char* section) {
  const std::string path = std::string(section) + "." + key;
  if (!j[key].is_array()) throw ConfigError(path + ": expected an array");
  std::vector<std::size_t> v;
  for (const auto& e : j[key]) {
    if (!e.is_number_integer() || e.get<long long>() < 2) throw ConfigError(path + ": entries must be integers >= 2");
    v.push_back(e.get<std::size_t>());
  }
  return v;
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& resolved) {
  ExperimentConfig c;
  c.resolved = resolved;
  const Json& model = resolved["model"];
  const Json& graphon = resolved["graphon"];
  const Json& grid = resolved["grid"];
  const Json& run = resolved["run"];

  if (!model["beta"].is_number() || !(model["beta"].get<double>() >= 0.0))
    throw ConfigError("model.beta: must be a nonnegative number");
  c.sis.beta = model["beta"].get<double>();
  c.sis.alpha = detail::read_positive<double>(model, "alpha", "model");
  c.init = model["init"].get<std::string>();
  init_profile(c.init);

  c.family = graphon["family"].get<std::string>();
  graphon_family_from_string(c.family);
  c.N = detail::read_positive<std::size_t>(graphon, "N", "graphon");
  if (c.N < 2) throw ConfigError("graphon.N: must be at least 2");
  c.degree_exponent = graphon["degree_exponent"].get<double>();
  if (!(c.degree_exponent > 0.0 && c.degree_exponent <= 1.0))
    throw ConfigError("graphon.degree_exponent: must lie in (0, 1]");
  if (c.family == "power-law") {
    const double b = graphon["power_beta"].get<double>(), g = graphon["power_gamma"].get<double>();
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("graphon.power_beta: must lie in (0, 1)");
    if (!(g > b && g < 1.0)) throw ConfigError("graphon.power_gamma: must satisfy power_beta < power_gamma < 1");
  }

  c.M = detail::read_positive<std::size_t>(grid, "M", "grid");
  c.meanfield_M = detail::read_positive<std::size_t>(grid, "meanfield_M", "grid");
  c.K = detail::read_positive<std::size_t>(grid, "K", "grid");
  c.dt = detail::read_positive<double>(grid, "dt", "grid");
  c.T = detail::read_positive<double>(grid, "T", "grid");

  const Json& reps = run["replicas"];
  if (!reps.is_number_integer() || reps.get<long long>() < 1)
    throw ConfigError("run.replicas: must be a positive integer");
  c.replicas = reps.get<std::size_t>();
  if (!run["seed"].is_number_integer() || run["seed"].get<long long>() < 0)
    throw ConfigError("run.seed: must be a non-negative integer");
  c.seed = run["seed"].get<std::uint64_t>();
  c.threads = detail::read_positive<std::size_t>(run, "threads", "run");
  c.N_sweep = detail::read_sizes(run, "N_sweep", "run");
  c.snapshots = detail::read_positive<std::size_t>(run, "snapshots", "run");
  if (c.snapshots < 2) throw ConfigError("run.snapshots: must be at least 2");
  c.start = run["start"].get<std::string>();
  c.end = run["end"].get<std::string>();
  c.tol_grad = detail::read_positive<double>(run, "tol_grad", "run");
  c.max_iters = detail::read_positive<std::size_t>(run, "max_iters", "run");
  if (!run["extra_starts"].is_number_integer() || run["extra_starts"].get<long long>() < 0)
    throw ConfigError("run.extra_starts: must be a non-negative integer");
  c.extra_starts = run["extra_starts"].get<std::size_t>();
  c.ldp_a = detail::read_positive<double>(run, "ldp_a", "run");
  c.ldp_N = detail::read_sizes(run, "ldp_N", "run");
  c.ldp_tolerance = detail::read_positive<double>(run, "ldp_tolerance", "run");
  return c;
}

}  // namespace gldp
