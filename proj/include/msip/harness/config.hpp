#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msip/baselines.hpp"
#include "msip/error.hpp"
#include "msip/metrics.hpp"
#include "msip/msip.hpp"
#include "msip/targets.hpp"

namespace msip::harness {

using json = nlohmann::ordered_json;

/// Per-fixture hyperparameter row (step size, MSIP bandwidth, KSD bandwidth).
struct FixtureDefaults {
  double eta;
  double sigma;
  double ksd_bandwidth;
};

inline FixtureDefaults fixture_defaults(const std::string& target, int dim) {
  if (target == "gmm" || target == "gmm5-aniso-2d") return {0.5, 0.5, 0.5};
  if (target == "funnel") return {dim <= 2 ? 0.5 : 0.05, 0.1, 0.1};
  if (target == "himmelblau") return {0.1, 0.05, 0.1};
  throw Error(ErrorCode::config, "target.name: unknown target '" + target + "'");
}

inline const std::vector<std::string>& algorithm_names() {
  static const std::vector<std::string> names{"msip-f",     "msip-gi", "msip-gf", "msip-hybrid",
                                              "svgd",       "a-svgd",  "cbs"};
  return names;
}

inline bool is_msip(const std::string& a) { return a.rfind("msip-", 0) == 0; }

struct TargetConfig {
  std::string name = "gmm";
  int dim = 2;
  std::uint64_t seed = 0;
  FixtureOverrides overrides;
};

struct AlgorithmConfig {
  std::string name = "msip-f";
  double eta = 0.5;
  int T = 1000;
  double lo = -1e3, hi = 1e3;
  // msip
  double sigma = 0.5;
  double lambda = 1e-6;
  int Q = 1;
  double gamma = 1.0;
  double weight_floor = 1e-300;
  // svgd (fixed bandwidth)
  double bandwidth = 0.5;
  // cbs
  double beta = 0.9;
  double noise_scale = 1.0;
};

struct ParticlesConfig {
  int M = 25;
  Vector init_mean;
  double init_cov_scale = 1.0;
};

struct MetricsConfig {
  std::vector<std::string> list{"mmd2", "ksd", "loglik"};
  int every_n_iters = 100;
  int reference_sample_size = 10000;
  double mmd_bandwidth = 0.5;
  double ksd_bandwidth = 0.5;
  double ksd_scale = 1.0;
  double coverage_radius = 1.0;

  bool wants(const std::string& m) const {
    for (const auto& x : list)
      if (x == m) return true;
    return false;
  }
};

struct TrialsConfig {
  int count = 10;
  std::uint64_t base_seed = 0;
  int workers = 1;
};

struct OutputConfig {
  std::string directory = "results";
  std::vector<std::string> formats{"csv", "json"};

  bool wants(const std::string& f) const {
    for (const auto& x : formats)
      if (x == f) return true;
    return false;
  }
};

struct RunConfig {
  TargetConfig target;
  AlgorithmConfig algorithm;
  ParticlesConfig particles;
  MetricsConfig metrics;
  TrialsConfig trials;
  OutputConfig output;

  /// Trial t runs with seed base_seed + t.
  std::uint64_t trial_seed(int t) const { return trials.base_seed + static_cast<std::uint64_t>(t); }
};

namespace detail {

[[noreturn]] inline void fail(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::config, path + ": " + what);
}

inline void reject_unknown(const json& obj, const std::string& path,
                           const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) fail(path.empty() ? it.key() : path + "." + it.key(), "unknown key");
}

inline const json& object_at(const json& parent, const std::string& key, const std::string& path) {
  const json& v = parent.at(key);
  if (!v.is_object()) fail(path, "expected an object");
  return v;
}

template <class T>
T get(const json& obj, const std::string& key, const std::string& path, T fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  const std::string p = path.empty() ? key : path + "." + key;
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) fail(p, "expected a number");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() && !(v.is_number_float() && v.get<double>() == std::floor(v.get<double>())))
        fail(p, "expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.get<double>() < 0) fail(p, "expected a nonnegative integer");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(p, "expected a string");
    }
    return v.get<T>();
  } catch (const json::exception& e) {
    fail(p, e.what());
  }
}

inline std::vector<std::string> string_list(const json& obj, const std::string& key,
                                            const std::string& path,
                                            std::vector<std::string> fallback,
                                            const std::set<std::string>& allowed) {
  if (!obj.contains(key)) return fallback;
  const std::string p = path + "." + key;
  const json& v = obj.at(key);
  if (!v.is_array()) fail(p, "expected a list of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string()) fail(p + "[" + std::to_string(i) + "]", "expected a string");
    const auto s = v[i].get<std::string>();
    if (!allowed.count(s)) fail(p + "[" + std::to_string(i) + "]", "unknown value '" + s + "'");
    out.push_back(s);
  }
  return out;
}

inline Vector number_vector(const json& v, const std::string& path) {
  if (!v.is_array()) fail(path, "expected a list of numbers");
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) fail(path + "[" + std::to_string(i) + "]", "expected a number");
    out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
  }
  return out;
}

inline Matrix number_matrix(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) fail(path, "expected a nonempty list of rows");
  const Vector first = number_vector(v[0], path + "[0]");
  Matrix out(static_cast<Eigen::Index>(v.size()), first.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vector row = number_vector(v[i], path + "[" + std::to_string(i) + "]");
    if (row.size() != first.size()) fail(path, "ragged rows");
    out.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return out;
}

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json to_json(const Matrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

inline FixtureOverrides parse_overrides(const json& o, const std::string& path) {
  reject_unknown(o, path, {"weights", "means", "covariances", "funnel_variance"});
  FixtureOverrides out;
  if (o.contains("weights")) out.weights = number_vector(o.at("weights"), path + ".weights");
  if (o.contains("means")) out.means = ParticleMatrix(number_matrix(o.at("means"), path + ".means"));
  if (o.contains("covariances")) {
    const json& c = o.at("covariances");
    if (!c.is_array()) fail(path + ".covariances", "expected a list of matrices");
    std::vector<Matrix> covs;
    for (std::size_t i = 0; i < c.size(); ++i)
      covs.push_back(number_matrix(c[i], path + ".covariances[" + std::to_string(i) + "]"));
    out.covariances = std::move(covs);
  }
  if (o.contains("funnel_variance"))
    out.funnel_variance = get<double>(o, "funnel_variance", path, 9.0);
  return out;
}

}  // namespace detail

/// Fixture built from the target section.
inline TargetDensity make_target(const TargetConfig& t) {
  return make_benchmark(t.name, t.dim, t.seed, t.overrides);
}

/// Checks that need the constructed target: scores, analytic forms, modes.
inline void check_compatibility(const RunConfig& c, const TargetDensity& t) {
  const auto& a = c.algorithm;
  const bool needs_score = a.name == "msip-f" || a.name == "msip-gi" || a.name == "svgd" ||
                           a.name == "a-svgd" || (a.name == "msip-hybrid" && a.gamma > 0.0);
  if (needs_score && !t.has_score())
    detail::fail("algorithm.name", "'" + a.name + "' needs the score of target '" + t.name + "'");
  if (c.metrics.wants("ksd") && !t.has_score())
    detail::fail("metrics.list", "ksd needs the score of target '" + t.name + "'");
  if (c.metrics.wants("mmd2") && !t.analytic && !t.sampler)
    detail::fail("metrics.list", "mmd2 needs an analytic form or a reference sampler");
  if (c.metrics.wants("coverage") && !t.modes && !t.analytic)
    detail::fail("metrics.list", "coverage needs known modes for target '" + t.name + "'");
  if (c.output.wants("svg") && t.dim != 2)
    throw Error(ErrorCode::unsupported_dimension,
                "output.formats: svg needs a two-dimensional target, got d = " + std::to_string(t.dim));
}

inline void validate(const RunConfig& c) {
  using detail::fail;
  const auto& names = algorithm_names();
  if (std::find(names.begin(), names.end(), c.algorithm.name) == names.end())
    fail("algorithm.name", "unknown algorithm '" + c.algorithm.name + "'");
  if (c.target.dim < 1) fail("target.dim", "must be positive");
  const auto& a = c.algorithm;
  if (!(a.eta > 0.0)) fail("algorithm.params.eta", "must be positive");
  if (is_msip(a.name) && a.eta > 1.0) fail("algorithm.params.eta", "must lie in (0, 1] for MSIP");
  if (a.T < 1) fail("algorithm.params.T", "must be at least 1");
  if (!(a.lo < a.hi)) fail("algorithm.params.bounds", "need lo < hi");
  if (!(a.sigma > 0.0)) fail("algorithm.params.sigma", "must be positive");
  if (!(a.lambda >= 0.0)) fail("algorithm.params.lambda", "must be nonnegative");
  if (a.Q < 1) fail("algorithm.params.Q", "must be at least 1");
  if (a.name == "msip-f" && a.Q != 1) fail("algorithm.params.Q", "msip-f uses the one-point rule (Q = 1)");
  if (!(a.gamma >= 0.0 && a.gamma <= 1.0)) fail("algorithm.params.gamma", "must lie in [0, 1]");
  if (!(a.bandwidth > 0.0)) fail("algorithm.params.bandwidth", "must be positive");
  if (!(a.beta > 0.0)) fail("algorithm.params.beta", "must be positive");
  if (!(a.noise_scale >= 0.0)) fail("algorithm.params.noise_scale", "must be nonnegative");
  if (c.particles.M < 1) fail("particles.M", "must be at least 1");
  if (c.particles.init_mean.size() != c.target.dim)
    fail("particles.init_mean", "length must equal target.dim");
  if (!(c.particles.init_cov_scale >= 0.0)) fail("particles.init_cov_scale", "must be nonnegative");
  if (c.metrics.every_n_iters < 1) fail("metrics.every_n_iters", "must be at least 1");
  if (c.metrics.reference_sample_size < 1) fail("metrics.reference_sample_size", "must be at least 1");
  if (!(c.metrics.mmd_bandwidth > 0.0)) fail("metrics.mmd_bandwidth", "must be positive");
  if (!(c.metrics.ksd_bandwidth > 0.0)) fail("metrics.ksd_bandwidth", "must be positive");
  if (!(c.metrics.coverage_radius > 0.0)) fail("metrics.coverage_radius", "must be positive");
  if (c.trials.count < 0) fail("trials.count", "must be nonnegative");
  if (c.trials.workers < 1) fail("trials.workers", "must be at least 1");
  if (c.output.directory.empty()) fail("output.directory", "must be nonempty");
}

/// Parses and fully defaults a config. The shorthand forms `"target": "gmm"`,
/// top-level `"dim"` and `"algorithm": "msip-f"` are accepted.
inline RunConfig parse_config(const std::string& text) {
  using detail::fail;
  using detail::get;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::config, std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) fail("(root)", "expected an object");
  detail::reject_unknown(root, "", {"target", "dim", "algorithm", "particles", "metrics", "trials", "output"});

  RunConfig c;
  // target
  json target = json::object();
  if (root.contains("target")) {
    if (root["target"].is_string()) target["name"] = root["target"];
    else if (root["target"].is_object()) target = root["target"];
    else fail("target", "expected a name or an object");
  }
  detail::reject_unknown(target, "target", {"name", "dim", "seed", "overrides"});
  c.target.name = get<std::string>(target, "name", "target", "gmm");
  if (root.contains("dim") && target.contains("dim")) fail("dim", "given twice (also target.dim)");
  const int default_dim = c.target.name == "gmm" ? 5 : 2;
  c.target.dim = root.contains("dim") ? get<int>(root, "dim", "", default_dim)
                                      : get<int>(target, "dim", "target", default_dim);
  c.target.seed = get<std::uint64_t>(target, "seed", "target", 0);
  if (target.contains("overrides")) {
    if (!target["overrides"].is_object()) fail("target.overrides", "expected an object");
    c.target.overrides = detail::parse_overrides(target["overrides"], "target.overrides");
  }
  const FixtureDefaults fx = fixture_defaults(c.target.name, c.target.dim);

  // algorithm
  json alg = json::object();
  if (root.contains("algorithm")) {
    if (root["algorithm"].is_string()) alg["name"] = root["algorithm"];
    else if (root["algorithm"].is_object()) alg = root["algorithm"];
    else fail("algorithm", "expected a name or an object");
  }
  detail::reject_unknown(alg, "algorithm", {"name", "params"});
  auto& a = c.algorithm;
  a.name = get<std::string>(alg, "name", "algorithm", "msip-f");
  const auto& names = algorithm_names();
  if (std::find(names.begin(), names.end(), a.name) == names.end())
    fail("algorithm.name", "unknown algorithm '" + a.name + "'");
  json params = alg.contains("params") ? alg["params"] : json::object();
  if (!params.is_object()) fail("algorithm.params", "expected an object");
  std::set<std::string> allowed{"eta", "T", "bounds"};
  if (is_msip(a.name)) allowed.insert({"sigma", "lambda", "Q", "gamma", "weight_floor"});
  if (a.name == "svgd") allowed.insert("bandwidth");
  if (a.name == "cbs") allowed.insert({"beta", "noise_scale"});
  detail::reject_unknown(params, "algorithm.params", allowed);
  a.eta = get<double>(params, "eta", "algorithm.params", fx.eta);
  a.T = get<int>(params, "T", "algorithm.params", 1000);
  if (params.contains("bounds")) {
    const Vector b = detail::number_vector(params["bounds"], "algorithm.params.bounds");
    if (b.size() != 2) fail("algorithm.params.bounds", "expected [lo, hi]");
    a.lo = b(0);
    a.hi = b(1);
  }
  a.sigma = get<double>(params, "sigma", "algorithm.params", fx.sigma);
  a.lambda = get<double>(params, "lambda", "algorithm.params", 1e-6);
  a.Q = get<int>(params, "Q", "algorithm.params", a.name == "msip-f" ? 1 : 10);
  const double gamma_default = a.name == "msip-gf" ? 0.0 : a.name == "msip-hybrid" ? 0.5 : 1.0;
  a.gamma = get<double>(params, "gamma", "algorithm.params", gamma_default);
  if (a.name == "msip-gi" && a.gamma != 1.0) fail("algorithm.params.gamma", "msip-gi is the gamma = 1 estimator");
  if (a.name == "msip-gf" && a.gamma != 0.0) fail("algorithm.params.gamma", "msip-gf is the gamma = 0 estimator");
  a.weight_floor = get<double>(params, "weight_floor", "algorithm.params", 1e-300);
  a.bandwidth = get<double>(params, "bandwidth", "algorithm.params", fx.sigma);
  a.beta = get<double>(params, "beta", "algorithm.params", 0.9);
  a.noise_scale = get<double>(params, "noise_scale", "algorithm.params", 1.0);

  // particles
  const json particles = root.contains("particles") ? detail::object_at(root, "particles", "particles") : json::object();
  detail::reject_unknown(particles, "particles", {"M", "init_mean", "init_cov_scale"});
  c.particles.M = get<int>(particles, "M", "particles", 25);
  if (particles.contains("init_mean")) {
    const json& m = particles["init_mean"];
    if (m.is_number()) c.particles.init_mean = Vector::Constant(c.target.dim, m.get<double>());
    else c.particles.init_mean = detail::number_vector(m, "particles.init_mean");
  } else {
    c.particles.init_mean = Vector::Zero(c.target.dim);
  }
  c.particles.init_cov_scale = get<double>(particles, "init_cov_scale", "particles", 1.0);

  // metrics
  const json metrics = root.contains("metrics") ? detail::object_at(root, "metrics", "metrics") : json::object();
  detail::reject_unknown(metrics, "metrics", {"list", "every_n_iters", "reference_sample_size", "mmd_bandwidth",
                                              "ksd_bandwidth", "ksd_scale", "coverage_radius"});
  c.metrics.list = detail::string_list(metrics, "list", "metrics", c.metrics.list,
                                       {"mmd2", "ksd", "loglik", "coverage"});
  c.metrics.every_n_iters = get<int>(metrics, "every_n_iters", "metrics", 100);
  c.metrics.reference_sample_size = get<int>(metrics, "reference_sample_size", "metrics", 10000);
  c.metrics.mmd_bandwidth = get<double>(metrics, "mmd_bandwidth", "metrics", fx.sigma);
  c.metrics.ksd_bandwidth = get<double>(metrics, "ksd_bandwidth", "metrics", fx.ksd_bandwidth);
  c.metrics.ksd_scale = get<double>(metrics, "ksd_scale", "metrics", 1.0);
  const double radius_default = (c.target.name == "gmm" || c.target.name == "gmm5-aniso-2d") && c.target.dim >= 1
                                    ? 2.0 * make_target(c.target).analytic->largest_std()
                                    : 0.5;
  c.metrics.coverage_radius = get<double>(metrics, "coverage_radius", "metrics", radius_default);

  // trials
  const json trials = root.contains("trials") ? detail::object_at(root, "trials", "trials") : json::object();
  detail::reject_unknown(trials, "trials", {"count", "base_seed", "workers"});
  c.trials.count = get<int>(trials, "count", "trials", 10);
  c.trials.base_seed = get<std::uint64_t>(trials, "base_seed", "trials", 0);
  c.trials.workers = get<int>(trials, "workers", "trials", 1);

  // output
  const json output = root.contains("output") ? detail::object_at(root, "output", "output") : json::object();
  detail::reject_unknown(output, "output", {"directory", "formats"});
  c.output.directory = get<std::string>(output, "directory", "output", "results");
  c.output.formats = detail::string_list(output, "formats", "output", c.output.formats,
                                         {"csv", "json", "svg", "particles"});

  validate(c);
  check_compatibility(c, make_target(c.target));
  return c;
}

/// Canonical, fully explicit form; parse_config(dump) gives back an equal config.
inline json to_json(const RunConfig& c) {
  json target{{"name", c.target.name}, {"dim", c.target.dim}, {"seed", c.target.seed}};
  const auto& o = c.target.overrides;
  if (o.weights || o.means || o.covariances || o.funnel_variance) {
    json ov = json::object();
    if (o.weights) ov["weights"] = detail::to_json(*o.weights);
    if (o.means) ov["means"] = detail::to_json(Matrix(*o.means));
    if (o.covariances) {
      json cs = json::array();
      for (const auto& m : *o.covariances) cs.push_back(detail::to_json(m));
      ov["covariances"] = cs;
    }
    if (o.funnel_variance) ov["funnel_variance"] = *o.funnel_variance;
    target["overrides"] = ov;
  }
  const auto& a = c.algorithm;
  json params{{"eta", a.eta}, {"T", a.T}, {"bounds", {a.lo, a.hi}}};
  if (is_msip(a.name)) {
    params["sigma"] = a.sigma;
    params["lambda"] = a.lambda;
    params["Q"] = a.Q;
    params["gamma"] = a.gamma;
    params["weight_floor"] = a.weight_floor;
  }
  if (a.name == "svgd") params["bandwidth"] = a.bandwidth;
  if (a.name == "cbs") {
    params["beta"] = a.beta;
    params["noise_scale"] = a.noise_scale;
  }
  return json{
      {"target", target},
      {"algorithm", {{"name", a.name}, {"params", params}}},
      {"particles",
       {{"M", c.particles.M}, {"init_mean", detail::to_json(c.particles.init_mean)},
        {"init_cov_scale", c.particles.init_cov_scale}}},
      {"metrics",
       {{"list", c.metrics.list},
        {"every_n_iters", c.metrics.every_n_iters},
        {"reference_sample_size", c.metrics.reference_sample_size},
        {"mmd_bandwidth", c.metrics.mmd_bandwidth},
        {"ksd_bandwidth", c.metrics.ksd_bandwidth},
        {"ksd_scale", c.metrics.ksd_scale},
        {"coverage_radius", c.metrics.coverage_radius}}},
      {"trials", {{"count", c.trials.count}, {"base_seed", c.trials.base_seed}, {"workers", c.trials.workers}}},
      {"output", {{"directory", c.output.directory}, {"formats", c.output.formats}}},
  };
}

inline std::string serialize_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

/// MSIP parameters for a config (msip-* algorithms).
inline MsipParams msip_params(const RunConfig& c, std::uint64_t seed) {
  const auto& a = c.algorithm;
  MsipParams p;
  p.kernel = {a.sigma, a.lambda};
  p.eta = a.eta;
  p.T = a.T;
  p.bounds = Bounds::uniform(c.target.dim, a.lo, a.hi);
  p.seed = seed;
  p.weight_floor = a.weight_floor;
  if (a.name == "msip-f") p.estimator = {EstimatorKind::fredholm, 1, 1.0};
  else if (a.name == "msip-gi") p.estimator = {EstimatorKind::stein, a.Q, 1.0};
  else if (a.name == "msip-gf") p.estimator = {EstimatorKind::gradient_free, a.Q, 0.0};
  else p.estimator = {EstimatorKind::hybrid, a.Q, a.gamma};
  return p;
}

}  // namespace msip::harness
