#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "msip/baselines.hpp"
#include "msip/harness/config.hpp"
#include "msip/metrics.hpp"
#include "msip/msip.hpp"
#include "msip/rng.hpp"

namespace msip::harness {

struct TrialResult {
  int trial = 0;
  std::uint64_t seed = 0;
  MetricsReport report;
  ParticleConfiguration final;
  RunStatus status = RunStatus::ok;
  std::string message;
  /// Final mode coverage when requested.
  std::optional<int> coverage;
  /// Set when the trial threw before producing anything usable.
  bool failed = false;
};

/// Initial particles N(init_mean, init_cov_scale I) from the trial stream.
inline ParticleMatrix initial_particles(const RunConfig& c, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0, 0x1417));
  ParticleMatrix y(c.particles.M, c.target.dim);
  fill_standard_normal(y, rng);
  y *= std::sqrt(c.particles.init_cov_scale);
  y.rowwise() += c.particles.init_mean.transpose();
  return y;
}

/// Evaluates the requested metrics of one weighted configuration.
class MetricEvaluator {
 public:
  MetricEvaluator(const RunConfig& c, const TargetDensity& t, std::uint64_t seed)
      : cfg_(&c), target_(&t) {
    ksd_.bandwidth = c.metrics.ksd_bandwidth;
    ksd_.scale = c.metrics.ksd_scale;
    if (c.metrics.wants("mmd2") && !t.analytic)
      reference_.emplace(t.sampler(c.metrics.reference_sample_size, derive_seed(seed, 0, 0x4ef)),
                         c.metrics.mmd_bandwidth);
  }

  void fill(MetricsRow& row, const ParticleMatrix& y, const Vector& w) const {
    const auto& m = cfg_->metrics;
    Vector wn;
    try {
      wn = normalize_weights(w);
    } catch (const Error&) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      if (m.wants("mmd2")) row.mmd2 = nan;
      if (m.wants("ksd")) row.ksd = nan;
      if (m.wants("loglik")) row.loglik = nan;
      return;
    }
    if (m.wants("mmd2"))
      row.mmd2 = target_->analytic ? mmd2_vs_gmm(y, wn, *target_->analytic, m.mmd_bandwidth)
                                   : reference_->mmd2(y, wn);
    if (m.wants("ksd")) {
      try {
        row.ksd = ksd(y, wn, [this](ConstVectorRef x) { return target_->score(x); }, ksd_);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::non_finite_density) throw;
        row.ksd = std::numeric_limits<double>::quiet_NaN();
      }
    }
    if (m.wants("loglik")) row.loglik = weighted_loglik(y, wn, *target_);
  }

  std::optional<int> coverage(const ParticleMatrix& y, const Vector& w) const {
    if (!cfg_->metrics.wants("coverage")) return std::nullopt;
    const ParticleMatrix modes = target_->modes ? *target_->modes : target_->analytic->means();
    try {
      return mode_coverage(y, w, modes, cfg_->metrics.coverage_radius).covered;
    } catch (const Error&) {
      return 0;
    }
  }

 private:
  const RunConfig* cfg_;
  const TargetDensity* target_;
  KsdParams ksd_;
  std::optional<SampleReference> reference_;
};

/// One trial, deterministic given its seed. Metrics are recorded at
/// iterations 0, n, 2n, ... and always at T.
inline TrialResult run_trial(const RunConfig& c, const TargetDensity& t, int trial) {
  TrialResult r;
  r.trial = trial;
  r.seed = c.trial_seed(trial);
  r.report.algorithm = c.algorithm.name;
  r.report.target = c.target.name;
  r.report.seed = r.seed;
  r.report.params_json = to_json(c)["algorithm"].dump();
  try {
    const MetricEvaluator metrics(c, t, r.seed);
    const auto start = std::chrono::steady_clock::now();
    const int every = c.metrics.every_n_iters, T = c.algorithm.T;
    const auto hook = [&](const IterationRecord& rec) {
      if (rec.iteration % every != 0 && rec.iteration != T) return;
      MetricsRow row;
      row.iteration = rec.iteration;
      row.density_evals = rec.density_evals;
      row.score_evals = rec.score_evals;
      metrics.fill(row, rec.y, rec.w);
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      r.report.rows.push_back(row);
    };
    const ParticleMatrix y0 = initial_particles(c, r.seed);
    const auto& a = c.algorithm;
    if (is_msip(a.name)) {
      MsipRun run = run_msip(t, msip_params(c, r.seed), y0, hook);
      r.final = std::move(run.final);
      r.status = run.status;
      r.message = std::move(run.message);
    } else {
      BaselineRun run;
      if (a.name == "cbs") {
        CbsParams p;
        p.beta = a.beta;
        p.eta = a.eta;
        p.T = T;
        p.noise_scale = a.noise_scale;
        p.bounds = Bounds::uniform(t.dim, a.lo, a.hi);
        p.seed = r.seed;
        run = run_cbs(t, p, y0, hook);
      } else {
        SvgdParams p;
        p.eta = a.eta;
        p.T = T;
        p.adaptive = a.name == "a-svgd";
        p.bandwidth = a.bandwidth;
        p.bounds = Bounds::uniform(t.dim, a.lo, a.hi);
        p.seed = r.seed;
        run = run_svgd(t, p, y0, hook);
      }
      r.final = std::move(run.final);
      r.status = run.status;
      r.message = std::move(run.message);
    }
    r.coverage = metrics.coverage(r.final.Y, r.final.w);
  } catch (const Error& e) {
    if (e.is_config_error()) throw;
    r.failed = true;
    r.status = RunStatus::diverged;
    r.message = e.what();
  }
  return r;
}

/// All trials, in trial order. Up to trials.workers run at once; each has its
/// own streams so the results do not depend on scheduling.
inline std::vector<TrialResult> run_experiment(const RunConfig& c) {
  validate(c);
  const TargetDensity t = make_target(c.target);
  check_compatibility(c, t);
  std::vector<TrialResult> out(static_cast<std::size_t>(c.trials.count));
  const int workers = std::max(1, std::min(c.trials.workers, c.trials.count));
  if (workers == 1) {
    for (int i = 0; i < c.trials.count; ++i) out[static_cast<std::size_t>(i)] = run_trial(c, t, i);
    return out;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = next++; i < c.trials.count; i = next++)
          out[static_cast<std::size_t>(i)] = run_trial(c, t, i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct MetricSummary {
  int n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for n < 2
  double p05 = 0.0;  // empirical quantiles, linear interpolation
  double p95 = 0.0;
};

/// Empirical quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  require(!v.empty(), "quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline MetricSummary summarize(const std::vector<double>& v) {
  MetricSummary s;
  s.n = static_cast<int>(v.size());
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  s.p05 = quantile(v, 0.05);
  s.p95 = quantile(v, 0.95);
  return s;
}

/// A trial survives when it ran to completion without diverging.
inline bool survived(const TrialResult& r) { return !r.failed && r.status != RunStatus::diverged; }

/// Final-iteration values of each requested metric over surviving trials;
/// non-finite values are left out.
inline std::map<std::string, MetricSummary> aggregate(const RunConfig& c,
                                                      const std::vector<TrialResult>& results) {
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : results) {
    if (!survived(r) || r.report.rows.empty()) continue;
    const MetricsRow& last = r.report.rows.back();
    const auto add = [&](const char* name, const std::optional<double>& v) {
      if (v && std::isfinite(*v)) values[name].push_back(*v);
    };
    add("mmd2", last.mmd2);
    add("ksd", last.ksd);
    add("loglik", last.loglik);
    if (r.coverage) values["coverage"].push_back(*r.coverage);
  }
  std::map<std::string, MetricSummary> out;
  for (const auto& m : c.metrics.list) out[m] = summarize(values[m]);
  return out;
}

inline json summary_json(const RunConfig& c, const std::vector<TrialResult>& results) {
  json metrics = json::object();
  for (const auto& [name, s] : aggregate(c, results))
    metrics[name] = {{"n", s.n}, {"mean", s.mean}, {"std", s.std}, {"p05", s.p05}, {"p95", s.p95}};
  json trials = json::array();
  for (const auto& r : results) {
    json t{{"trial", r.trial}, {"seed", r.seed}, {"status", to_string(r.status)}};
    if (!r.message.empty()) t["message"] = r.message;
    if (r.coverage) t["coverage"] = *r.coverage;
    trials.push_back(t);
  }
  int ok = 0;
  for (const auto& r : results) ok += survived(r) ? 1 : 0;
  return json{{"config_echo", to_json(c)},
              {"quantiles", "p05/p95 are empirical quantiles over trials, not confidence intervals"},
              {"surviving_trials", ok},
              {"metrics", metrics},
              {"trials", trials}};
}

}  // namespace msip::harness
