#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "msip/baselines.hpp"
#include "msip/harness/config.hpp"
#include "msip/harness/experiment.hpp"
#include "msip/harness/output.hpp"
#include "msip/metrics.hpp"
#include "msip/msip.hpp"

namespace msip::harness {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
  double limit_seconds = 0.0;
};

namespace acceptance_detail {

inline std::string num(double x, const char* f = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

inline double rel_frobenius(const ParticleMatrix& a, const ParticleMatrix& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

inline ParticleMatrix central_differences(const std::function<double(const ParticleMatrix&)>& f,
                                          const ParticleMatrix& y, double h) {
  ParticleMatrix g(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      ParticleMatrix a = y, b = y;
      a(i, j) += h;
      b(i, j) -= h;
      g(i, j) = (f(a) - f(b)) / (2.0 * h);
    }
  return g;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline RunConfig aniso_config(const std::string& algorithm, int M, int trials, const std::string& metric) {
  return parse_config(R"({"target": {"name": "gmm5-aniso-2d", "dim": 2},
    "algorithm": {"name": ")" + algorithm + R"(", "params": {"eta": 0.5, "T": 1000}},
    "particles": {"M": )" + std::to_string(M) + R"(, "init_mean": [18, 18], "init_cov_scale": 1},
    "metrics": {"list": [")" + metric + R"("], "every_n_iters": 1000},
    "trials": {"count": )" + std::to_string(trials) + R"(, "base_seed": 0},
    "output": {"directory": "unused", "formats": []}})");
}

}  // namespace acceptance_detail

/// Objective gradient vs central differences on random configurations.
inline double gradient_check_error(const TargetDensity& t, int M, const KernelSpec& kernel, int configs,
                                   std::uint64_t seed, double step = 1e-5) {
  double worst = 0.0;
  for (int c = 0; c < configs; ++c) {
    const ParticleMatrix y = t.sampler(M, derive_seed(seed, static_cast<std::uint64_t>(c), 0x9c));
    const ParticleMatrix g = objective_gradient(y, t, kernel);
    const ParticleMatrix fd = acceptance_detail::central_differences(
        [&](const ParticleMatrix& z) { return objective(z, t, kernel); }, y, step);
    worst = std::max(worst, acceptance_detail::rel_frobenius(g, fd));
  }
  return worst;
}

struct InvarianceCase {
  std::string label;
  EstimatorSpec spec;
};

inline std::vector<InvarianceCase> invariance_cases() {
  return {{"fredholm", {EstimatorKind::fredholm, 1, 1.0}},
          {"stein Q=1", {EstimatorKind::stein, 1, 1.0}},
          {"stein Q=10", {EstimatorKind::stein, 10, 1.0}},
          {"gf Q=10", {EstimatorKind::gradient_free, 10, 0.0}},
          {"hybrid gamma=0.5", {EstimatorKind::hybrid, 10, 0.5}}};
}

/// Largest relative change of msip_map under log_scale_offset in {-40, +40},
/// same seed and iteration. Estimators the target cannot support are skipped.
inline double invariance_error(const TargetDensity& t, const ParticleMatrix& y, const KernelSpec& kernel,
                               std::uint64_t seed, std::string* worst_label = nullptr) {
  double worst = 0.0;
  for (const auto& c : invariance_cases()) {
    if (c.spec.needs_score() && !t.has_score()) continue;
    MsipParams p;
    p.kernel = kernel;
    p.estimator = c.spec;
    p.seed = seed;
    const ParticleMatrix base = msip_map(y, t, p, 7);
    for (double off : {-40.0, 40.0}) {
      const double e = acceptance_detail::rel_frobenius(msip_map(y, t.with_log_scale_offset(off), p, 7), base);
      if (e > worst) {
        worst = e;
        if (worst_label) *worst_label = c.label;
      }
    }
  }
  return worst;
}

inline CriterionResult criterion_gradient() {
  CriterionResult r{1, "gradient check", false, "", 0, 10};
  const TargetDensity t = make_benchmark("gmm5-aniso-2d", 2, 0);
  const double err = gradient_check_error(t, 8, {0.5, 1e-6}, 20, 1);
  r.pass = err <= 1e-5;
  r.detail = "max relative Frobenius error " + acceptance_detail::num(err) + " (limit 1e-05, 20 configs, M=8)";
  return r;
}

inline CriterionResult criterion_invariance() {
  CriterionResult r{2, "normalization invariance", false, "", 0, 10};
  double worst = 0.0;
  std::string where;
  const std::vector<std::pair<TargetDensity, double>> targets{{make_benchmark("gmm5-aniso-2d", 2, 0), 0.5},
                                                              {make_benchmark("gmm", 5, 0), 0.5},
                                                              {make_benchmark("funnel", 2, 0), 0.1},
                                                              {make_benchmark("funnel", 5, 0), 0.1}};
  for (const auto& [t, sigma] : targets) {
    const ParticleMatrix y = t.sampler(12, 3);
    std::string label;
    const double e = invariance_error(t, y, {sigma, 1e-6}, 11, &label);
    if (e >= worst) {
      worst = e;
      where = t.name + "-" + std::to_string(t.dim) + " " + label;
    }
  }
  r.pass = worst <= 1e-10;
  r.detail = "max relative map change " + acceptance_detail::num(worst) + " at offsets +-40 (worst: " + where + ")";
  return r;
}

inline CriterionResult criterion_estimators() {
  CriterionResult r{3, "estimator consistency", false, "", 0, 30};
  const TargetDensity t = make_benchmark("gmm5-aniso-2d", 2, 0);
  const GmmTarget& g = *t.analytic;
  const double sigma = 0.5;
  const ParticleMatrix y = t.sampler(20, 5);
  const auto q = mc_inner_quadrature(10000, 2, 17);
  const double omega = KernelSpec{sigma, 0.0}.omega(2);
  const Vector v0 = estimate_v0(t, y, sigma, q);
  const ParticleMatrix gf = estimate_v1_gradient_free(t, y, sigma, q);
  const ParticleMatrix st = estimate_v1_stein(t, y, sigma, q);
  const double n = static_cast<double>(q.size());
  int checks = 0, misses = 0;
  double worst_z = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const Vector yi = y.row(i).transpose();
    Vector f(q.size());
    Matrix xg(q.size(), 2), xs(q.size(), 2);
    for (Eigen::Index k = 0; k < q.size(); ++k) {
      const Vector p = yi + sigma * q.nodes.row(k).transpose();
      f(k) = omega * std::exp(t.log_density(p));
      xg.row(k) = p.transpose();
      xs.row(k) = (yi + sigma * sigma * t.score(p)).transpose();
    }
    const auto record = [&](double diff, double se) {
      ++checks;
      const double z = se > 0 ? std::abs(diff) / se : (diff == 0 ? 0.0 : INFINITY);
      worst_z = std::max(worst_z, z);
      if (z > 3.0) ++misses;
    };
    const double se0 = std::sqrt((f.array() - f.mean()).square().sum() / (n - 1) / n);
    record(v0(i) - gmm_v0(g, yi, sigma), se0);
    const Vector want = yi + sigma * sigma * gmm_grad_log_v0(g, yi, sigma);
    for (const auto& [v1, x] : {std::pair{gf, xg}, std::pair{st, xs}})
      for (int j = 0; j < 2; ++j) {
        const double ratio = v1(i, j) / v0(i);
        const Vector lin = (f.array() * (x.col(j).array() - ratio)).matrix() / f.mean();
        record(ratio - want(j), std::sqrt(lin.squaredNorm() / (n - 1) / n));
      }
  }
  r.pass = misses == 0;
  r.detail = std::to_string(checks - misses) + "/" + std::to_string(checks) +
             " checks within 3 SE (v0, gf and stein ratios at 20 points, Q=1e4); max |z| " +
             acceptance_detail::num(worst_z);
  return r;
}

inline CriterionResult criterion_fixed_point() {
  CriterionResult r{4, "single-Gaussian fixed point", false, "", 0, 1};
  const TargetDensity t = make_gmm_density(
      GmmTarget(Vector::Ones(1), ParticleMatrix::Zero(1, 1), {Matrix::Identity(1, 1)}), "normal");
  MsipParams p;
  p.kernel = {1.0, 1e-10};
  p.eta = 0.5;
  p.T = 60;
  p.estimator = {EstimatorKind::analytic, 1, 1.0};
  double worst_step = 0.0, prev = 2.0;
  bool first = true;
  const auto run = run_msip(t, p, ParticleMatrix::Constant(1, 1, 2.0), [&](const IterationRecord& rec) {
    const double y = rec.y(0, 0);
    if (!first) worst_step = std::max(worst_step, std::abs(y - (1.0 - p.eta / 2.0) * prev));
    first = false;
    prev = y;
  });
  const double yT = std::abs(run.final.Y(0, 0));
  r.pass = yT <= 1e-6 && worst_step <= 1e-12 && run.status == RunStatus::ok;
  r.detail = "|y_60| = " + acceptance_detail::num(yT) + ", max deviation from (1 - eta/2) y_t " +
             acceptance_detail::num(worst_step);
  return r;
}

inline CriterionResult criterion_coverage() {
  CriterionResult r{5, "mode coverage", false, "", 0, 300};
  const auto full = [](const std::vector<TrialResult>& res) {
    int n = 0;
    for (const auto& t : res) n += (t.coverage && *t.coverage == 5) ? 1 : 0;
    return n;
  };
  const int msip = full(run_experiment(acceptance_detail::aniso_config("msip-f", 25, 20, "coverage")));
  const int svgd = full(run_experiment(acceptance_detail::aniso_config("a-svgd", 25, 20, "coverage")));
  r.pass = msip >= 18 && svgd < 10;
  r.detail = "all 5 modes covered: msip-f " + std::to_string(msip) + "/20 (need >= 18), a-svgd " +
             std::to_string(svgd) + "/20 (need < 10)";
  return r;
}

inline CriterionResult criterion_mmd_decay() {
  CriterionResult r{6, "MMD decay in M", false, "", 0, 900};
  const auto median_mmd = [](const std::vector<TrialResult>& res) {
    std::vector<double> v;
    for (const auto& t : res)
      if (!t.report.rows.empty() && t.report.rows.back().mmd2) v.push_back(*t.report.rows.back().mmd2);
    return v.empty() ? NAN : acceptance_detail::median(v);
  };
  std::vector<double> med;
  std::string detail = "msip-f median mmd2";
  for (int M : {10, 25, 50, 100}) {
    med.push_back(median_mmd(run_experiment(acceptance_detail::aniso_config("msip-f", M, 20, "mmd2"))));
    detail += " M=" + std::to_string(M) + ":" + acceptance_detail::num(med.back(), "%.4g");
  }
  const double svgd = median_mmd(run_experiment(acceptance_detail::aniso_config("a-svgd", 100, 20, "mmd2")));
  bool decreasing = true;
  for (std::size_t i = 1; i < med.size(); ++i) decreasing = decreasing && med[i] < med[i - 1];
  r.pass = decreasing && med.back() < svgd;
  r.detail = detail + "; a-svgd M=100: " + acceptance_detail::num(svgd, "%.4g") +
             (decreasing ? "" : " (not strictly decreasing)");
  return r;
}

inline CriterionResult criterion_deconvolution() {
  CriterionResult r{7, "deconvolution critical point", false, "", 0, 30};
  const double sigma = 0.5;
  EmpiricalMeasure mu;
  mu.atoms.resize(3, 2);
  mu.atoms << -1.5, 0.0, 1.5, 0.5, 0.0, 2.5;
  mu.masses = Vector::Constant(3, 1.0 / 3.0);
  const TargetDensity t = make_gmm_density(mu.smoothed_density(sigma), "deconvolvable");
  MsipParams p;
  p.kernel = {sigma, 1e-6};
  p.eta = 0.5;
  p.estimator = {EstimatorKind::fredholm, 1, 1.0};
  Rng rng(3);
  ParticleMatrix y(3, 2);
  fill_standard_normal(y, rng);
  y = mu.atoms + 0.3 * y;
  int it = 0;
  double move = INFINITY;
  for (; it < 20000 && move > 1e-8; ++it) {
    const ParticleMatrix next = msip_step(y, t, p, static_cast<std::uint64_t>(it)).y_next;
    move = (next - y).norm();
    y = next;
  }
  const double g = empirical_objective_gradient(y, mu, p.kernel).norm();
  r.pass = move <= 1e-8 && g <= 1e-6;
  r.detail = "fixed point after " + std::to_string(it) + " steps (last move " + acceptance_detail::num(move) +
             "), |grad F^mu| = " + acceptance_detail::num(g);
  return r;
}

inline CriterionResult criterion_metrics() {
  CriterionResult r{8, "metric cross-consistency", false, "", 0, 60};
  const TargetDensity t = make_benchmark("gmm5-aniso-2d", 2, 0);
  const GmmTarget& g = *t.analytic;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const ParticleMatrix y = t.sampler(8, 100 + s);
    Vector v0;
    ParticleMatrix v1;
    analytic_v0_v1(g, y, 0.5, v0, v1);
    const Vector w = optimal_weights(gram(y, {0.5, 0.0}), v0);
    const double two_f = 2.0 * objective(y, g, {0.5, 0.0});
    worst = std::max(worst, std::abs(mmd2_vs_gmm(y, w, g, 0.5) - two_f) / std::max(two_f, 1e-300));
  }
  const ParticleMatrix y = t.sampler(10, 7);
  const Vector w = Vector::Constant(10, 0.1);
  const SampleMmd s = mmd2_vs_samples_detailed(y, w, t.sampler(100000, 8), 0.5);
  const double se = bootstrap_standard_error(s.influence, 200, 9);
  const double exact = mmd2_vs_gmm(y, w, g, 0.5);
  const double z = std::abs(s.value - exact) / se;
  r.pass = worst <= 1e-10 && z <= 3.0;
  r.detail = "2F identity rel err " + acceptance_detail::num(worst) + "; samples " +
             acceptance_detail::num(s.value, "%.6g") + " vs analytic " + acceptance_detail::num(exact, "%.6g") +
             " (" + acceptance_detail::num(z, "%.2f") + " bootstrap SE)";
  return r;
}

inline CriterionResult criterion_ksd() {
  CriterionResult r{9, "KSD internals", false, "", 0, 10};
  KsdParams p;
  p.bandwidth = 0.5;
  Rng rng(21);
  double worst_fd = 0.0;
  const double h = 1e-5;
  for (int s = 0; s < 20; ++s) {
    Vector x(2), y(2);
    fill_standard_normal(x, rng);
    fill_standard_normal(y, rng);
    const ImqTerms t = imq_terms(x, y, p);
    double tr = 0.0;
    for (int j = 0; j < 2; ++j) {
      Vector a = x, b = x;
      a(j) += h;
      b(j) -= h;
      worst_fd = std::max(worst_fd, std::abs(t.grad_x(j) - (imq_terms(a, y, p).k - imq_terms(b, y, p).k) / (2 * h)));
      tr += (imq_terms(a, y, p).grad_y(j) - imq_terms(b, y, p).grad_y(j)) / (2 * h);
      Vector c = y, d = y;
      c(j) += h;
      d(j) -= h;
      worst_fd = std::max(worst_fd, std::abs(t.grad_y(j) - (imq_terms(x, c, p).k - imq_terms(x, d, p).k) / (2 * h)));
    }
    worst_fd = std::max(worst_fd, std::abs(t.trace_xy - tr));
  }
  const TargetDensity target = make_benchmark("gmm5-aniso-2d", 2, 0);
  double min_eig = INFINITY;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng prng(derive_seed(22, s));
    ParticleMatrix y(15, 2);
    fill_standard_normal(y, prng);
    y *= 6.0;
    ParticleMatrix sc(15, 2);
    for (int i = 0; i < 15; ++i) sc.row(i) = target.score(y.row(i).transpose()).transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(stein_kernel_matrix(y, sc, p), Eigen::EigenvaluesOnly);
    min_eig = std::min(min_eig, eig.eigenvalues().minCoeff());
  }
  r.pass = worst_fd <= 1e-6 && min_eig >= -1e-10;
  r.detail = "max derivative error " + acceptance_detail::num(worst_fd) + "; min Stein Gram eigenvalue " +
             acceptance_detail::num(min_eig) + " over 20 point sets";
  return r;
}

/// metrics.csv with the wall_ms column blanked.
inline std::string strip_wall_ms(const std::string& csv) {
  std::string out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    const std::size_t end = csv.find('\n', pos);
    const std::string line = csv.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    std::size_t c = 0;
    for (int k = 0; k < 5 && c != std::string::npos; ++k) c = line.find(',', c + (k ? 1 : 0));
    const std::size_t c6 = c == std::string::npos ? c : line.find(',', c + 1);
    out += (c == std::string::npos || c6 == std::string::npos) ? line : line.substr(0, c + 1) + line.substr(c6);
    out += '\n';
    if (end == std::string::npos) break;
    pos = end + 1;
  }
  return out;
}

inline CriterionResult criterion_determinism(const std::filesystem::path& scratch) {
  CriterionResult r{10, "harness determinism", false, "", 0, 60};
  const std::string text = R"({"target": "gmm5-aniso-2d", "dim": 2,
    "algorithm": {"name": "msip-gi", "params": {"T": 200}},
    "particles": {"M": 25, "init_mean": [18, 18]},
    "metrics": {"list": ["mmd2", "ksd", "loglik", "coverage"], "every_n_iters": 50},
    "trials": {"count": 3, "base_seed": 7, "workers": 1},
    "output": {"formats": ["csv", "json", "svg", "particles"]}})";
  RunConfig c = parse_config(text);
  std::vector<std::string> labels;
  std::vector<std::filesystem::path> dirs;
  for (int k = 0; k < 3; ++k) {
    RunConfig ck = c;
    if (k == 2) ck.trials.workers = 3;
    const auto dir = scratch / ("determinism_" + std::to_string(k));
    std::filesystem::remove_all(dir);
    write_outputs(ck, run_experiment(ck), dir);
    dirs.push_back(dir);
  }
  bool same = true;
  std::string diff;
  int files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dirs[0])) {
    const std::string name = entry.path().filename().string();
    for (std::size_t k = 1; k < dirs.size(); ++k) {
      std::string a = read_file(dirs[0] / name), b;
      try {
        b = read_file(dirs[k] / name);
      } catch (const Error&) {
        same = false;
        diff = name + " missing";
        continue;
      }
      if (name == "metrics.csv") {
        a = strip_wall_ms(a);
        b = strip_wall_ms(b);
      }
      if (name == "summary.json") {
        // The echoed worker count is the one intended difference.
        const auto norm = [](std::string s) {
          const auto p = s.find("\"workers\": ");
          if (p != std::string::npos) s[p + 11] = '#';
          return s;
        };
        a = norm(a);
        b = norm(b);
      }
      if (a != b) {
        same = false;
        diff = name + (k == 2 ? " (3 workers)" : "");
      }
    }
    ++files;
  }
  r.pass = same && files >= 6;
  r.detail = std::to_string(files) + " output files compared across 2 sequential runs and 1 concurrent run" +
             (same ? ", byte-identical" : ", differ: " + diff);
  return r;
}

inline std::vector<std::function<CriterionResult()>> acceptance_suite(const std::filesystem::path& scratch) {
  return {criterion_gradient,      criterion_invariance, criterion_estimators, criterion_fixed_point,
          criterion_coverage,      criterion_mmd_decay,  criterion_deconvolution, criterion_metrics,
          criterion_ksd,           [scratch] { return criterion_determinism(scratch); }};
}

/// Runs one criterion, timing it; runtime over the limit fails the criterion.
inline CriterionResult timed(const std::function<CriterionResult()>& f) {
  const auto start = std::chrono::steady_clock::now();
  CriterionResult r;
  try {
    r = f();
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (r.limit_seconds > 0 && r.seconds > r.limit_seconds) {
    r.pass = false;
    r.detail += " [runtime " + acceptance_detail::num(r.seconds, "%.1f") + " s over limit " +
                acceptance_detail::num(r.limit_seconds, "%.0f") + " s]";
  }
  return r;
}

inline std::string format_criterion(const CriterionResult& r) {
  char head[96];
  std::snprintf(head, sizeof head, "[%s] criterion %d (%s, %.1f s): ", r.pass ? "PASS" : "FAIL", r.id,
                r.name.c_str(), r.seconds);
  return head + r.detail;
}

}  // namespace msip::harness
