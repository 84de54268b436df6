#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "msip/harness/acceptance.hpp"
#include "msip/harness/config.hpp"
#include "msip/harness/experiment.hpp"
#include "msip/harness/output.hpp"
#include "msip/harness/svg.hpp"

using namespace msip;
using namespace msip::harness;
namespace fs = std::filesystem;

namespace {

// Small, fast run: M=6, T=20 on the 2-D fixture.
std::string small_config(int trials, const std::string& algorithm = "msip-gi") {
  return R"({"target": "gmm5-aniso-2d", "dim": 2,
    "algorithm": {"name": ")" + algorithm + R"(", "params": {"T": 20}},
    "particles": {"M": 6, "init_mean": [3, 3]},
    "metrics": {"list": ["mmd2", "ksd", "loglik", "coverage"], "every_n_iters": 5},
    "trials": {"count": )" + std::to_string(trials) + R"(, "base_seed": 11},
    "output": {"formats": ["csv", "json", "particles"]}})";
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::invalid_argument;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::vector<std::vector<std::string>> split_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST(Config, MinimalGmmAnisoDefaults) {
  const RunConfig c = parse_config(R"({"target": "gmm5-aniso-2d", "algorithm": "msip-f"})");
  EXPECT_EQ(c.target.dim, 2);
  EXPECT_DOUBLE_EQ(c.algorithm.eta, 0.5);
  EXPECT_DOUBLE_EQ(c.algorithm.sigma, 0.5);
  EXPECT_EQ(c.algorithm.T, 1000);
  EXPECT_EQ(c.algorithm.Q, 1);
  EXPECT_EQ(c.trials.count, 10);
  EXPECT_DOUBLE_EQ(c.algorithm.lo, -1e3);
  EXPECT_DOUBLE_EQ(c.algorithm.hi, 1e3);
  EXPECT_EQ(c.particles.M, 25);
  EXPECT_EQ(c.metrics.every_n_iters, 100);
}

TEST(Config, FixtureDefaultsFollowTarget) {
  EXPECT_DOUBLE_EQ(parse_config(R"({"target": "funnel", "dim": 2})").algorithm.sigma, 0.1);
  EXPECT_DOUBLE_EQ(parse_config(R"({"target": "funnel", "dim": 2})").algorithm.eta, 0.5);
  EXPECT_DOUBLE_EQ(parse_config(R"({"target": "funnel", "dim": 5})").algorithm.eta, 0.05);
  const RunConfig h = parse_config(R"({"target": "himmelblau", "metrics": {"list": ["ksd"]}})");
  EXPECT_DOUBLE_EQ(h.algorithm.eta, 0.1);
  EXPECT_DOUBLE_EQ(h.algorithm.sigma, 0.05);
  EXPECT_DOUBLE_EQ(h.metrics.ksd_bandwidth, 0.1);
  EXPECT_DOUBLE_EQ(parse_config(R"({"algorithm": "msip-hybrid"})").algorithm.gamma, 0.5);
  EXPECT_DOUBLE_EQ(parse_config(R"({"algorithm": "msip-gf"})").algorithm.gamma, 0.0);
  EXPECT_EQ(parse_config(R"({"algorithm": "msip-gf"})").algorithm.Q, 10);
}

TEST(Config, ScoreFreeTargetRejectsScoreAlgorithms) {
  RunConfig c = parse_config(R"({"target": "gmm5-aniso-2d", "algorithm": "msip-gi", "metrics": {"list": ["mmd2"]}})");
  TargetDensity t = make_target(c.target);
  t.score_fn = nullptr;
  const std::string msg = message_of([&] { check_compatibility(c, t); });
  EXPECT_NE(msg.find("algorithm.name"), std::string::npos) << msg;
  EXPECT_EQ(code_of([&] { check_compatibility(c, t); }), ErrorCode::config);
  c.algorithm.name = "msip-gf";
  c.algorithm.gamma = 0.0;
  EXPECT_NO_THROW(check_compatibility(c, t));
  c.metrics.list = {"ksd"};
  EXPECT_EQ(code_of([&] { check_compatibility(c, t); }), ErrorCode::config);
}

TEST(Config, RoundTripIsExact) {
  const RunConfig a = parse_config(small_config(3, "msip-hybrid"));
  const std::string text = serialize_config(a);
  const RunConfig b = parse_config(text);
  EXPECT_EQ(serialize_config(b), text);
  EXPECT_EQ(b.algorithm.gamma, a.algorithm.gamma);
  EXPECT_EQ(b.metrics.coverage_radius, a.metrics.coverage_radius);
  EXPECT_EQ(b.particles.init_mean, a.particles.init_mean);
}

TEST(Config, UnknownKeysGivePathQualifiedErrors) {
  EXPECT_NE(message_of([] { parse_config(R"({"algorithm": {"name": "msip-f", "params": {"etaa": 1}}})"); })
                .find("algorithm.params.etaa"),
            std::string::npos);
  EXPECT_NE(message_of([] { parse_config(R"({"metrics": {"every": 3}})"); }).find("metrics.every"),
            std::string::npos);
  // Parameters of another algorithm are unknown too.
  EXPECT_EQ(code_of([] { parse_config(R"({"algorithm": {"name": "svgd", "params": {"Q": 3}}})"); }),
            ErrorCode::config);
}

TEST(Config, InvalidValuesAreConfigErrors) {
  EXPECT_EQ(code_of([] { parse_config(R"({"algorithm": {"name": "msip-f", "params": {"eta": 1.5}}})"); }),
            ErrorCode::config);
  EXPECT_EQ(code_of([] { parse_config(R"({"algorithm": {"name": "msip-f", "params": {"Q": 4}}})"); }),
            ErrorCode::config);
  EXPECT_EQ(code_of([] { parse_config(R"({"algorithm": "langevin"})"); }), ErrorCode::config);
  EXPECT_EQ(code_of([] { parse_config(R"({"target": "gmm", "dim": 3, "particles": {"init_mean": [0, 0]}})"); }),
            ErrorCode::config);
  EXPECT_EQ(code_of([] { parse_config("{not json"); }), ErrorCode::config);
  EXPECT_EQ(code_of([] { parse_config(R"({"target": "gmm", "dim": 5, "output": {"formats": ["svg"]}})"); }),
            ErrorCode::unsupported_dimension);
}

TEST(Config, TrialSeedsAreConsecutive) {
  const RunConfig c = parse_config(small_config(3));
  EXPECT_EQ(c.trial_seed(0), 11u);
  EXPECT_EQ(c.trial_seed(2), 13u);
}

TEST(Statistics, QuantileInterpolatesOrderStatistics) {
  EXPECT_DOUBLE_EQ(quantile({3.0, 1.0, 2.0}, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(quantile({1.0, 2.0}, 0.25), 1.25);
  EXPECT_DOUBLE_EQ(quantile({5.0}, 0.95), 5.0);
  std::vector<double> v;
  for (int i = 0; i <= 100; ++i) v.push_back(i);
  EXPECT_DOUBLE_EQ(quantile(v, 0.05), 5.0);
  EXPECT_DOUBLE_EQ(quantile(v, 0.95), 95.0);
}

TEST(Statistics, SummaryUsesSampleStd) {
  const MetricSummary s = summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_EQ(s.n, 4);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(summarize({}).n, 0);
  EXPECT_EQ(summarize({7.0}).std, 0.0);
}

TEST(Output, RowCountFollowsRecordingInterval) {
  RunConfig c = parse_config(small_config(1));
  c.algorithm.T = 1000;
  c.metrics.every_n_iters = 100;
  c.metrics.list = {"loglik"};
  const auto res = run_experiment(c);
  ASSERT_EQ(res[0].report.rows.size(), 11u);
  EXPECT_EQ(res[0].report.rows.front().iteration, 0);
  EXPECT_EQ(res[0].report.rows.back().iteration, 1000);
}

TEST(Output, FinalIterationAlwaysRecorded) {
  RunConfig c = parse_config(small_config(1));
  c.algorithm.T = 7;
  c.metrics.every_n_iters = 5;
  const auto res = run_experiment(c);
  ASSERT_EQ(res[0].report.rows.size(), 3u);
  EXPECT_EQ(res[0].report.rows[2].iteration, 7);
}

TEST(Output, ZeroTrialsGiveHeaderOnlyCsv) {
  RunConfig c = parse_config(small_config(0));
  const auto res = run_experiment(c);
  EXPECT_TRUE(res.empty());
  EXPECT_EQ(metrics_csv(res), "trial,iteration,mmd2,ksd,loglik,wall_ms,density_evals,score_evals,status\n");
  const json s = summary_json(c, res);
  EXPECT_EQ(s["surviving_trials"], 0);
  EXPECT_EQ(s["metrics"]["mmd2"]["n"], 0);
}

TEST(Output, CsvFormatting) {
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(format_double(std::nan("")), "nan");
  EXPECT_EQ(format_double(-HUGE_VAL), "-inf");
  EXPECT_EQ(std::strtod(format_double(M_PI).c_str(), nullptr), M_PI);

  const auto res = run_experiment(parse_config(small_config(2)));
  const std::string csv = metrics_csv(res);
  EXPECT_EQ(csv.find('\r'), std::string::npos);
  const auto rows = split_csv(csv);
  ASSERT_EQ(rows.size(), 1u + 2u * 5u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 9u);
    EXPECT_EQ(rows[i][8], "ok");
  }
  EXPECT_EQ(rows[1][0], "0");
  EXPECT_EQ(rows.back()[0], "1");
  EXPECT_EQ(rows.back()[1], "20");
}

TEST(Output, UnrequestedMetricCellsAreEmpty) {
  RunConfig c = parse_config(small_config(1));
  c.metrics.list = {"loglik"};
  const auto rows = split_csv(metrics_csv(run_experiment(c)));
  EXPECT_EQ(rows[1][2], "");
  EXPECT_EQ(rows[1][3], "");
  EXPECT_NE(rows[1][4], "");
}

TEST(Harness, RepeatedRunsAreIdentical) {
  const RunConfig c = parse_config(small_config(2));
  const auto a = run_experiment(c), b = run_experiment(c);
  EXPECT_EQ(strip_wall_ms(metrics_csv(a)), strip_wall_ms(metrics_csv(b)));
  EXPECT_EQ(particles_csv(a, 2), particles_csv(b, 2));
  EXPECT_EQ(summary_json(c, a).dump(), summary_json(c, b).dump());
}

TEST(Harness, WorkerCountDoesNotChangeResults) {
  RunConfig c = parse_config(small_config(4));
  const auto a = run_experiment(c);
  c.trials.workers = 3;
  const auto b = run_experiment(c);
  EXPECT_EQ(strip_wall_ms(metrics_csv(a)), strip_wall_ms(metrics_csv(b)));
  EXPECT_EQ(particles_csv(a, 2), particles_csv(b, 2));
}

TEST(Harness, TrialsAreIsolated) {
  // Trial 1 of a 3-trial run equals trial 0 of a run whose base seed is one larger.
  RunConfig c = parse_config(small_config(3));
  const auto all = run_experiment(c);
  c.trials.base_seed += 1;
  c.trials.count = 1;
  const auto one = run_experiment(c);
  EXPECT_TRUE(all[1].final.Y == one[0].final.Y);
  EXPECT_TRUE(all[1].final.w == one[0].final.w);
  ASSERT_EQ(all[1].report.rows.size(), one[0].report.rows.size());
  for (std::size_t i = 0; i < one[0].report.rows.size(); ++i)
    EXPECT_EQ(all[1].report.rows[i].mmd2, one[0].report.rows[i].mmd2);
}

TEST(Harness, EveryAlgorithmRuns) {
  for (const auto& name : algorithm_names()) {
    const auto res = run_experiment(parse_config(small_config(1, name)));
    ASSERT_EQ(res.size(), 1u) << name;
    EXPECT_TRUE(survived(res[0])) << name << ": " << res[0].message;
    EXPECT_EQ(res[0].final.Y.rows(), 6) << name;
    EXPECT_TRUE(res[0].final.Y.allFinite()) << name;
    ASSERT_TRUE(res[0].coverage.has_value()) << name;
  }
}

TEST(Harness, AggregationMatchesCsvRecomputation) {
  const RunConfig c = parse_config(small_config(4));
  const auto res = run_experiment(c);
  const auto rows = split_csv(metrics_csv(res));
  const auto agg = aggregate(c, res);
  const std::vector<std::pair<std::string, int>> columns{{"mmd2", 2}, {"ksd", 3}, {"loglik", 4}};
  for (const auto& [name, col] : columns) {
    std::vector<double> finals;
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i][1] == "20") finals.push_back(std::strtod(rows[i][static_cast<std::size_t>(col)].c_str(), nullptr));
    ASSERT_EQ(finals.size(), 4u);
    double mean = 0.0;
    for (double x : finals) mean += x / 4.0;
    double ss = 0.0;
    for (double x : finals) ss += (x - mean) * (x - mean);
    const MetricSummary& s = agg.at(name);
    EXPECT_EQ(s.n, 4);
    EXPECT_NEAR(s.mean, mean, 1e-12 * std::max(1.0, std::abs(mean))) << name;
    EXPECT_NEAR(s.std, std::sqrt(ss / 3.0), 1e-12 * std::max(1.0, std::abs(mean))) << name;
    EXPECT_NEAR(s.p05, quantile(finals, 0.05), 1e-12) << name;
    EXPECT_NEAR(s.p95, quantile(finals, 0.95), 1e-12) << name;
  }
}

TEST(Harness, FailedTrialsAreExcludedFromAggregates) {
  const RunConfig c = parse_config(small_config(2));
  auto res = run_experiment(c);
  res[1].failed = true;
  res[1].status = RunStatus::diverged;
  const auto agg = aggregate(c, res);
  EXPECT_EQ(agg.at("mmd2").n, 1);
  EXPECT_DOUBLE_EQ(agg.at("mmd2").mean, *res[0].report.rows.back().mmd2);
  EXPECT_EQ(summary_json(c, res)["surviving_trials"], 1);
}

TEST(Output, ParticlesCsvRoundTrip) {
  const auto res = run_experiment(parse_config(small_config(2)));
  const ParticleTable t = read_particles_csv(particles_csv(res, 2));
  ASSERT_EQ(t.trials.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(t.configs[k].Y, res[k].final.Y);
    EXPECT_NEAR(t.configs[k].w.sum(), 1.0, 1e-12);
  }
}

TEST(Output, WriteOutputsCreatesRequestedFiles) {
  RunConfig c = parse_config(small_config(2));
  c.output.formats = {"csv", "json", "svg"};
  const fs::path dir = fs::temp_directory_path() / "msip_test_harness_outputs";
  fs::remove_all(dir);
  write_outputs(c, run_experiment(c), dir);
  for (const char* f : {"metrics.csv", "summary.json", "particles.csv", "trial_0.svg", "trial_1.svg"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const json s = json::parse(read_file(dir / "summary.json"));
  EXPECT_EQ(serialize_config(parse_config(s["config_echo"].dump())), serialize_config(c));
  fs::remove_all(dir);
}

TEST(Svg, SingleParticleIsWellFormed) {
  const TargetDensity t = make_benchmark("gmm5-aniso-2d", 2, 0);
  ParticleConfiguration pc{ParticleMatrix::Constant(1, 2, 1.0), Vector::Ones(1), 0.0};
  const std::string s = scatter_svg(pc, t, {40, 560.0, 560.0, "a < b & c"});
  EXPECT_EQ(s.rfind("<?xml", 0), 0u);
  EXPECT_NE(s.find("<svg"), std::string::npos);
  EXPECT_EQ(s.substr(s.size() - 7), "</svg>\n");
  EXPECT_NE(s.find("a &lt; b &amp; c"), std::string::npos);
  std::size_t circles = 0;
  for (std::size_t p = s.find("<circle"); p != std::string::npos; p = s.find("<circle", p + 1)) ++circles;
  EXPECT_EQ(circles, 1u);
  EXPECT_NE(s.find("<path"), std::string::npos);
}

TEST(Svg, EqualWeightsShareOneColor) {
  const TargetDensity t = make_benchmark("gmm5-aniso-2d", 2, 0);
  ParticleConfiguration pc{t.sampler(10, 3), Vector::Constant(10, 0.1), 0.0};
  const std::string s = scatter_svg(pc, t, {40, 560.0, 560.0, ""});
  std::set<std::string> fills;
  for (std::size_t p = s.find("<circle"); p != std::string::npos; p = s.find("<circle", p + 1)) {
    const std::size_t f = s.find("fill=\"", p) + 6;
    fills.insert(s.substr(f, 7));
  }
  ASSERT_EQ(fills.size(), 1u);
  EXPECT_EQ(*fills.begin(), svg_detail::diverging(1.0));
}

TEST(Svg, NegativeWeightsUseTheOtherHue) {
  EXPECT_NE(svg_detail::diverging(-1.0), svg_detail::diverging(1.0));
  EXPECT_EQ(svg_detail::diverging(0.0), "#f7f7f7");
  EXPECT_EQ(svg_detail::diverging(5.0), svg_detail::diverging(1.0));
}

TEST(Svg, OtherDimensionsAreRejected) {
  const TargetDensity t = make_benchmark("gmm", 3, 0);
  ParticleConfiguration pc{t.sampler(4, 1), Vector::Constant(4, 0.25), 0.0};
  EXPECT_EQ(code_of([&] { scatter_svg(pc, t); }), ErrorCode::unsupported_dimension);
}

TEST(Svg, ContourOfAPlaneIsAStraightLine) {
  const Vector xs = Vector::LinSpaced(5, 0.0, 4.0), ys = xs;
  Matrix f(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) f(i, j) = xs(i);
  const auto segs = svg_detail::contour(f, xs, ys, 1.5);
  EXPECT_EQ(segs.size(), 4u);
  for (const auto& g : segs) {
    EXPECT_DOUBLE_EQ(g.x0, 1.5);
    EXPECT_DOUBLE_EQ(g.x1, 1.5);
  }
}

TEST(Diagnostics, GradientAndInvarianceSuitesPassOnGmm) {
  const TargetDensity t = make_benchmark("gmm", 2, 4);
  EXPECT_LE(gradient_check_error(t, 5, {0.5, 1e-6}, 3, 2), 1e-5);
  EXPECT_LE(invariance_error(t, t.sampler(6, 1), {0.5, 1e-6}, 3), 1e-10);
}

TEST(Diagnostics, StripWallMsBlanksOnlyThatColumn) {
  EXPECT_EQ(strip_wall_ms("h\n0,5,1,2,3,17.5,10,10,ok\n"), "h\n0,5,1,2,3,,10,10,ok\n");
}
