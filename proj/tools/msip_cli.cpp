// msip_cli: experiment runner and diagnostic suites.
//
//   msip_cli run <config.json> [--seed N] [--out DIR] [--quiet]
//   msip_cli grad-check <config.json>
//   msip_cli invariance <config.json>
//   msip_cli plot <result-dir>
//   msip_cli bench [--out DIR]
//
// Exit codes: 0 ok, 1 config or usage error, 2 numerical failure.
// MSIP_SEED, when set, overrides both the config and --seed.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "msip/harness/acceptance.hpp"
#include "msip/harness/config.hpp"
#include "msip/harness/experiment.hpp"
#include "msip/harness/output.hpp"

namespace fs = std::filesystem;
using namespace msip;
using namespace msip::harness;

namespace {

constexpr int kOk = 0, kConfigError = 1, kNumericalFailure = 2;

struct Options {
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

std::uint64_t parse_seed(const std::string& s, const char* what) {
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0' || errno != 0 || s[0] == '-')
    throw Error(ErrorCode::config, std::string(what) + ": not a non-negative integer: " + s);
  return v;
}

RunConfig load(const std::string& path, const Options& o) {
  RunConfig c = parse_config(read_file(path));
  if (o.seed) c.trials.base_seed = *o.seed;
  if (const char* env = std::getenv("MSIP_SEED"); env && *env) c.trials.base_seed = parse_seed(env, "MSIP_SEED");
  return c;
}

int cmd_run(const std::string& path, const Options& o) {
  const RunConfig c = load(path, o);
  const fs::path dir = o.out.empty() ? fs::path(c.output.directory) : fs::path(o.out);
  const auto results = run_experiment(c);
  const auto files = write_outputs(c, results, dir);
  int ok = 0;
  for (const auto& r : results) ok += survived(r) ? 1 : 0;
  if (!o.quiet) {
    std::printf("%s on %s-%d: %d/%d trials survived\n", c.algorithm.name.c_str(), c.target.name.c_str(),
                c.target.dim, ok, c.trials.count);
    for (const auto& [name, s] : aggregate(c, results))
      std::printf("  %-8s n=%d mean=%.6g std=%.3g p05=%.6g p95=%.6g\n", name.c_str(), s.n, s.mean, s.std, s.p05,
                  s.p95);
    for (const auto& f : files) std::printf("  wrote %s\n", f.string().c_str());
  }
  return c.trials.count > 0 && ok == 0 ? kNumericalFailure : kOk;
}

int cmd_grad_check(const std::string& path, const Options& o) {
  const RunConfig c = load(path, o);
  const TargetDensity t = make_target(c.target);
  const double err =
      gradient_check_error(t, c.particles.M, {c.algorithm.sigma, c.algorithm.lambda}, 20, c.trial_seed(0));
  if (!o.quiet) std::printf("max relative error %.3e over 20 configurations (limit 1e-05)\n", err);
  return err <= 1e-5 ? kOk : kNumericalFailure;
}

int cmd_invariance(const std::string& path, const Options& o) {
  const RunConfig c = load(path, o);
  const TargetDensity t = make_target(c.target);
  const std::uint64_t seed = c.trial_seed(0);
  const ParticleMatrix y = t.sampler(c.particles.M, derive_seed(seed, 0, 0x1417));
  std::string label;
  const double err = invariance_error(t, y, {c.algorithm.sigma, c.algorithm.lambda}, seed, &label);
  if (!o.quiet)
    std::printf("max relative map change %.3e under log-density offsets of +-40 (worst: %s, limit 1e-10)\n", err,
                label.empty() ? "none" : label.c_str());
  return err <= 1e-10 ? kOk : kNumericalFailure;
}

int cmd_plot(const std::string& dir_arg, const Options& o) {
  const fs::path dir(dir_arg);
  const json summary = json::parse(read_file(dir / "summary.json"));
  if (!summary.contains("config_echo")) throw Error(ErrorCode::config, "summary.json: no config_echo");
  const RunConfig c = parse_config(summary["config_echo"].dump());
  const ParticleTable table = read_particles_csv(read_file(dir / "particles.csv"));
  const TargetDensity t = make_target(c.target);
  const fs::path out = o.out.empty() ? dir : fs::path(o.out);
  for (std::size_t k = 0; k < table.trials.size(); ++k) {
    const fs::path file = out / svg_name(table.trials[k]);
    write_file(file, scatter_svg(table.configs[k], t, {200, 560.0, 560.0, svg_title(c, table.trials[k])}));
    if (!o.quiet) std::printf("wrote %s\n", file.string().c_str());
  }
  return kOk;
}

int cmd_bench(const Options& o) {
  const fs::path scratch = o.out.empty() ? fs::temp_directory_path() / "msip_bench" : fs::path(o.out);
  bool all = true;
  for (const auto& f : acceptance_suite(scratch)) {
    const CriterionResult r = timed(f);
    all = all && r.pass;
    std::printf("%s\n", format_criterion(r).c_str());
    std::fflush(stdout);
  }
  return all ? kOk : kNumericalFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-shift interacting particle samplers: experiments and checks"};
  app.require_subcommand(1);
  Options o;
  std::string seed_text, config, result_dir;
  app.add_option("--seed", seed_text, "Base seed (overrides the config)");
  app.add_option("--out", o.out, "Output directory (overrides the config)");
  app.add_flag("--quiet", o.quiet, "Suppress progress output");
  app.fallthrough();

  auto* run = app.add_subcommand("run", "Run a full experiment");
  run->add_option("config", config, "Config JSON")->required();
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the objective gradient");
  grad->add_option("config", config, "Config JSON")->required();
  auto* inv = app.add_subcommand("invariance", "Normalization-invariance check of the MSIP map");
  inv->add_option("config", config, "Config JSON")->required();
  auto* plot = app.add_subcommand("plot", "Write SVG scatter plots for a result directory");
  plot->add_option("result-dir", result_dir, "Directory written by run")->required();
  auto* bench = app.add_subcommand("bench", "Run the acceptance matrix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kConfigError;
  }

  try {
    if (!seed_text.empty()) o.seed = parse_seed(seed_text, "--seed");
    if (run->parsed()) return cmd_run(config, o);
    if (grad->parsed()) return cmd_grad_check(config, o);
    if (inv->parsed()) return cmd_invariance(config, o);
    if (plot->parsed()) return cmd_plot(result_dir, o);
    if (bench->parsed()) return cmd_bench(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.is_config_error() || e.code() == ErrorCode::io ? kConfigError : kNumericalFailure;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
  std::cerr << app.help();
  return kConfigError;
}
