#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "msip/error.hpp"
#include "msip/harness/experiment.hpp"
#include "msip/harness/svg.hpp"

namespace msip::harness {

inline const char* csv_header() {
  return "trial,iteration,mmd2,ksd,loglik,wall_ms,density_evals,score_evals,status\n";
}

/// 17 significant digits, C locale.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string optional_cell(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

/// Metrics CSV, one row per (trial, recorded iteration), LF line ends.
inline std::string metrics_csv(const std::vector<TrialResult>& results) {
  std::string out = csv_header();
  for (const auto& r : results) {
    const std::string status = to_string(r.status);
    for (const auto& row : r.report.rows) {
      out += std::to_string(r.trial) + ',' + std::to_string(row.iteration) + ',' + optional_cell(row.mmd2) + ',' +
             optional_cell(row.ksd) + ',' + optional_cell(row.loglik) + ',' + format_double(row.wall_ms) + ',' +
             std::to_string(row.density_evals) + ',' + std::to_string(row.score_evals) + ',' + status + '\n';
    }
  }
  return out;
}

/// Final configurations: trial,particle,x0..x{d-1},w (normalized when possible).
inline std::string particles_csv(const std::vector<TrialResult>& results, int d) {
  std::string out = "trial,particle";
  for (int j = 0; j < d; ++j) out += ",x" + std::to_string(j);
  out += ",w\n";
  for (const auto& r : results) {
    if (r.final.Y.rows() == 0) continue;
    Vector w = r.final.w;
    try {
      w = normalize_weights(w);
    } catch (const Error&) {
    }
    for (Eigen::Index i = 0; i < r.final.Y.rows(); ++i) {
      out += std::to_string(r.trial) + ',' + std::to_string(i);
      for (int j = 0; j < d; ++j) out += ',' + format_double(r.final.Y(i, j));
      out += ',' + format_double(w(i)) + '\n';
    }
  }
  return out;
}

struct ParticleTable {
  std::vector<int> trials;  // distinct, in file order
  std::vector<ParticleConfiguration> configs;
};

inline ParticleTable read_particles_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("trial,particle", 0) != 0)
    throw Error(ErrorCode::io, "particles.csv: missing header");
  ParticleTable t;
  std::vector<std::vector<std::vector<double>>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(std::strtod(cell.c_str(), nullptr));
    if (cells.size() < 4) throw Error(ErrorCode::io, "particles.csv: short row");
    const int trial = static_cast<int>(cells[0]);
    if (t.trials.empty() || t.trials.back() != trial) {
      t.trials.push_back(trial);
      rows.emplace_back();
    }
    rows.back().push_back(std::vector<double>(cells.begin() + 2, cells.end()));
  }
  for (const auto& block : rows) {
    const auto d = static_cast<Eigen::Index>(block[0].size() - 1);
    ParticleConfiguration pc{ParticleMatrix(static_cast<Eigen::Index>(block.size()), d),
                             Vector(static_cast<Eigen::Index>(block.size())), 0.0};
    for (std::size_t i = 0; i < block.size(); ++i) {
      for (Eigen::Index j = 0; j < d; ++j) pc.Y(static_cast<Eigen::Index>(i), j) = block[i][static_cast<std::size_t>(j)];
      pc.w(static_cast<Eigen::Index>(i)) = block[i].back();
    }
    t.configs.push_back(std::move(pc));
  }
  return t;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorCode::io, "write failed for " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::string svg_name(int trial) { return "trial_" + std::to_string(trial) + ".svg"; }

inline std::string svg_title(const RunConfig& c, int trial) {
  return c.algorithm.name + " on " + c.target.name + ", trial " + std::to_string(trial);
}

/// Writes every requested format into `dir`: metrics.csv, summary.json,
/// particles.csv and one trial_<t>.svg per finished trial.
inline std::vector<std::filesystem::path> write_outputs(const RunConfig& c, const std::vector<TrialResult>& results,
                                                        const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  const auto put = [&](const std::string& name, const std::string& text) {
    write_file(dir / name, text);
    written.push_back(dir / name);
  };
  if (c.output.wants("csv")) put("metrics.csv", metrics_csv(results));
  if (c.output.wants("json")) put("summary.json", summary_json(c, results).dump(2) + "\n");
  if (c.output.wants("particles") || c.output.wants("svg")) put("particles.csv", particles_csv(results, c.target.dim));
  if (c.output.wants("svg")) {
    const TargetDensity t = make_target(c.target);
    for (const auto& r : results)
      if (r.final.Y.rows() > 0 && r.final.Y.allFinite())
        put(svg_name(r.trial), scatter_svg(r.final, t, {200, 560.0, 560.0, svg_title(c, r.trial)}));
  }
  return written;
}

}  // namespace msip::harness
