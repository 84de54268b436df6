#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "msip/error.hpp"
#include "msip/metrics.hpp"
#include "msip/msip.hpp"
#include "msip/targets.hpp"

namespace msip::harness {

struct SvgOptions {
  int grid = 200;
  double width = 560.0;
  double height = 560.0;
  std::string title;
};

namespace svg_detail {

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

inline std::string hex(int r, int g, int b) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

/// Blue (-1) through white (0) to red (+1).
inline std::string diverging(double t) {
  t = std::clamp(t, -1.0, 1.0);
  const std::array<double, 3> neg{33, 102, 172}, mid{247, 247, 247}, pos{178, 24, 43};
  const auto& end = t < 0 ? neg : pos;
  const double a = std::abs(t);
  return hex(static_cast<int>(std::lround(mid[0] + a * (end[0] - mid[0]))),
             static_cast<int>(std::lround(mid[1] + a * (end[1] - mid[1]))),
             static_cast<int>(std::lround(mid[2] + a * (end[2] - mid[2]))));
}

struct Segment {
  double x0, y0, x1, y1;
};

/// Marching squares on f (nx x ny, row index = x) at one level. Saddle cells
/// are split by the cell-center average.
inline std::vector<Segment> contour(const Matrix& f, const Vector& xs, const Vector& ys, double level) {
  std::vector<Segment> out;
  const auto lerp = [&](double a, double b, double fa, double fb) {
    const double den = fb - fa;
    return den == 0.0 ? 0.5 * (a + b) : a + (level - fa) / den * (b - a);
  };
  for (Eigen::Index i = 0; i + 1 < f.rows(); ++i)
    for (Eigen::Index j = 0; j + 1 < f.cols(); ++j) {
      const double f00 = f(i, j), f10 = f(i + 1, j), f11 = f(i + 1, j + 1), f01 = f(i, j + 1);
      const int code = (f00 > level) | ((f10 > level) << 1) | ((f11 > level) << 2) | ((f01 > level) << 3);
      if (code == 0 || code == 15) continue;
      const double x0 = xs(i), x1 = xs(i + 1), y0 = ys(j), y1 = ys(j + 1);
      // Edge crossings: bottom (y0), right (x1), top (y1), left (x0).
      const double bx = lerp(x0, x1, f00, f10), ry = lerp(y0, y1, f10, f11);
      const double tx = lerp(x0, x1, f01, f11), ly = lerp(y0, y1, f00, f01);
      const Segment b_r{bx, y0, x1, ry}, b_t{bx, y0, tx, y1}, b_l{bx, y0, x0, ly};
      const Segment r_t{x1, ry, tx, y1}, r_l{x1, ry, x0, ly}, t_l{tx, y1, x0, ly};
      const bool center_high = 0.25 * (f00 + f10 + f11 + f01) > level;
      switch (code) {
        case 1: case 14: out.push_back(b_l); break;
        case 2: case 13: out.push_back(b_r); break;
        case 3: case 12: out.push_back(r_l); break;
        case 4: case 11: out.push_back(r_t); break;
        case 6: case 9: out.push_back(b_t); break;
        case 7: case 8: out.push_back(t_l); break;
        case 5:
          if (center_high) { out.push_back(b_r); out.push_back(t_l); }
          else { out.push_back(b_l); out.push_back(r_t); }
          break;
        case 10:
          if (center_high) { out.push_back(b_l); out.push_back(r_t); }
          else { out.push_back(b_r); out.push_back(t_l); }
          break;
      }
    }
  return out;
}

}  // namespace svg_detail

/// Weighted scatter over density contours of the target. The view is the
/// bounding box of the particles (and known modes) enlarged by 1.2.
inline std::string scatter_svg(const ParticleConfiguration& pc, const TargetDensity& t,
                               const SvgOptions& opt = {}) {
  using namespace svg_detail;
  if (t.dim != 2 || pc.Y.cols() != 2)
    throw Error(ErrorCode::unsupported_dimension,
                "scatter plots need d = 2, got d = " + std::to_string(pc.Y.cols()));
  require(pc.Y.rows() >= 1 && pc.Y.rows() == pc.w.size(), "scatter plot needs matching particles and weights");
  require(opt.grid >= 2, "scatter plot grid needs at least 2 points per side");

  Eigen::RowVector2d lo = pc.Y.colwise().minCoeff(), hi = pc.Y.colwise().maxCoeff();
  if (t.modes) {
    lo = lo.cwiseMin(t.modes->colwise().minCoeff());
    hi = hi.cwiseMax(t.modes->colwise().maxCoeff());
  }
  Eigen::RowVector2d center = 0.5 * (lo + hi), half = 0.6 * (hi - lo);
  half = half.cwiseMax(1.0);
  lo = center - half;
  hi = center + half;

  const int n = opt.grid;
  const Vector xs = Vector::LinSpaced(n, lo(0), hi(0)), ys = Vector::LinSpaced(n, lo(1), hi(1));
  Matrix f(n, n);
  Vector p(2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      p << xs(i), ys(j);
      f(i, j) = t.log_density(p);
    }
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < f.size(); ++k)
    if (std::isfinite(f.data()[k])) top = std::max(top, f.data()[k]);

  const double margin = 40.0, legend_w = 90.0;
  const double pw = opt.width - 2 * margin - legend_w, ph = opt.height - 2 * margin;
  const auto sx = [&](double x) { return margin + (x - lo(0)) / (hi(0) - lo(0)) * pw; };
  const auto sy = [&](double y) { return margin + (hi(1) - y) / (hi(1) - lo(1)) * ph; };

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(opt.width) + "\" height=\"" + fmt(opt.height) +
       "\" viewBox=\"0 0 " + fmt(opt.width) + " " + fmt(opt.height) + "\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + fmt(opt.width) + "\" height=\"" + fmt(opt.height) + "\" fill=\"white\"/>\n";
  if (!opt.title.empty()) {
    std::string title;
    for (char ch : opt.title) {
      if (ch == '<') title += "&lt;";
      else if (ch == '>') title += "&gt;";
      else if (ch == '&') title += "&amp;";
      else title += ch;
    }
    s += "<text x=\"" + fmt(margin) + "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" + title + "</text>\n";
  }
  s += "<rect x=\"" + fmt(margin) + "\" y=\"" + fmt(margin) + "\" width=\"" + fmt(pw) + "\" height=\"" + fmt(ph) +
       "\" fill=\"none\" stroke=\"#444\"/>\n";

  // Contours of log density at fixed drops below the grid maximum.
  if (std::isfinite(top)) {
    const std::array<double, 6> drops{0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
    s += "<g fill=\"none\" stroke-width=\"0.8\">\n";
    for (std::size_t k = 0; k < drops.size(); ++k) {
      const auto segs = contour(f, xs, ys, top - drops[k]);
      if (segs.empty()) continue;
      const int shade = 90 + static_cast<int>(25 * k);
      std::string d;
      for (const auto& g : segs)
        d += "M" + fmt(sx(g.x0)) + " " + fmt(sy(g.y0)) + "L" + fmt(sx(g.x1)) + " " + fmt(sy(g.y1));
      s += "<path stroke=\"" + hex(shade, shade, shade) + "\" d=\"" + d + "\"/>\n";
    }
    s += "</g>\n";
  }

  Vector w = pc.w;
  try {
    w = normalize_weights(w);
  } catch (const Error&) {
  }
  const double wmax = std::max(w.cwiseAbs().maxCoeff(), 1e-300);
  s += "<g stroke=\"#222\" stroke-width=\"0.6\">\n";
  for (Eigen::Index i = 0; i < pc.Y.rows(); ++i)
    s += "<circle cx=\"" + fmt(sx(pc.Y(i, 0))) + "\" cy=\"" + fmt(sy(pc.Y(i, 1))) + "\" r=\"4\" fill=\"" +
         diverging(w(i) / wmax) + "\"/>\n";
  s += "</g>\n";

  // Legend: color bar from -max|w| to +max|w|.
  const double lx = opt.width - legend_w + 10, ly = margin, lh = ph * 0.6;
  s += "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<text x=\"" + fmt(lx) + "\" y=\"" + fmt(ly - 8) + "\">weight</text>\n";
  const int steps = 20;
  for (int k = 0; k < steps; ++k) {
    const double v = 1.0 - 2.0 * (k + 0.5) / steps;
    s += "<rect x=\"" + fmt(lx) + "\" y=\"" + fmt(ly + k * lh / steps) + "\" width=\"16\" height=\"" +
         fmt(lh / steps + 0.5) + "\" fill=\"" + diverging(v) + "\"/>\n";
  }
  char label[64];
  std::snprintf(label, sizeof label, "%.3g", wmax);
  s += "<text x=\"" + fmt(lx + 22) + "\" y=\"" + fmt(ly + 10) + "\">+" + label + "</text>\n";
  s += "<text x=\"" + fmt(lx + 22) + "\" y=\"" + fmt(ly + lh / 2 + 4) + "\">0</text>\n";
  s += "<text x=\"" + fmt(lx + 22) + "\" y=\"" + fmt(ly + lh) + "\">-" + label + "</text>\n";
  s += "<text x=\"" + fmt(lx) + "\" y=\"" + fmt(ly + lh + 22) + "\">contours:</text>\n";
  s += "<text x=\"" + fmt(lx) + "\" y=\"" + fmt(ly + lh + 36) + "\">log density</text>\n";
  s += "</g>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace msip::harness
