#include "soma/harness/figures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace soma {

namespace {

std::string f2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string g3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

const char* cohort_color(const std::string& cohort) {
  if (cohort == "full") return "#1b6ca8";
  if (cohort == "no_conation") return "#d1495b";
  if (cohort == "no_body_to_g") return "#4f9d69";
  return "#666666";
}

struct Range {
  double lo = 0.0, hi = 1.0;
  void include(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Range padded() const {
    const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
    return {lo - 0.05 * span, hi + 0.05 * span};
  }
};

Range range_of(const std::vector<double>& v, bool from_zero = false) {
  Range r{from_zero ? 0.0 : INFINITY, from_zero ? 0.0 : -INFINITY};
  for (double x : v) r.include(x);
  if (!std::isfinite(r.lo)) r = {0.0, 1.0};
  return r.padded();
}

/// One rectangular plotting area inside a document.
class Panel {
 public:
  Panel(std::ostringstream& out, double x0, double y0, double w, double h, Range xr, Range yr)
      : out_(out), x0_(x0), y0_(y0), w_(w), h_(h), xr_(xr), yr_(yr) {}

  double px(double x) const { return x0_ + (x - xr_.lo) / (xr_.hi - xr_.lo) * w_; }
  double py(double y) const { return y0_ + h_ - (y - yr_.lo) / (yr_.hi - yr_.lo) * h_; }

  void frame(const std::string& title, const std::string& xlabel, const std::string& ylabel, bool x_ticks = true) {
    out_ << "<rect x=\"" << f2(x0_) << "\" y=\"" << f2(y0_) << "\" width=\"" << f2(w_) << "\" height=\"" << f2(h_)
         << "\" fill=\"none\" stroke=\"#333\"/>\n";
    text(x0_ + w_ / 2, y0_ - 8, title, "middle", 13);
    text(x0_ + w_ / 2, y0_ + h_ + 34, xlabel, "middle", 11);
    out_ << "<text x=\"" << f2(x0_ - 42) << "\" y=\"" << f2(y0_ + h_ / 2) << "\" font-size=\"11\" text-anchor=\"middle\""
         << " transform=\"rotate(-90 " << f2(x0_ - 42) << " " << f2(y0_ + h_ / 2) << ")\">" << escape(ylabel)
         << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
      const double yv = yr_.lo + (yr_.hi - yr_.lo) * i / 4.0;
      line(x0_ - 4, py(yv), x0_, py(yv), "#333");
      text(x0_ - 6, py(yv) + 4, g3(yv), "end", 10);
      if (x_ticks) {
        const double xv = xr_.lo + (xr_.hi - xr_.lo) * i / 4.0;
        line(px(xv), y0_ + h_, px(xv), y0_ + h_ + 4, "#333");
        text(px(xv), y0_ + h_ + 16, g3(xv), "middle", 10);
      }
    }
  }

  void line(double ax, double ay, double bx, double by, const std::string& color, double width = 1.0,
            const std::string& dash = "") {
    out_ << "<line x1=\"" << f2(ax) << "\" y1=\"" << f2(ay) << "\" x2=\"" << f2(bx) << "\" y2=\"" << f2(by)
         << "\" stroke=\"" << color << "\" stroke-width=\"" << f2(width) << "\"";
    if (!dash.empty()) out_ << " stroke-dasharray=\"" << dash << "\"";
    out_ << "/>\n";
  }

  void data_line(double ax, double ay, double bx, double by, const std::string& color, const std::string& dash = "") {
    line(px(ax), py(ay), px(bx), py(by), color, 1.0, dash);
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color, double opacity = 1.0) {
    if (pts.empty()) return;
    out_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-opacity=\"" << f2(opacity) << "\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) out_ << (i ? " " : "") << f2(px(pts[i].first)) << "," << f2(py(pts[i].second));
    out_ << "\"/>\n";
  }

  void dot(double x, double y, const std::string& color, double r = 2.5, double opacity = 0.8) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    out_ << "<circle cx=\"" << f2(px(x)) << "\" cy=\"" << f2(py(y)) << "\" r=\"" << f2(r) << "\" fill=\"" << color
         << "\" fill-opacity=\"" << f2(opacity) << "\"/>\n";
  }

  void bar(double x_center, double width, double y, const std::string& color) {
    const double top = py(std::max(y, 0.0)), bottom = py(std::min(y, 0.0));
    out_ << "<rect x=\"" << f2(px(x_center - width / 2)) << "\" y=\"" << f2(top) << "\" width=\""
         << f2(px(x_center + width / 2) - px(x_center - width / 2)) << "\" height=\"" << f2(bottom - top)
         << "\" fill=\"" << color << "\" fill-opacity=\"0.35\" stroke=\"" << color << "\"/>\n";
  }

  /// Median line, IQR box and whiskers to the extremes.
  void box(double x_center, double width, const std::vector<double>& v, const std::string& color) {
    if (v.empty()) return;
    const Spread s = spread(v);
    const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
    const double l = px(x_center - width / 2), r = px(x_center + width / 2);
    out_ << "<rect x=\"" << f2(l) << "\" y=\"" << f2(py(s.q75)) << "\" width=\"" << f2(r - l) << "\" height=\""
         << f2(py(s.q25) - py(s.q75)) << "\" fill=\"" << color << "\" fill-opacity=\"0.25\" stroke=\"" << color
         << "\"/>\n";
    line(l, py(s.median), r, py(s.median), color, 2.0);
    line(px(x_center), py(s.q75), px(x_center), py(hi), color);
    line(px(x_center), py(s.q25), px(x_center), py(lo), color);
  }

  void whisker(double x_center, const Spread& s, const std::string& color) {
    line(px(x_center), py(s.q25), px(x_center), py(s.q75), color, 1.5);
  }

  void text(double x, double y, const std::string& s, const char* anchor = "start", int size = 11) {
    out_ << "<text x=\"" << f2(x) << "\" y=\"" << f2(y) << "\" font-size=\"" << size << "\" text-anchor=\"" << anchor
         << "\">" << escape(s) << "</text>\n";
  }

  void label_x(double x, const std::string& s) { text(px(x), y0_ + h_ + 16, s, "middle", 10); }

 private:
  std::ostringstream& out_;
  double x0_, y0_, w_, h_;
  Range xr_, yr_;
};

std::ostringstream open_doc(const AssayBundle& b, double w, double h, const std::string& title) {
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<!-- config_hash " << b.config_hash << " -->\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f2(w) << "\" height=\"" << f2(h)
      << "\" viewBox=\"0 0 " << f2(w) << " " << f2(h) << "\" font-family=\"sans-serif\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << f2(w / 2) << "\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">" << escape(title)
      << "</text>\n";
  return out;
}

std::string close_doc(std::ostringstream& out) {
  out << "</svg>\n";
  return out.str();
}

std::vector<std::string> cohorts_of(const AssayBundle& b) {
  std::vector<std::string> out;
  for (const auto& c : b.stats.cohorts) out.push_back(c.name);
  return out;
}

template <typename F>
std::vector<double> values(const AssayBundle& b, const std::string& cohort, F field) {
  std::vector<double> out;
  for (const auto& r : b.runs)
    if (r.row.cohort == cohort) out.push_back(field(r));
  return out;
}

/// Seed dots jittered deterministically around x.
void seed_dots(Panel& p, double x, const std::vector<double>& v, const std::string& color) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double jitter = v.size() > 1 ? (static_cast<double>(i) / (v.size() - 1) - 0.5) * 0.3 : 0.0;
    p.dot(x + jitter, v[i], color, 2.5, 0.9);
  }
}

template <typename F>
void cohort_bars(std::ostringstream& out, const AssayBundle& b, double x0, const std::string& title,
                 const std::string& ylabel, F field, double reference = NAN) {
  const auto cohorts = cohorts_of(b);
  std::vector<double> all;
  for (const auto& c : cohorts) {
    auto v = values(b, c, field);
    all.insert(all.end(), v.begin(), v.end());
  }
  if (std::isfinite(reference)) all.push_back(reference);
  Panel p(out, x0, 60, 260, 240, Range{-0.5, cohorts.size() - 0.5}, range_of(all, true));
  p.frame(title, "cohort", ylabel, false);
  for (std::size_t i = 0; i < cohorts.size(); ++i) {
    const auto v = values(b, cohorts[i], field);
    if (v.empty()) continue;
    const Spread s = spread(v);
    p.bar(static_cast<double>(i), 0.6, s.median, cohort_color(cohorts[i]));
    p.whisker(static_cast<double>(i), s, "#222");
    seed_dots(p, static_cast<double>(i), v, cohort_color(cohorts[i]));
    p.label_x(static_cast<double>(i), cohorts[i]);
  }
  if (std::isfinite(reference)) p.data_line(-0.5, reference, cohorts.size() - 0.5, reference, "#888", "4 3");
}

std::string occupancy_svg(const AssayBundle& b) {
  auto out = open_doc(b, 680, 360, "Zone occupancy over the final training episodes (median, IQR, seeds)");
  cohort_bars(out, b, 70, "top-right zone", "fraction of steps", [](const RunAssays& r) { return r.row.top_right_occupancy; },
              2.0 / kNumZones);
  cohort_bars(out, b, 400, "bottom zones", "fraction of steps", [](const RunAssays& r) { return r.row.bottom_occupancy; });
  return close_doc(out);
}

std::string readiness_svg(const AssayBundle& b) {
  auto out = open_doc(b, 620, 360, "Conative target q(a), median across seeds");
  const auto cohorts = cohorts_of(b);
  std::vector<double> all;
  for (const auto& c : b.stats.cohorts)
    for (const auto& q : c.q) all.push_back(q.q75);
  Panel p(out, 70, 60, 500, 240, Range{-0.5, kNumActions - 0.5}, range_of(all, true));
  p.frame("readiness", "action", "q(a)", false);
  const double width = 0.8 / std::max<std::size_t>(1, cohorts.size());
  for (std::size_t a = 0; a < kNumActions; ++a) {
    p.label_x(static_cast<double>(a), std::string(action_name(kAllActions[a])));
    for (std::size_t i = 0; i < b.stats.cohorts.size(); ++i) {
      const auto& c = b.stats.cohorts[i];
      const double x = a - 0.4 + width * (i + 0.5);
      p.bar(x, width * 0.9, c.q[a].median, cohort_color(c.name));
      p.whisker(x, c.q[a], "#222");
    }
  }
  p.data_line(-0.5, 1.0 / kNumActions, kNumActions - 0.5, 1.0 / kNumActions, "#888", "4 3");
  for (std::size_t i = 0; i < cohorts.size(); ++i) {
    out << "<rect x=\"" << f2(80 + 150 * i) << "\" y=\"330\" width=\"10\" height=\"10\" fill=\"" << cohort_color(cohorts[i])
        << "\"/>\n";
    p.text(95 + 150 * i, 339, cohorts[i]);
  }
  return close_doc(out);
}

std::string calibration_svg(const AssayBundle& b) {
  const auto cohorts = cohorts_of(b);
  auto out = open_doc(b, 40 + 300.0 * std::max<std::size_t>(1, cohorts.size()), 360,
                      "Predicted vs counterfactual UP-DOWN tendency");
  for (std::size_t i = 0; i < cohorts.size(); ++i) {
    std::vector<double> xs, ys;
    for (const auto& r : b.runs) {
      if (r.row.cohort != cohorts[i]) continue;
      xs.insert(xs.end(), r.calibration.oracle.begin(), r.calibration.oracle.end());
      ys.insert(ys.end(), r.calibration.predicted.begin(), r.calibration.predicted.end());
    }
    Panel p(out, 80 + 300.0 * i, 60, 220, 240, range_of(xs), range_of(ys));
    const auto* st = b.stats.cohort(cohorts[i]);
    p.frame(cohorts[i] + " (median r " + g3(st ? st->calibration_r.median : 0.0) + ")", "oracle", "predicted");
    const std::size_t stride = std::max<std::size_t>(1, xs.size() / 800);
    for (std::size_t k = 0; k < xs.size(); k += stride) p.dot(xs[k], ys[k], cohort_color(cohorts[i]), 1.5, 0.4);
  }
  return close_doc(out);
}

/// Index of the run whose displacement is the cohort median (lower middle for even counts).
const RunAssays* median_run(const AssayBundle& b, const std::string& cohort) {
  std::vector<const RunAssays*> rs;
  for (const auto& r : b.runs)
    if (r.row.cohort == cohort) rs.push_back(&r);
  if (rs.empty()) return nullptr;
  std::stable_sort(rs.begin(), rs.end(), [](const RunAssays* a, const RunAssays* c) {
    return a->row.pca_displacement < c->row.pca_displacement;
  });
  return rs[(rs.size() - 1) / 2];
}

std::string displacement_svg(const AssayBundle& b) {
  const auto cohorts = cohorts_of(b);
  auto out = open_doc(b, 40 + 300.0 * std::max<std::size_t>(1, cohorts.size()), 380,
                      "Recovery-phase g in PC space, median-displacement seed (control blue, shock red)");
  for (std::size_t i = 0; i < cohorts.size(); ++i) {
    const RunAssays* r = median_run(b, cohorts[i]);
    if (!r) continue;
    std::vector<double> xs, ys;
    for (const auto* pcs : {&r->displacement.control_pc, &r->displacement.shock_pc})
      for (const auto& pc : *pcs) {
        xs.push_back(pc[0]);
        ys.push_back(pc[1]);
      }
    Panel p(out, 80 + 300.0 * i, 60, 220, 240, range_of(xs), range_of(ys));
    p.frame(cohorts[i] + " seed " + std::to_string(r->row.seed) + " (d " + g3(r->row.pca_displacement) + ")", "PC1",
            "PC2");
    auto trace = [&](const std::vector<std::array<double, 2>>& pcs, const char* color) {
      std::vector<std::pair<double, double>> pts;
      for (const auto& pc : pcs) pts.emplace_back(pc[0], pc[1]);
      p.polyline(pts, color, 0.7);
      double mx = 0, my = 0;
      for (const auto& pc : pcs) {
        mx += pc[0];
        my += pc[1];
      }
      if (!pcs.empty()) p.dot(mx / pcs.size(), my / pcs.size(), color, 5.0, 1.0);
    };
    trace(r->displacement.control_pc, "#1b6ca8");
    trace(r->displacement.shock_pc, "#d1495b");
    p.text(80 + 300.0 * i, 340, "median displacement " + g3(b.stats.cohort(cohorts[i])->pca_displacement.median));
  }
  return close_doc(out);
}

std::string recovery_svg(const AssayBundle& b, int recovery_start) {
  auto out = open_doc(b, 620, 380, "Control vs shock g distance in PC space over recovery (median across seeds)");
  const auto cohorts = cohorts_of(b);
  std::map<std::string, std::vector<double>> medians;
  std::vector<double> all;
  std::size_t len = 0;
  for (const auto& c : cohorts) {
    std::vector<std::vector<double>> curves;
    for (const auto& r : b.runs)
      if (r.row.cohort == c && !r.displacement.curve.empty()) curves.push_back(r.displacement.curve);
    if (curves.empty()) continue;
    const std::size_t n = curves.front().size();
    len = std::max(len, n);
    std::vector<double> med(n);
    for (std::size_t t = 0; t < n; ++t) {
      std::vector<double> col;
      for (const auto& cv : curves)
        if (t < cv.size()) col.push_back(cv[t]);
      med[t] = median(col);
      all.push_back(med[t]);
    }
    medians[c] = med;
  }
  Panel p(out, 70, 60, 500, 240, Range{static_cast<double>(recovery_start), static_cast<double>(recovery_start + std::max<std::size_t>(len, 2) - 1)},
          range_of(all, true));
  p.frame("recovery trajectory", "timestep", "PC distance");
  for (std::size_t i = 0; i < cohorts.size(); ++i) {
    auto it = medians.find(cohorts[i]);
    if (it == medians.end()) continue;
    std::vector<std::pair<double, double>> pts;
    for (std::size_t t = 0; t < it->second.size(); ++t) pts.emplace_back(recovery_start + static_cast<double>(t), it->second[t]);
    p.polyline(pts, cohort_color(cohorts[i]));
    out << "<rect x=\"" << f2(80 + 150 * i) << "\" y=\"350\" width=\"10\" height=\"10\" fill=\"" << cohort_color(cohorts[i])
        << "\"/>\n";
    p.text(95 + 150 * i, 359, cohorts[i]);
  }
  return close_doc(out);
}

std::string spectrum_svg(const AssayBundle& b) {
  auto out = open_doc(b, 520, 400, "Same-state metric-spectrum distance");
  const auto cohorts = cohorts_of(b);
  std::vector<double> all;
  for (const auto& r : b.runs) all.push_back(r.row.spectrum_distance);
  Panel p(out, 80, 60, 400, 240, Range{-0.5, cohorts.size() - 0.5}, range_of(all, true));
  p.frame("spectrum distance", "cohort", "eigenvalue L2 distance", false);
  for (std::size_t i = 0; i < cohorts.size(); ++i) {
    const auto v = values(b, cohorts[i], [](const RunAssays& r) { return r.row.spectrum_distance; });
    p.box(static_cast<double>(i), 0.5, v, cohort_color(cohorts[i]));
    seed_dots(p, static_cast<double>(i), v, cohort_color(cohorts[i]));
    p.label_x(static_cast<double>(i), cohorts[i]);
  }
  double y = 350;
  for (const auto& [pair, test] : b.stats.spectrum_tests) {
    p.text(80, y, pair + ": U " + g3(test.u) + ", p " + g3(test.p));
    y += 15;
  }
  return close_doc(out);
}

std::string correlation_svg(const AssayBundle& b) {
  auto out = open_doc(b, 520, 400, "Seed-level PCA displacement vs spectrum distance");
  std::vector<double> xs, ys;
  for (const auto& r : b.runs) {
    xs.push_back(r.row.pca_displacement);
    ys.push_back(r.row.spectrum_distance);
  }
  Panel p(out, 80, 60, 400, 240, range_of(xs, true), range_of(ys, true));
  p.frame("residue coupling", "PCA displacement", "spectrum distance");
  for (const auto& r : b.runs) p.dot(r.row.pca_displacement, r.row.spectrum_distance, cohort_color(r.row.cohort), 4.0);
  p.text(80, 350, "Spearman rho " + g3(b.stats.residue.rho) + ", permutation p " + g3(b.stats.residue_permutation_p) +
                      ", n " + std::to_string(b.stats.residue_n));
  const auto cohorts = cohorts_of(b);
  for (std::size_t i = 0; i < cohorts.size(); ++i) {
    out << "<rect x=\"" << f2(80 + 140 * i) << "\" y=\"365\" width=\"10\" height=\"10\" fill=\"" << cohort_color(cohorts[i])
        << "\"/>\n";
    p.text(95 + 140 * i, 374, cohorts[i]);
  }
  return close_doc(out);
}

}  // namespace

std::map<std::string, std::string> render_figures(const AssayBundle& bundle) {
  return {
      {"occupancy.svg", occupancy_svg(bundle)},
      {"readiness.svg", readiness_svg(bundle)},
      {"calibration.svg", calibration_svg(bundle)},
      {"displacement.svg", displacement_svg(bundle)},
      {"recovery.svg", recovery_svg(bundle, bundle.config.assays.recovery_start)},
      {"spectrum.svg", spectrum_svg(bundle)},
      {"correlation.svg", correlation_svg(bundle)},
  };
}

}  // namespace soma
