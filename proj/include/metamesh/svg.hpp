#pragma once

// Minimal static SVG figures: log-scale MFPT bars, 2-d scatter panels and
// the log-log mesh growth plot. Coordinates are printed with fixed precision
// so figures are byte-reproducible.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "metamesh/common.hpp"
#include "metamesh/geometry.hpp"

namespace metamesh::svg {

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

class Document {
 public:
  Document(double width, double height) : w_(width), h_(height) {}

  void comment(const std::string& text) {
    // "--" may not appear inside an XML comment.
    std::string safe = text;
    for (std::size_t p; (p = safe.find("--")) != std::string::npos;) safe.replace(p, 2, "- ");
    body_ << "<!-- " << safe << " -->\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill,
            const std::string& stroke = "none") {
    body_ << "<rect x=\"" << fixed(x) << "\" y=\"" << fixed(y) << "\" width=\"" << fixed(w)
          << "\" height=\"" << fixed(h) << "\" fill=\"" << fill << "\" stroke=\"" << stroke
          << "\"/>\n";
  }
  void circle(double cx, double cy, double r, const std::string& fill, double opacity = 1.0) {
    body_ << "<circle cx=\"" << fixed(cx) << "\" cy=\"" << fixed(cy) << "\" r=\"" << fixed(r)
          << "\" fill=\"" << fill << "\" fill-opacity=\"" << fixed(opacity) << "\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke,
            double width = 1.0, const std::string& dash = "") {
    body_ << "<line x1=\"" << fixed(x1) << "\" y1=\"" << fixed(y1) << "\" x2=\"" << fixed(x2)
          << "\" y2=\"" << fixed(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\""
          << fixed(width) << "\"";
    if (!dash.empty()) body_ << " stroke-dasharray=\"" << dash << "\"";
    body_ << "/>\n";
  }
  void polygon(std::span<const double> xy, const std::string& fill) {
    body_ << "<polygon points=\"";
    for (std::size_t i = 0; i + 1 < xy.size(); i += 2)
      body_ << (i ? " " : "") << fixed(xy[i]) << "," << fixed(xy[i + 1]);
    body_ << "\" fill=\"" << fill << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, double size = 12,
            const std::string& anchor = "start", double rotate = 0.0) {
    body_ << "<text x=\"" << fixed(x) << "\" y=\"" << fixed(y) << "\" font-size=\"" << fixed(size)
          << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\"";
    if (rotate != 0.0)
      body_ << " transform=\"rotate(" << fixed(rotate) << " " << fixed(x) << " " << fixed(y)
            << ")\"";
    body_ << ">" << escape(s) << "</text>\n";
  }

  std::string str() const {
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(w_, 0) << "\" height=\""
       << fixed(h_, 0) << "\" viewBox=\"0 0 " << fixed(w_, 0) << " " << fixed(h_, 0) << "\">\n"
       << "<rect x=\"0\" y=\"0\" width=\"" << fixed(w_, 0) << "\" height=\"" << fixed(h_, 0)
       << "\" fill=\"white\"/>\n"
       << body_.str() << "</svg>\n";
    return os.str();
  }

 private:
  double w_, h_;
  std::ostringstream body_;
};

/// Linear map from data range to a pixel span.
struct Scale {
  double lo, hi, p0, p1;
  double operator()(double v) const {
    if (hi == lo) return 0.5 * (p0 + p1);
    return p0 + (v - lo) / (hi - lo) * (p1 - p0);
  }
};

inline std::pair<double, double> padded_range(std::span<const double> v) {
  double lo = kInfinity, hi = -kInfinity;
  for (double x : v)
    if (std::isfinite(x)) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  if (!(lo <= hi)) return {0.0, 1.0};
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline std::vector<double> ticks(double lo, double hi, int count = 5) {
  std::vector<double> out;
  for (int i = 0; i <= count; ++i) out.push_back(lo + (hi - lo) * i / count);
  return out;
}

inline void frame(Document& doc, double x0, double y0, double x1, double y1, const Scale& sx,
                  const Scale& sy, const std::string& xlabel, const std::string& ylabel,
                  bool log_x = false, bool log_y = false) {
  doc.line(x0, y1, x1, y1, "black");
  doc.line(x0, y0, x0, y1, "black");
  for (double t : ticks(sx.lo, sx.hi)) {
    const double px = sx(t);
    doc.line(px, y1, px, y1 + 4, "black");
    doc.text(px, y1 + 16, tick_label(log_x ? std::pow(10.0, t) : t), 10, "middle");
  }
  for (double t : ticks(sy.lo, sy.hi)) {
    const double py = sy(t);
    doc.line(x0 - 4, py, x0, py, "black");
    doc.text(x0 - 6, py + 3, tick_label(log_y ? std::pow(10.0, t) : t), 10, "end");
  }
  doc.text(0.5 * (x0 + x1), y1 + 34, xlabel, 12, "middle");
  doc.text(x0 - 46, 0.5 * (y0 + y1), ylabel, 12, "middle", -90);
}

struct Bar {
  std::string label;
  double value;  // MFPT; +inf is drawn as a capped marker, NaN as an error mark
};

/// Bars of log10(M). Infinite values are drawn at the cap with a triangle
/// marker and explained in the legend.
inline std::string mfpt_bars(std::span<const Bar> bars, const std::string& title,
                             const std::string& digest) {
  const double width = std::max(480.0, 120.0 + 36.0 * static_cast<double>(bars.size()));
  const double height = 360.0;
  Document doc(width, height);
  doc.comment("config_digest=" + digest);
  const double x0 = 80, x1 = width - 20, y0 = 40, y1 = height - 70;

  double top = 1.0;
  bool any_inf = false, any_err = false;
  for (const auto& b : bars) {
    if (std::isinf(b.value)) any_inf = true;
    else if (std::isnan(b.value)) any_err = true;
    else if (b.value > 0.0) top = std::max(top, std::log10(b.value));
  }
  const double cap = std::ceil(top + (any_inf ? 1.0 : 0.25));
  const Scale sy{0.0, cap, y1, y0};
  const double slot = (x1 - x0) / std::max<std::size_t>(1, bars.size());
  const Scale sx{0.0, 1.0, x0, x1};
  doc.text(0.5 * width, 22, title, 14, "middle");
  frame(doc, x0, y0, x1, y1, Scale{0.0, 0.0, x0, x1}, sy, "disturbance of interest",
        "MFPT (log scale)", false, true);

  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double cx = x0 + slot * (static_cast<double>(i) + 0.5);
    const double v = bars[i].value;
    if (std::isinf(v)) {
      const double py = sy(cap);
      const double tri[] = {cx - 7, py + 12, cx + 7, py + 12, cx, py};
      doc.line(cx, y1, cx, py + 12, "#c0392b", 2.0, "4,3");
      doc.polygon(tri, "#c0392b");
    } else if (std::isnan(v)) {
      doc.text(cx, y1 - 6, "x", 14, "middle");
    } else {
      const double lv = std::max(0.0, std::log10(std::max(v, 1.0)));
      doc.rect(cx - 0.35 * slot, sy(lv), 0.7 * slot, y1 - sy(lv), "#2e86c1");
    }
    doc.text(cx, y1 + 16, bars[i].label, 10, "middle");
  }
  (void)sx;
  double ly = y0 + 4;
  if (any_inf) {
    const double tri[] = {x1 - 150, ly + 10, x1 - 140, ly + 10, x1 - 145, ly};
    doc.polygon(tri, "#c0392b");
    doc.text(x1 - 134, ly + 10, "M = infinity (capped)", 10);
    ly += 16;
  }
  if (any_err) doc.text(x1 - 150, ly + 10, "x = analysis failed", 10);
  return doc.str();
}

struct ScatterPoint {
  double x, y;
  double size = 1.0;  // relative marker size
  bool highlight = false;
};

inline void scatter_panel(Document& doc, std::span<const ScatterPoint> pts, double x0, double y0,
                          double x1, double y1, const std::string& xlabel,
                          const std::string& ylabel) {
  std::vector<double> xs, ys;
  double smax = 0.0;
  for (const auto& p : pts) {
    xs.push_back(p.x);
    ys.push_back(p.y);
    smax = std::max(smax, p.size);
  }
  const auto [xlo, xhi] = padded_range(xs);
  const auto [ylo, yhi] = padded_range(ys);
  const Scale sx{xlo, xhi, x0, x1}, sy{ylo, yhi, y1, y0};
  frame(doc, x0, y0, x1, y1, sx, sy, xlabel, ylabel);
  // Ordinary states first so highlighted ones stay visible.
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& p : pts) {
      if (p.highlight != (pass == 1)) continue;
      const double r = 2.0 + 6.0 * (smax > 0.0 ? std::sqrt(p.size / smax) : 0.0);
      doc.circle(sx(p.x), sy(p.y), r, p.highlight ? "#c0392b" : "#2e86c1", 0.6);
    }
}

/// One or more 2-d scatter panels side by side.
struct Panel {
  std::vector<ScatterPoint> points;
  std::string xlabel, ylabel;
};

inline std::string scatter(std::span<const Panel> panels, const std::string& title,
                           const std::string& digest, bool has_highlight) {
  const double pw = 360, ph = 340;
  const double width = 20 + pw * static_cast<double>(std::max<std::size_t>(1, panels.size()));
  Document doc(width, ph + 60);
  doc.comment("config_digest=" + digest);
  doc.text(0.5 * width, 22, title, 14, "middle");
  for (std::size_t i = 0; i < panels.size(); ++i) {
    const double ox = 20 + pw * static_cast<double>(i);
    scatter_panel(doc, panels[i].points, ox + 60, 50, ox + pw - 20, ph - 10, panels[i].xlabel,
                  panels[i].ylabel);
  }
  if (has_highlight) {
    doc.circle(width - 150, ph + 42, 5, "#c0392b", 0.6);
    doc.text(width - 140, ph + 46, "dangerous state", 10);
  }
  return doc.str();
}

/// Log-log plot of mesh size against threshold, with the fitted line.
inline std::string dimension_plot(const DimensionFit& fit, const std::string& digest) {
  Document doc(480, 380);
  doc.comment("config_digest=" + digest);
  const double x0 = 80, x1 = 460, y0 = 40, y1 = 310;
  std::vector<double> lx, ly;
  for (const auto& s : fit.samples) {
    lx.push_back(std::log10(s.d_tr));
    ly.push_back(std::log10(static_cast<double>(s.count)));
  }
  const auto [xlo, xhi] = padded_range(lx);
  const auto [ylo, yhi] = padded_range(ly);
  const Scale sx{xlo, xhi, x0, x1}, sy{ylo, yhi, y1, y0};
  doc.text(240, 22, "mesh size vs threshold, n_hat = " + fixed(fit.n_hat, 3), 14, "middle");
  frame(doc, x0, y0, x1, y1, sx, sy, "d_tr (log scale)", "N (log scale)", true, true);
  // Fit is in natural logs: ln N = intercept + slope ln d.
  auto fit_y = [&](double log10_d) {
    return (fit.intercept + fit.slope * log10_d * std::log(10.0)) / std::log(10.0);
  };
  doc.line(sx(xlo), sy(fit_y(xlo)), sx(xhi), sy(fit_y(xhi)), "#7f8c8d", 1.5, "5,4");
  for (std::size_t i = 0; i < lx.size(); ++i) doc.circle(sx(lx[i]), sy(ly[i]), 4, "#2e86c1");
  return doc.str();
}

}  // namespace metamesh::svg
