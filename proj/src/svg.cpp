#include "lpreg/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lpreg/common.hpp"

namespace lpreg::svg {

namespace {

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

Range data_range(const Figure& fig, bool x_axis) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const Series& s : fig.series) {
    for (const auto& [x, y] : s.points) {
      const double v = x_axis ? x : y;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(lo <= hi)) return {0.0, 1.0};  // no points
  if (lo == hi) {                      // flat data: open a unit window
    lo -= 0.5;
    hi += 0.5;
  }
  return {lo, hi};
}

/// Largest "nice" step (1/2/5 x 10^k) giving at most `max_ticks` intervals.
double nice_step(const Range& r, int max_ticks) {
  const double span = r.hi - r.lo;
  double step = std::pow(10.0, std::floor(std::log10(span / max_ticks)));
  for (double mult : {1.0, 2.0, 5.0, 10.0}) {
    if (span / (step * mult) <= max_ticks) return step * mult;
  }
  return step * 10.0;
}

std::string num(double v) {
  if (v == 0.0) v = 0.0;  // normalize -0
  return fmt_double(v);
}

class Canvas {
 public:
  Canvas(int width, int height) : width_(width), height_(height) {
    body_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"";
    body_ += std::to_string(width);
    body_ += "\" height=\"";
    body_ += std::to_string(height);
    body_ += "\" viewBox=\"0 0 " + std::to_string(width) + " " +
             std::to_string(height) + "\">\n";
    body_ += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }

  void raw(const std::string& s) { body_ += s; }

  void text(double x, double y, const std::string& s, int size,
            const std::string& anchor, const std::string& extra = "") {
    body_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) +
             "\" font-family=\"monospace\" font-size=\"" +
             std::to_string(size) + "\" text-anchor=\"" + anchor + "\"" +
             extra + ">" + s + "</text>\n";
  }

  void line(double x1, double y1, double x2, double y2,
            const std::string& color, double w = 1.0) {
    body_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" +
             num(x2) + "\" y2=\"" + num(y2) + "\" stroke=\"" + color +
             "\" stroke-width=\"" + num(w) + "\"/>\n";
  }

  void circle(double x, double y, double r, const std::string& color) {
    body_ += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"" +
             num(r) + "\" fill=\"" + color + "\" fill-opacity=\"0.6\"/>\n";
  }

  void polyline(const std::string& pts, const std::string& color) {
    body_ += "<polyline fill=\"none\" stroke=\"" + color +
             "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
  }

  std::string finish() { return body_ + "</svg>\n"; }

 private:
  int width_, height_;
  std::string body_;
};

struct Frame {
  double left, top, right, bottom;  // plot rectangle in canvas coordinates
  Range xr, yr;

  double px(double x) const {
    return left + (x - xr.lo) / (xr.hi - xr.lo) * (right - left);
  }
  double py(double y) const {
    return bottom - (y - yr.lo) / (yr.hi - yr.lo) * (bottom - top);
  }
};

/// Axes, ticks, labels and title for one plot area offset by y0.
Frame draw_frame(Canvas& c, const Figure& fig, int width, int height,
                 double y0) {
  Frame f;
  f.left = 64;
  f.right = width - 16;
  f.top = y0 + 28;
  f.bottom = y0 + height - 40;
  f.xr = data_range(fig, true);
  f.yr = data_range(fig, false);

  c.text((f.left + f.right) / 2, y0 + 16, fig.title, 13, "middle");
  c.line(f.left, f.top, f.left, f.bottom, "#444");
  c.line(f.left, f.bottom, f.right, f.bottom, "#444");

  const double xs = nice_step(f.xr, 8);
  for (double t = std::ceil(f.xr.lo / xs) * xs; t <= f.xr.hi + 1e-12 * xs;
       t += xs) {
    const double x = f.px(t);
    c.line(x, f.bottom, x, f.bottom + 4, "#444");
    c.text(x, f.bottom + 16, num(t), 10, "middle");
  }
  const double ys = nice_step(f.yr, 6);
  for (double t = std::ceil(f.yr.lo / ys) * ys; t <= f.yr.hi + 1e-12 * ys;
       t += ys) {
    const double y = f.py(t);
    c.line(f.left - 4, y, f.left, y, "#444");
    c.line(f.left, y, f.right, y, "#eee");
    c.text(f.left - 8, y + 3, num(t), 10, "end");
  }
  c.text((f.left + f.right) / 2, f.bottom + 32, fig.x_label, 11, "middle");
  c.text(f.left + 4, f.top - 4, fig.y_label, 11, "start");

  // series legend, top-right corner of the plot
  double ly = f.top + 12;
  for (const Series& s : fig.series) {
    if (s.label.empty()) continue;
    c.line(f.right - 120, ly - 4, f.right - 100, ly - 4, s.color, 2.0);
    c.text(f.right - 94, ly, s.label, 10, "start");
    ly += 14;
  }
  return f;
}

void draw_lines(Canvas& c, const Frame& f, const Figure& fig) {
  for (const Series& s : fig.series) {
    if (s.points.empty()) continue;
    std::string pts;
    for (const auto& [x, y] : s.points) {
      if (!pts.empty()) pts += ' ';
      pts += num(f.px(x)) + "," + num(f.py(y));
    }
    c.polyline(pts, s.color);
  }
}

void draw_dots(Canvas& c, const Frame& f, const Figure& fig, double radius) {
  for (const Series& s : fig.series) {
    for (const auto& [x, y] : s.points)
      c.circle(f.px(x), f.py(y), radius, s.color);
  }
}

}  // namespace

std::string render_line_chart(const Figure& fig, int width, int height) {
  Canvas c(width, height);
  Frame f = draw_frame(c, fig, width, height, 0);
  draw_lines(c, f, fig);
  return c.finish();
}

std::string render_scatter(const Figure& fig, int width, int height,
                           double radius) {
  Canvas c(width, height);
  Frame f = draw_frame(c, fig, width, height, 0);
  draw_dots(c, f, fig, radius);
  return c.finish();
}

std::string render_panels(const std::vector<Panel>& panels, int width,
                          int panel_height) {
  Canvas c(width, panel_height * static_cast<int>(panels.size()));
  double y0 = 0;
  for (const Panel& p : panels) {
    Frame f = draw_frame(c, p.figure, width, panel_height, y0);
    if (p.scatter) {
      draw_dots(c, f, p.figure, 2.5);
    } else {
      draw_lines(c, f, p.figure);
    }
    y0 += panel_height;
  }
  return c.finish();
}

std::string render_histogram(const Figure& fig, int width, int height) {
  Canvas c(width, height);
  Frame f = draw_frame(c, fig, width, height, 0);
  // step-line rendering: horizontal segment per bin centred on the point
  for (const Series& s : fig.series) {
    if (s.points.size() < 1) continue;
    const double half =
        s.points.size() > 1
            ? (s.points[1].first - s.points[0].first) / 2.0
            : (f.xr.hi - f.xr.lo) / 2.0;
    std::string pts;
    for (const auto& [x, y] : s.points) {
      if (!pts.empty()) pts += ' ';
      pts += num(f.px(x - half)) + "," + num(f.py(y));
      pts += ' ';
      pts += num(f.px(x + half)) + "," + num(f.py(y));
    }
    c.polyline(pts, s.color);
  }
  return c.finish();
}

}  // namespace lpreg::svg
