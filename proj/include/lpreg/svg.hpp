#pragma once
/**
 * Minimal deterministic SVG chart rendering.
 *
 * Static figures only: line charts, scatter plots and histogram panels with
 * computed "nice" axis ticks. Output depends solely on the input data - no
 * timestamps, no randomness, floats printed with shortest round-trip
 * formatting - so rendering the same data twice yields identical bytes.
 */

#include <string>
#include <vector>

namespace lpreg::svg {

struct Series {
  std::string label;
  std::string color;  // CSS color string
  std::vector<std::pair<double, double>> points;
};

struct Figure {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

/// One connected polyline per series.
std::string render_line_chart(const Figure& fig, int width = 880,
                              int height = 420);

/// One circle per point per series.
std::string render_scatter(const Figure& fig, int width = 880,
                           int height = 560, double radius = 2.5);

/// Several line/scatter panels stacked vertically into one document.
struct Panel {
  Figure figure;
  bool scatter = false;
};
std::string render_panels(const std::vector<Panel>& panels, int width = 880,
                          int panel_height = 300);

/// Histogram panel: series points are (bin_center, mass) pairs rendered as
/// step lines; useful for overlaying several windows on shared axes.
std::string render_histogram(const Figure& fig, int width = 880,
                             int height = 420);

}  // namespace lpreg::svg
