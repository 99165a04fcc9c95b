#pragma once

#include <string>
#include <vector>

#include "boxes.hpp"

namespace ckfr {

struct SvgSeries {
  std::string label;
  std::string color = "#0a6fa8";
  std::vector<double> x;
  std::vector<double> y;
};

// Simple line plot with axes, ticks and a legend. Pure SVG, no raster deps.
std::string svg_line_plot(const std::vector<SvgSeries>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label);

// Heat grid with ground-truth (green) and candidate (orange) box overlays.
std::string svg_map_overlay(const std::vector<double>& values, int height, int width,
                            const std::vector<Box>& candidates, const std::vector<Box>& gt_boxes,
                            const std::string& title);

}  // namespace ckfr
