#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ckfr {

namespace {

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// Round a tick step to 1/2/5 times a power of ten.
double nice_step(double span, int target_ticks) {
  if (span <= 0.0) return 1.0;
  const double raw = span / std::max(1, target_ticks);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double norm = raw / mag;
  double step = 10.0;
  if (norm <= 1.0) step = 1.0;
  else if (norm <= 2.0) step = 2.0;
  else if (norm <= 5.0) step = 5.0;
  return step * mag;
}

}  // namespace

std::string svg_line_plot(const std::vector<SvgSeries>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label) {
  const int width = 680, height = 440;
  const int ml = 70, mr = 160, mt = 48, mb = 56;
  const double pw = width - ml - mr, ph = height - mt - mb;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series) {
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        first = false;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (xmax <= xmin) xmax = xmin + 1.0;
  if (ymax <= ymin) ymax = ymin + 1.0;
  const double ypad = 0.06 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  const auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << ml << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" "
        "font-weight=\"bold\">" << title << "</text>\n";

  const double xstep = nice_step(xmax - xmin, 6);
  for (double t = std::ceil(xmin / xstep) * xstep; t <= xmax + 1e-12; t += xstep) {
    os << "<line x1=\"" << fmt(px(t)) << "\" y1=\"" << mt << "\" x2=\"" << fmt(px(t)) << "\" y2=\""
       << mt + ph << "\" stroke=\"#e0e0e0\"/>\n";
    os << "<text x=\"" << fmt(px(t)) << "\" y=\"" << mt + ph + 18
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << fmt(t)
       << "</text>\n";
  }
  const double ystep = nice_step(ymax - ymin, 6);
  for (double t = std::ceil(ymin / ystep) * ystep; t <= ymax + 1e-12; t += ystep) {
    os << "<line x1=\"" << ml << "\" y1=\"" << fmt(py(t)) << "\" x2=\"" << ml + pw << "\" y2=\""
       << fmt(py(t)) << "\" stroke=\"#e0e0e0\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << fmt(py(t) + 4)
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << fmt(t)
       << "</text>\n";
  }
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << fmt(pw) << "\" height=\""
     << fmt(ph) << "\" fill=\"none\" stroke=\"#333\"/>\n";
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 14
     << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">" << x_label
     << "</text>\n";
  os << "<text x=\"18\" y=\"" << mt + ph / 2
     << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << mt + ph / 2 << ")\">" << y_label << "</text>\n";

  int legend_y = mt + 10;
  for (const auto& s : series) {
    if (s.x.empty()) continue;
    std::ostringstream pts;
    for (size_t i = 0; i < s.x.size(); ++i) {
      pts << (i ? " " : "") << fmt(px(s.x[i])) << "," << fmt(py(s.y[i]));
    }
    os << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << s.color
       << "\" stroke-width=\"2\"/>\n";
    for (size_t i = 0; i < s.x.size(); ++i) {
      os << "<circle cx=\"" << fmt(px(s.x[i])) << "\" cy=\"" << fmt(py(s.y[i]))
         << "\" r=\"3.2\" fill=\"" << s.color << "\"/>\n";
    }
    os << "<line x1=\"" << ml + pw + 14 << "\" y1=\"" << legend_y << "\" x2=\"" << ml + pw + 38
       << "\" y2=\"" << legend_y << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << ml + pw + 44 << "\" y=\"" << legend_y + 4
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label << "</text>\n";
    legend_y += 20;
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_map_overlay(const std::vector<double>& values, int height, int width,
                            const std::vector<Box>& candidates, const std::vector<Box>& gt_boxes,
                            const std::string& title) {
  const int cell = std::max(4, 256 / std::max(height, width));
  const int mt = 28;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width * cell << "\" height=\""
     << height * cell + mt << "\">\n";
  os << "<text x=\"4\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << title
     << "</text>\n";
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double v = std::clamp(values[static_cast<size_t>(y) * width + x], 0.0, 1.0);
      const int r = static_cast<int>(std::lround(255 * v));
      const int b = static_cast<int>(std::lround(255 * (1.0 - v)));
      os << "<rect x=\"" << x * cell << "\" y=\"" << y * cell + mt << "\" width=\"" << cell
         << "\" height=\"" << cell << "\" fill=\"rgb(" << r << ",40," << b << ")\"/>\n";
    }
  }
  const auto draw_box = [&](const Box& box, const char* color) {
    os << "<rect x=\"" << box.x0 * cell << "\" y=\"" << box.y0 * cell + mt << "\" width=\""
       << (box.x1 - box.x0) * cell << "\" height=\"" << (box.y1 - box.y0) * cell
       << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
  };
  for (const Box& b : gt_boxes) draw_box(b, "#27c24c");
  for (const Box& b : candidates) draw_box(b, "#ff9f1a");
  os << "</svg>\n";
  return os.str();
}

}  // namespace ckfr
