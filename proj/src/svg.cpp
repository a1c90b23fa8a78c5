#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "lfts/pipeline.hpp"

namespace lfts::pipeline::svg {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string heatmap(const std::string& title, const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::vector<std::vector<double>>& values,
                    double lo, double hi) {
  const double cell = 28.0, left = 150.0, top = 50.0, bottom = 170.0;
  const double width = left + cell * static_cast<double>(col_labels.size()) + 80.0;
  const double height = top + cell * static_cast<double>(row_labels.size()) + bottom;
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << num(left) << "\" y=\"24\" font-size=\"14\">" << escape(title) << "</text>\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t r = 0; r < row_labels.size(); ++r) {
    const double y = top + cell * static_cast<double>(r);
    s << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y + cell * 0.65) << "\" text-anchor=\"end\">"
      << escape(row_labels[r]) << "</text>\n";
    for (std::size_t c = 0; c < col_labels.size() && c < values[r].size(); ++c) {
      const double v = values[r][c];
      const double t = std::isfinite(v) ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.0;
      // White to dark blue.
      const int red = static_cast<int>(std::lround(255.0 - 227.0 * t));
      const int green = static_cast<int>(std::lround(255.0 - 197.0 * t));
      const int blue = static_cast<int>(std::lround(255.0 - 121.0 * t));
      s << "<rect x=\"" << num(left + cell * static_cast<double>(c)) << "\" y=\"" << num(y) << "\" width=\"" << num(cell)
        << "\" height=\"" << num(cell) << "\" fill=\"rgb(" << red << "," << green << "," << blue
        << ")\" stroke=\"#ddd\"><title>" << escape(row_labels[r] + " / " + col_labels[c]) << ": "
        << (std::isfinite(v) ? num(v) : std::string("n/a")) << "</title></rect>\n";
    }
  }
  const double ybase = top + cell * static_cast<double>(row_labels.size()) + 8.0;
  for (std::size_t c = 0; c < col_labels.size(); ++c) {
    const double x = left + cell * (static_cast<double>(c) + 0.5);
    s << "<text transform=\"translate(" << num(x) << "," << num(ybase) << ") rotate(60)\">" << escape(col_labels[c])
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Line>& lines) {
  const double W = 720, H = 420, l = 70, r = 20, t = 40, b = 50;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& ln : lines)
    for (std::size_t i = 0; i < ln.x.size() && i < ln.y.size(); ++i) {
      if (!std::isfinite(ln.y[i])) continue;
      xmin = std::min(xmin, ln.x[i]);
      xmax = std::max(xmax, ln.x[i]);
      ymin = std::min(ymin, ln.y[i]);
      ymax = std::max(ymax, ln.y[i]);
    }
  if (!(xmax > xmin)) { xmin = 0; xmax = 1; }
  if (!(ymax > ymin)) { ymin -= 0.5; ymax += 0.5; }
  auto px = [&](double x) { return l + (x - xmin) / (xmax - xmin) * (W - l - r); };
  auto py = [&](double y) { return H - b - (y - ymin) / (ymax - ymin) * (H - t - b); };

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(W) << "\" height=\"" << num(H)
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << num(l) << "\" y=\"24\" font-size=\"14\">" << escape(title) << "</text>\n"
    << "<line x1=\"" << num(l) << "\" y1=\"" << num(H - b) << "\" x2=\"" << num(W - r) << "\" y2=\"" << num(H - b)
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << num(l) << "\" y1=\"" << num(t) << "\" x2=\"" << num(l) << "\" y2=\"" << num(H - b)
    << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << num((W + l) / 2) << "\" y=\"" << num(H - 12) << "\" text-anchor=\"middle\">" << escape(x_label)
    << "</text>\n"
    << "<text transform=\"translate(16," << num((H - b + t) / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(y_label) << "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = ymin + (ymax - ymin) * k / 4.0;
    const double xv = xmin + (xmax - xmin) * k / 4.0;
    s << "<text x=\"" << num(l - 4) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << num(yv) << "</text>\n"
      << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(H - b + 14) << "\" text-anchor=\"middle\">" << num(xv)
      << "</text>\n";
  }
  double legend_y = t + 4;
  for (const auto& ln : lines) {
    s << "<polyline fill=\"none\" stroke=\"" << escape(ln.color) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < ln.x.size() && i < ln.y.size(); ++i)
      if (std::isfinite(ln.y[i])) s << num(px(ln.x[i])) << ',' << num(py(ln.y[i])) << ' ';
    s << "\"/>\n";
    s << "<text x=\"" << num(W - r - 150) << "\" y=\"" << num(legend_y + 10) << "\" fill=\"" << escape(ln.color) << "\">"
      << escape(ln.name) << "</text>\n";
    legend_y += 14;
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<double> time_axis(std::size_t n) {
  std::vector<double> x(n, 0.0);
  if (n < 2) return x;
  for (std::size_t i = 0; i < n; ++i) x[i] = 5000.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  return x;
}

}  // namespace lfts::pipeline::svg
