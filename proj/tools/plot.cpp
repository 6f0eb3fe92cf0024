#include "plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fedsim::plot {

namespace {

constexpr double kW = 640, kH = 420, kLeft = 60, kRight = 150, kTop = 40, kBottom = 50;
constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                              "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::ofstream open(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
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

void header(std::ostream& os, double w, double h, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n";
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
};

}  // namespace

void line_chart(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                const std::string& y_label, const std::vector<Series>& series) {
  Range xr, yr;
  for (const auto& s : series) {
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  xr.pad();
  yr.pad();
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto sx = [&](double v) { return kLeft + (v - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto sy = [&](double v) { return kTop + ph - (v - yr.lo) / (yr.hi - yr.lo) * ph; };
  auto os = open(path);
  header(os, kW, kH, title);
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    const double xv = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << std::round(yv * 1000) / 1000
       << "</text>\n";
    os << "<text x=\"" << sx(xv) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">"
       << std::round(xv * 10) / 10 << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">" << escape(x_label)
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" transform=\"rotate(-90 16 " << kTop + ph / 2
     << ")\" text-anchor=\"middle\">" << escape(y_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kPalette[i % kPalette.size()];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t j = 0; j < s.x.size(); ++j) os << sx(s.x[j]) << ',' << sy(s.y[j]) << ' ';
    os << "\"/>\n";
    const double ly = kTop + 14 + 18.0 * static_cast<double>(i);
    os << "<line x1=\"" << kW - kRight + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << kW - kRight + 30 << "\" y2=\"" << ly - 4
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kW - kRight + 35 << "\" y=\"" << ly << "\">" << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
}

void heatmap(const std::filesystem::path& path, const std::string& title, const Eigen::MatrixXi& counts,
             const std::vector<std::string>& row_labels, const std::vector<std::string>& col_labels) {
  const double cell = 40, left = 90, top = 60;
  const double w = left + cell * static_cast<double>(counts.cols()) + 40;
  const double h = top + cell * static_cast<double>(counts.rows()) + 30;
  const int max = std::max(1, counts.size() ? counts.maxCoeff() : 1);
  auto os = open(path);
  header(os, std::max(w, 260.0), h, title);
  for (Eigen::Index c = 0; c < counts.cols(); ++c) {
    os << "<text x=\"" << left + cell * (static_cast<double>(c) + 0.5) << "\" y=\"" << top - 8
       << "\" text-anchor=\"middle\">" << escape(col_labels.at(static_cast<std::size_t>(c))) << "</text>\n";
  }
  for (Eigen::Index r = 0; r < counts.rows(); ++r) {
    const double y = top + cell * static_cast<double>(r);
    os << "<text x=\"" << left - 8 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">"
       << escape(row_labels.at(static_cast<std::size_t>(r))) << "</text>\n";
    for (Eigen::Index c = 0; c < counts.cols(); ++c) {
      const double f = static_cast<double>(counts(r, c)) / max;
      const int shade = static_cast<int>(255 - 200 * f);
      os << "<rect x=\"" << left + cell * static_cast<double>(c) << "\" y=\"" << y << "\" width=\"" << cell
         << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\" stroke=\"white\"/>\n";
      os << "<text x=\"" << left + cell * (static_cast<double>(c) + 0.5) << "\" y=\"" << y + cell / 2 + 4
         << "\" text-anchor=\"middle\">" << counts(r, c) << "</text>\n";
    }
  }
  os << "</svg>\n";
}

void scatter_regions(const std::filesystem::path& path, const std::string& title, const std::vector<ScatterPoint>& points,
                     const std::vector<ScatterPoint>& grid, double cell_w, double cell_h) {
  Range xr, yr;
  for (const auto& p : grid) {
    xr.add(p.x);
    yr.add(p.y);
  }
  for (const auto& p : points) {
    xr.add(p.x);
    yr.add(p.y);
  }
  xr.pad();
  yr.pad();
  const double pw = kW - kLeft - 40, ph = kH - kTop - kBottom;
  auto sx = [&](double v) { return kLeft + (v - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto sy = [&](double v) { return kTop + ph - (v - yr.lo) / (yr.hi - yr.lo) * ph; };
  const double gw = cell_w / (xr.hi - xr.lo) * pw, gh = cell_h / (yr.hi - yr.lo) * ph;
  auto os = open(path);
  header(os, kW, kH, title);
  constexpr std::array<const char*, 2> region{"#dbe9f6", "#f8d9d9"};
  for (const auto& g : grid) {
    os << "<rect x=\"" << sx(g.x) - gw / 2 << "\" y=\"" << sy(g.y) - gh / 2 << "\" width=\"" << gw << "\" height=\"" << gh
       << "\" fill=\"" << region[static_cast<std::size_t>(g.cls) % 2] << "\"/>\n";
  }
  for (const auto& p : points) {
    os << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y) << "\" r=\"2.5\" fill=\""
       << kPalette[static_cast<std::size_t>(p.cls) % 2] << "\"/>\n";
  }
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n</svg>\n";
}

}  // namespace fedsim::plot
