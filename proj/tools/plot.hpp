#pragma once

// Minimal SVG writers for the CLI figures.

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace fedsim::plot {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

void line_chart(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                const std::string& y_label, const std::vector<Series>& series);

// Rows x cols integer heatmap with per-cell counts.
void heatmap(const std::filesystem::path& path, const std::string& title, const Eigen::MatrixXi& counts,
             const std::vector<std::string>& row_labels, const std::vector<std::string>& col_labels);

struct ScatterPoint {
  double x, y;
  int cls;
};

// Points colored by class over a background grid of predicted classes.
void scatter_regions(const std::filesystem::path& path, const std::string& title, const std::vector<ScatterPoint>& points,
                     const std::vector<ScatterPoint>& grid, double cell_w, double cell_h);

}  // namespace fedsim::plot
