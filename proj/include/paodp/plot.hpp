#pragma once

#include <string>
#include <vector>

namespace paodp::plot {

struct Series {
    std::string label;
    std::vector<double> x;  // epochs
    std::vector<double> y;  // scores
};

/// Running average over the trailing `window` points at each index.
std::vector<double> running_average(const std::vector<double>& y, int window = 10);

/// Line chart as a standalone SVG document, one polyline and legend
/// entry per series.
std::string render_svg(
    const std::vector<Series>& series, const std::string& title, const std::string& x_label,
    const std::string& y_label);

}  // namespace paodp::plot
