#pragma once

#include <string>
#include <vector>

namespace driftlab::svg {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> lower; // optional shaded band
    std::vector<double> upper;
};

struct ChartOptions {
    std::string title;
    std::string x_label;
    std::string y_label;
    int width = 640;
    int height = 400;
};

std::string line_chart(const std::vector<Series>& series, const ChartOptions& options);

struct Polyline {
    std::string label;
    std::vector<double> col; // fractional column coordinates, may leave [0, nx) across seams
    std::vector<double> row;
    std::string color;
};

/// Raster map of values[row * nx + col] with a diverging palette symmetric about zero; row 0 at the bottom.
std::string heatmap(const std::vector<double>& values, int nx, int ny, const std::string& title,
                    const std::vector<Polyline>& overlays = {}, int cell_px = 12);

} // namespace driftlab::svg
