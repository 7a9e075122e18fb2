#include "driftlab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "driftlab/error.hpp"

namespace driftlab::svg {
namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<':
            out += "&lt;";
            break;
        case '>':
            out += "&gt;";
            break;
        case '&':
            out += "&amp;";
            break;
        case '"':
            out += "&quot;";
            break;
        default:
            out += c;
        }
    }
    return out;
}

std::string diverging(double t) {
    // t in [-1, 1]: blue through white to red
    t = std::clamp(t, -1.0, 1.0);
    int r = 255, g = 255, b = 255;
    if (t < 0) {
        r = g = static_cast<int>(std::lround(255 * (1 + t)));
    } else {
        g = b = static_cast<int>(std::lround(255 * (1 - t)));
    }
    std::ostringstream out;
    out << '#' << std::hex << std::setfill('0') << std::setw(2) << r << std::setw(2) << g << std::setw(2) << b;
    return out.str();
}

} // namespace

std::string line_chart(const std::vector<Series>& series, const ChartOptions& options) {
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = 0.0, ymax = -std::numeric_limits<double>::infinity();
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) {
            throw ShapeError("line_chart: series '" + s.label + "' has mismatched x/y lengths");
        }
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
        for (double v : s.upper) {
            ymax = std::max(ymax, v);
        }
        for (double v : s.lower) {
            ymin = std::min(ymin, v);
        }
    }
    if (!std::isfinite(xmin)) {
        xmin = 0.0;
        xmax = 1.0;
    }
    if (!(ymax > ymin)) {
        ymax = ymin + 1.0;
    }
    if (!(xmax > xmin)) {
        xmax = xmin + 1.0;
    }
    const double left = 70, right = 150, top = 40, bottom = 50;
    const double pw = options.width - left - right, ph = options.height - top - bottom;
    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return top + ph - (y - ymin) / (ymax - ymin) * ph; };

    std::ostringstream out;
    out << std::setprecision(6);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width << "\" height=\"" << options.height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << options.width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
        << escape(options.title) << "</text>\n";
    out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        out << "<text x=\"" << px(xv) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << xv
            << "</text>\n";
        out << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
        out << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << py(yv) << "\" y2=\"" << py(yv)
            << "\" stroke=\"#ddd\"/>\n";
    }
    out << "<text x=\"" << left + pw / 2 << "\" y=\"" << options.height - 10 << "\" text-anchor=\"middle\">"
        << escape(options.x_label) << "</text>\n";
    out << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
        << escape(options.y_label) << "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = kPalette[k % std::size(kPalette)];
        if (!s.lower.empty() && s.lower.size() == s.x.size() && s.upper.size() == s.x.size()) {
            out << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                out << px(s.x[i]) << ',' << py(s.upper[i]) << ' ';
            }
            for (std::size_t i = s.x.size(); i-- > 0;) {
                out << px(s.x[i]) << ',' << py(s.lower[i]) << ' ';
            }
            out << "\"/>\n";
        }
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            out << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        }
        out << "\"/>\n";
        const double ly = top + 16 + 18 * static_cast<double>(k);
        out << "<line x1=\"" << left + pw + 10 << "\" x2=\"" << left + pw + 30 << "\" y1=\"" << ly << "\" y2=\"" << ly
            << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << left + pw + 34 << "\" y=\"" << ly + 4 << "\">" << escape(s.label) << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

std::string heatmap(const std::vector<double>& values, int nx, int ny, const std::string& title,
                    const std::vector<Polyline>& overlays, int cell_px) {
    if (nx < 1 || ny < 1 || values.size() != static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny)) {
        throw ShapeError("heatmap: values do not match the raster size");
    }
    double amax = 0.0;
    for (double v : values) {
        amax = std::max(amax, std::abs(v));
    }
    const int top = 30, legend = 30;
    const int w = nx * cell_px, h = ny * cell_px;
    std::ostringstream out;
    out << std::setprecision(6);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h + top + legend
        << "\" font-family=\"sans-serif\" font-size=\"12\" shape-rendering=\"crispEdges\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\">" << escape(title) << "</text>\n";
    for (int row = 0; row < ny; ++row) {
        for (int col = 0; col < nx; ++col) {
            const double v = values[static_cast<std::size_t>(row) * nx + col];
            out << "<rect x=\"" << col * cell_px << "\" y=\"" << top + (ny - 1 - row) * cell_px << "\" width=\""
                << cell_px << "\" height=\"" << cell_px << "\" fill=\"" << diverging(amax > 0 ? v / amax : 0.0)
                << "\"/>\n";
        }
    }
    for (std::size_t k = 0; k < overlays.size(); ++k) {
        const auto& line = overlays[k];
        const std::string color = line.color.empty() ? kPalette[k % std::size(kPalette)] : line.color;
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" shape-rendering=\"auto\" points=\"";
        for (std::size_t i = 0; i < line.col.size() && i < line.row.size(); ++i) {
            out << line.col[i] * cell_px << ',' << top + (ny - line.row[i]) * cell_px << ' ';
        }
        out << "\"><title>" << escape(line.label) << "</title></polyline>\n";
    }
    out << "<text x=\"4\" y=\"" << top + h + 20 << "\">|max| = " << amax << "</text>\n";
    out << "</svg>\n";
    return out.str();
}

} // namespace driftlab::svg
