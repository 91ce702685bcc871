#ifndef CONSOLIDATE_SVG_HPP
#define CONSOLIDATE_SVG_HPP

#include <string>
#include <vector>

namespace ewc {

/// One plotted series: points with optional symmetric error bars.
struct PlotSeries {
    std::string label;
    std::vector<double> x, y, yerr;  // yerr may be empty
};

struct PlotSpec {
    std::string title, x_label, y_label;
    bool log_x = false;
    int width = 720, height = 480;
};

/// Static SVG line plot with error bars; self-contained, no dependencies.
std::string render_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series);

void write_svg(const std::string& path, const PlotSpec& spec,
               const std::vector<PlotSeries>& series);

}  // namespace ewc

#endif
