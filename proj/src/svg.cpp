#include "consolidate/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "consolidate/tensor.hpp"

namespace ewc {

namespace {

const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                         "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

}  // namespace

std::string render_svg(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
    if (series.empty()) throw EwcError("render_svg: no series to plot");
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series) {
        if (s.x.empty() || s.x.size() != s.y.size())
            throw EwcError("render_svg: series \"" + s.label + "\" is empty or ragged");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double x = spec.log_x ? std::log10(std::max(s.x[i], 1e-12)) : s.x[i];
            const double e = i < s.yerr.size() ? s.yerr[i] : 0.0;
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, s.y[i] - e);
            ymax = std::max(ymax, s.y[i] + e);
        }
    }
    if (xmax - xmin < 1e-12) { xmax += 0.5; xmin -= 0.5; }
    if (ymax - ymin < 1e-12) { ymax += 0.05; ymin -= 0.05; }
    const double pad_y = 0.05 * (ymax - ymin);
    ymin -= pad_y;
    ymax += pad_y;

    const double ml = 70, mr = 20, mt = 40, mb = 50;
    const double pw = spec.width - ml - mr, ph = spec.height - mt - mb;
    auto px = [&](double x) {
        if (spec.log_x) x = std::log10(std::max(x, 1e-12));
        return ml + (x - xmin) / (xmax - xmin) * pw;
    };
    auto py = [&](double y) { return mt + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
        << spec.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << spec.width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">"
        << spec.title << "</text>\n";

    // axes and ticks
    svg << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fy = ymin + (ymax - ymin) * i / 5.0;
        const double yy = py(fy);
        svg << "<line x1=\"" << ml << "\" y1=\"" << yy << "\" x2=\"" << spec.width - mr
            << "\" y2=\"" << yy << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << ml - 6 << "\" y=\"" << yy + 4
            << "\" text-anchor=\"end\">" << fmt(fy) << "</text>\n";
        const double fxv = xmin + (xmax - xmin) * i / 5.0;
        const double fx = spec.log_x ? std::pow(10.0, fxv) : fxv;
        const double xx = ml + pw * i / 5.0;
        svg << "<text x=\"" << xx << "\" y=\"" << spec.height - mb + 18
            << "\" text-anchor=\"middle\">" << fmt(fx) << "</text>\n";
    }
    svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << spec.height - 8
        << "\" text-anchor=\"middle\">" << spec.x_label << "</text>\n";
    svg << "<text x=\"16\" y=\"" << mt + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << mt + ph / 2 << ")\">" << spec.y_label << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kColors[si % (sizeof kColors / sizeof *kColors)];
        std::ostringstream pts;
        for (std::size_t i = 0; i < s.x.size(); ++i)
            pts << (i ? " " : "") << fmt(px(s.x[i])) << "," << fmt(py(s.y[i]));
        svg << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"1.5\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double cx = px(s.x[i]), cy = py(s.y[i]);
            svg << "<circle cx=\"" << fmt(cx) << "\" cy=\"" << fmt(cy) << "\" r=\"3\" fill=\""
                << color << "\"/>\n";
            if (i < s.yerr.size() && s.yerr[i] > 0.0) {
                const double y0 = py(s.y[i] - s.yerr[i]), y1 = py(s.y[i] + s.yerr[i]);
                svg << "<line x1=\"" << fmt(cx) << "\" y1=\"" << fmt(y0) << "\" x2=\"" << fmt(cx)
                    << "\" y2=\"" << fmt(y1) << "\" stroke=\"" << color << "\"/>\n";
                for (double ye : {y0, y1})
                    svg << "<line x1=\"" << fmt(cx - 3) << "\" y1=\"" << fmt(ye) << "\" x2=\""
                        << fmt(cx + 3) << "\" y2=\"" << fmt(ye) << "\" stroke=\"" << color
                        << "\"/>\n";
            }
        }
        svg << "<text x=\"" << spec.width - mr - 8 << "\" y=\"" << mt + 16 + 16 * double(si)
            << "\" text-anchor=\"end\" fill=\"" << color << "\">" << s.label << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void write_svg(const std::string& path, const PlotSpec& spec,
               const std::vector<PlotSeries>& series) {
    const std::string body = render_svg(spec, series);
    std::ofstream out(path);
    if (!out) throw EwcError(path + ": cannot open for writing");
    out << body;
}

}  // namespace ewc
