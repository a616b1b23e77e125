#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace steerlab {

// Native SVG line plot: polyline through the means with +-stddev whiskers.
// No plotting dependency; just enough for the sweep/healing figures.

struct PlotSeries {
    std::vector<double> x;
    std::vector<double> mean;
    std::vector<double> stddev;  // may be empty
};

namespace detail {

inline std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

}  // namespace detail

inline std::string line_plot_svg(const PlotSeries& s, const std::string& title,
                                 const std::string& x_label, const std::string& y_label) {
    const int width = 640, height = 420;
    const double ml = 70, mr = 25, mt = 45, mb = 55;  // margins
    const double pw = width - ml - mr, ph = height - mt - mb;

    double x_lo = s.x.empty() ? 0 : *std::min_element(s.x.begin(), s.x.end());
    double x_hi = s.x.empty() ? 1 : *std::max_element(s.x.begin(), s.x.end());
    double y_lo = 1e300, y_hi = -1e300;
    for (size_t i = 0; i < s.mean.size(); ++i) {
        if (!std::isfinite(s.mean[i])) continue;
        const double sd = i < s.stddev.size() ? s.stddev[i] : 0.0;
        y_lo = std::min(y_lo, s.mean[i] - sd);
        y_hi = std::max(y_hi, s.mean[i] + sd);
    }
    if (y_lo > y_hi) {
        y_lo = 0;
        y_hi = 1;
    }
    if (x_hi == x_lo) x_hi = x_lo + 1;
    if (y_hi == y_lo) y_hi = y_lo + 1;
    const double pad = 0.06 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;

    auto px = [&](double x) { return ml + (x - x_lo) / (x_hi - x_lo) * pw; };
    auto py = [&](double y) { return mt + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph; };

    std::string svg;
    char buf[256];
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" "
                  "text-anchor=\"middle\">%s</text>\n",
                  ml + pw / 2, title.c_str());
    svg += buf;

    // axes
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", ml,
                  mt + ph, ml + pw, mt + ph);
    svg += buf;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", ml, mt,
                  ml, mt + ph);
    svg += buf;

    // ticks: 5 per axis
    for (int i = 0; i <= 4; ++i) {
        const double xv = x_lo + (x_hi - x_lo) * i / 4;
        const double yv = y_lo + (y_hi - y_lo) * i / 4;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                      px(xv), mt + ph, px(xv), mt + ph + 5);
        svg += buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"11\" "
                      "text-anchor=\"middle\">%s</text>\n",
                      px(xv), mt + ph + 18, detail::fmt_tick(xv).c_str());
        svg += buf;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                      ml - 5, py(yv), ml, py(yv));
        svg += buf;
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%g\" y=\"%g\" font-family=\"sans-serif\" font-size=\"11\" "
                      "text-anchor=\"end\">%s</text>\n",
                      ml - 8, py(yv) + 4, detail::fmt_tick(yv).c_str());
        svg += buf;
    }
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%d\" font-family=\"sans-serif\" font-size=\"13\" "
                  "text-anchor=\"middle\">%s</text>\n",
                  ml + pw / 2, height - 12, x_label.c_str());
    svg += buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"18\" y=\"%g\" font-family=\"sans-serif\" font-size=\"13\" "
                  "text-anchor=\"middle\" transform=\"rotate(-90 18 %g)\">%s</text>\n",
                  mt + ph / 2, mt + ph / 2, y_label.c_str());
    svg += buf;

    // stddev whiskers
    for (size_t i = 0; i < s.x.size() && i < s.mean.size(); ++i) {
        if (!std::isfinite(s.mean[i])) continue;
        const double sd = i < s.stddev.size() ? s.stddev[i] : 0.0;
        if (sd <= 0) continue;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"#888\"/>\n",
                      px(s.x[i]), py(s.mean[i] - sd), px(s.x[i]), py(s.mean[i] + sd));
        svg += buf;
    }

    // mean polyline + markers (finite points only)
    std::string points;
    for (size_t i = 0; i < s.x.size() && i < s.mean.size(); ++i) {
        if (!std::isfinite(s.mean[i])) continue;
        std::snprintf(buf, sizeof buf, "%g,%g ", px(s.x[i]), py(s.mean[i]));
        points += buf;
    }
    svg += "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" points=\"" + points +
           "\"/>\n";
    for (size_t i = 0; i < s.x.size() && i < s.mean.size(); ++i) {
        if (!std::isfinite(s.mean[i])) continue;
        std::snprintf(buf, sizeof buf,
                      "<circle cx=\"%g\" cy=\"%g\" r=\"3.5\" fill=\"#1f6fb2\"/>\n", px(s.x[i]),
                      py(s.mean[i]));
        svg += buf;
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace steerlab
