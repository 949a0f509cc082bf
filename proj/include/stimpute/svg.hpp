#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace stimpute {

/// One node's imputation summary over a window: the median line, the 0.05-0.95
/// band, scattered raw observations, and (when known) the complete truth.
struct SeriesPlot {
    std::string title;
    std::vector<double> median;
    std::vector<double> q05;
    std::vector<double> q95;
    std::vector<double> truth;            // empty when unknown
    std::vector<double> observed_values;  // aligned with `observed`
    std::vector<bool> observed;
};

namespace svg_detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace svg_detail

/// Renders a fixed-size line chart; viewers scale the vector output freely.
inline std::string render_series_plot(const SeriesPlot& p) {
    const double W = 640.0, H = 240.0, ml = 48.0, mr = 12.0, mt = 28.0, mb = 24.0;
    const int L = static_cast<int>(p.median.size());
    double lo = 1e300, hi = -1e300;
    auto widen = [&](const std::vector<double>& v) {
        for (double x : v)
            if (std::isfinite(x)) lo = std::min(lo, x), hi = std::max(hi, x);
    };
    widen(p.median), widen(p.q05), widen(p.q95), widen(p.truth);
    for (int l = 0; l < static_cast<int>(p.observed.size()); ++l)
        if (p.observed[static_cast<std::size_t>(l)])
            lo = std::min(lo, p.observed_values[static_cast<std::size_t>(l)]),
            hi = std::max(hi, p.observed_values[static_cast<std::size_t>(l)]);
    if (!(lo < hi)) lo -= 1.0, hi += 1.0;
    const double pad = 0.05 * (hi - lo);
    lo -= pad, hi += pad;

    auto X = [&](int l) { return ml + (W - ml - mr) * (L > 1 ? double(l) / (L - 1) : 0.5); };
    auto Y = [&](double v) { return H - mb - (H - mt - mb) * (v - lo) / (hi - lo); };
    auto polyline = [&](const std::vector<double>& v, const char* style) {
        std::ostringstream s;
        s << "  <polyline fill=\"none\" " << style << " points=\"";
        for (int l = 0; l < static_cast<int>(v.size()); ++l)
            s << svg_detail::num(X(l)) << ',' << svg_detail::num(Y(v[static_cast<std::size_t>(l)])) << ' ';
        s << "\"/>\n";
        return s.str();
    };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
    s << "  <rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    s << "  <text x=\"" << ml << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">"
      << p.title << "</text>\n";
    // axes with end labels
    s << "  <line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
      << "\" stroke=\"#333\"/>\n";
    s << "  <line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
      << H - mb << "\" stroke=\"#333\"/>\n";
    s << "  <text x=\"4\" y=\"" << Y(hi - pad) + 4 << "\" font-family=\"sans-serif\" font-size=\"10\">"
      << svg_detail::num(hi - pad) << "</text>\n";
    s << "  <text x=\"4\" y=\"" << Y(lo + pad) + 4 << "\" font-family=\"sans-serif\" font-size=\"10\">"
      << svg_detail::num(lo + pad) << "</text>\n";

    if (!p.q05.empty() && p.q05.size() == p.q95.size()) {
        s << "  <polygon fill=\"#aecbeb\" fill-opacity=\"0.55\" stroke=\"none\" points=\"";
        for (int l = 0; l < L; ++l)
            s << svg_detail::num(X(l)) << ',' << svg_detail::num(Y(p.q95[static_cast<std::size_t>(l)])) << ' ';
        for (int l = L - 1; l >= 0; --l)
            s << svg_detail::num(X(l)) << ',' << svg_detail::num(Y(p.q05[static_cast<std::size_t>(l)])) << ' ';
        s << "\"/>\n";
    }
    if (!p.truth.empty())
        s << polyline(p.truth, "stroke=\"#666\" stroke-width=\"1\" stroke-dasharray=\"4 3\"");
    s << polyline(p.median, "stroke=\"#1f77b4\" stroke-width=\"1.6\"");
    for (int l = 0; l < static_cast<int>(p.observed.size()); ++l)
        if (p.observed[static_cast<std::size_t>(l)])
            s << "  <circle cx=\"" << svg_detail::num(X(l)) << "\" cy=\""
              << svg_detail::num(Y(p.observed_values[static_cast<std::size_t>(l)]))
              << "\" r=\"2.4\" fill=\"#d62728\"/>\n";
    s << "</svg>\n";
    return s.str();
}

}  // namespace stimpute
