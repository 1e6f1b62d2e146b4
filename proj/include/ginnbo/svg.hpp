#pragma once

// Minimal SVG 1.1 line charts: polylines, shaded bands, scatter points.

#include <algorithm>
#include <cmath>
#include <charconv>
#include <iomanip>
#include <locale>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace ginnbo::svg {

struct Series {
    std::string label;
    std::string color = "#1f77b4";
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> lower;  // optional band, same length as x
    std::vector<double> upper;
    bool markers_only = false;
    bool dashed = false;
};

struct Panel {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_y = false;
    std::vector<Series> series;
};

inline const std::vector<std::string>& palette() {
    static const std::vector<std::string> colors{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#7f7f7f", "#ff7f0e"};
    return colors;
}

namespace detail {

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string num(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 2);
    return std::string(buf, res.ptr);
}

inline std::string tick_label(double v) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::setprecision(3) << v;
    return os.str();
}

inline std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
    const double span = hi - lo;
    if (!(span > 0.0)) return {lo};
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (m * mag >= raw) {
            step = m * mag;
            break;
        }
    }
    std::vector<double> ticks;
    for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) ticks.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
    return ticks;
}

}  // namespace detail

/// Renders panels side by side into one SVG document.
inline std::string render(const std::vector<Panel>& panels, double panel_width = 420.0, double panel_height = 320.0) {
    constexpr double left = 62.0, right = 14.0, top = 30.0, bottom = 46.0;
    constexpr double tiny = 1e-300;
    const double width = panel_width * static_cast<double>(std::max<std::size_t>(panels.size(), 1));
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << detail::num(width) << "\" height=\""
       << detail::num(panel_height) << "\" viewBox=\"0 0 " << detail::num(width) << ' ' << detail::num(panel_height)
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (std::size_t p = 0; p < panels.size(); ++p) {
        const Panel& panel = panels[p];
        const double ox = panel_width * static_cast<double>(p);
        const auto ty = [&](double v) { return panel.log_y ? std::log10(std::max(v, tiny)) : v; };

        double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
        for (const auto& s : panel.series) {
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
                if (panel.log_y && !(s.y[i] > 0.0)) continue;
                xmin = std::min(xmin, s.x[i]);
                xmax = std::max(xmax, s.x[i]);
                ymin = std::min(ymin, ty(s.y[i]));
                ymax = std::max(ymax, ty(s.y[i]));
                if (!s.lower.empty()) {
                    for (double b : {s.lower[i], s.upper[i]}) {
                        if (!std::isfinite(b) || (panel.log_y && !(b > 0.0))) continue;
                        ymin = std::min(ymin, ty(b));
                        ymax = std::max(ymax, ty(b));
                    }
                }
            }
        }
        if (!std::isfinite(xmin)) xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
        if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
        if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
        const double pad = 0.04 * (ymax - ymin);
        ymin -= pad;
        ymax += pad;

        const double pw = panel_width - left - right, ph = panel_height - top - bottom;
        const auto px = [&](double x) { return ox + left + (x - xmin) / (xmax - xmin) * pw; };
        const auto py = [&](double y) { return top + (1.0 - (ty(y) - ymin) / (ymax - ymin)) * ph; };
        const auto py_raw = [&](double t) { return top + (1.0 - (t - ymin) / (ymax - ymin)) * ph; };

        os << "<g>\n<text x=\"" << detail::num(ox + left + pw / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
           << detail::escape(panel.title) << "</text>\n";
        os << "<rect x=\"" << detail::num(ox + left) << "\" y=\"" << detail::num(top) << "\" width=\"" << detail::num(pw)
           << "\" height=\"" << detail::num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
        for (double t : detail::nice_ticks(xmin, xmax)) {
            os << "<line x1=\"" << detail::num(px(t)) << "\" y1=\"" << detail::num(top + ph) << "\" x2=\"" << detail::num(px(t))
               << "\" y2=\"" << detail::num(top + ph + 4) << "\" stroke=\"black\"/><text x=\"" << detail::num(px(t))
               << "\" y=\"" << detail::num(top + ph + 16) << "\" text-anchor=\"middle\">" << detail::tick_label(t) << "</text>\n";
        }
        for (double t : detail::nice_ticks(ymin, ymax)) {
            const std::string label = panel.log_y ? "1e" + detail::tick_label(t) : detail::tick_label(t);
            os << "<line x1=\"" << detail::num(ox + left - 4) << "\" y1=\"" << detail::num(py_raw(t)) << "\" x2=\""
               << detail::num(ox + left) << "\" y2=\"" << detail::num(py_raw(t)) << "\" stroke=\"black\"/><text x=\""
               << detail::num(ox + left - 6) << "\" y=\"" << detail::num(py_raw(t) + 4) << "\" text-anchor=\"end\">" << label
               << "</text>\n";
        }
        os << "<text x=\"" << detail::num(ox + left + pw / 2) << "\" y=\"" << detail::num(panel_height - 8)
           << "\" text-anchor=\"middle\">" << detail::escape(panel.x_label) << "</text>\n";
        os << "<text transform=\"translate(" << detail::num(ox + 14) << ',' << detail::num(top + ph / 2)
           << ") rotate(-90)\" text-anchor=\"middle\">" << detail::escape(panel.y_label) << "</text>\n";

        for (const auto& s : panel.series) {
            const auto ok = [&](double y) { return std::isfinite(y) && (!panel.log_y || y > 0.0); };
            if (!s.lower.empty()) {
                std::ostringstream pts;
                pts.imbue(std::locale::classic());
                for (std::size_t i = 0; i < s.x.size(); ++i)
                    if (ok(s.upper[i])) pts << detail::num(px(s.x[i])) << ',' << detail::num(py(s.upper[i])) << ' ';
                for (std::size_t i = s.x.size(); i-- > 0;)
                    pts << detail::num(px(s.x[i])) << ',' << detail::num(ok(s.lower[i]) ? py(s.lower[i]) : py_raw(ymin)) << ' ';
                os << "<polygon points=\"" << pts.str() << "\" fill=\"" << s.color
                   << "\" fill-opacity=\"0.18\" stroke=\"none\"/>\n";
            }
            if (s.markers_only) {
                for (std::size_t i = 0; i < s.x.size(); ++i) {
                    if (!ok(s.y[i])) continue;
                    os << "<circle cx=\"" << detail::num(px(s.x[i])) << "\" cy=\"" << detail::num(py(s.y[i]))
                       << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
                }
            } else {
                os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.6\""
                   << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
                for (std::size_t i = 0; i < s.x.size(); ++i) {
                    if (ok(s.y[i])) os << detail::num(px(s.x[i])) << ',' << detail::num(py(s.y[i])) << ' ';
                }
                os << "\"/>\n";
            }
        }
        // Legend, top right.
        double ly = top + 14;
        for (const auto& s : panel.series) {
            if (s.label.empty()) continue;
            const double lx = ox + left + pw - 120;
            os << "<line x1=\"" << detail::num(lx) << "\" y1=\"" << detail::num(ly - 4) << "\" x2=\"" << detail::num(lx + 16)
               << "\" y2=\"" << detail::num(ly - 4) << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/><text x=\""
               << detail::num(lx + 20) << "\" y=\"" << detail::num(ly) << "\">" << detail::escape(s.label) << "</text>\n";
            ly += 14;
        }
        os << "</g>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace ginnbo::svg
