#pragma once

// Dependency-free SVG charts for report CSVs. Output is a pure function of the
// input table, so re-rendering the same CSV reproduces the file byte for byte.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "steerlab/csv.hpp"
#include "steerlab/error.hpp"

namespace steerlab {

enum class PlotKind { line, box, bar };

inline PlotKind parse_plot_kind(std::string_view s)
{
    if (s == "line") return PlotKind::line;
    if (s == "box") return PlotKind::box;
    if (s == "bar") return PlotKind::bar;
    throw InvalidArgument("unknown plot kind '" + std::string(s) + "' (expected line, box or bar)");
}

/// Which CSV columns feed the chart. `x` is only read by line plots.
struct PlotColumns {
    std::string series = "series";
    std::string x = "x";
    std::string y = "y";
};

/// Mean with a normal-approximation 95% interval, mean +- 1.96 * s / sqrt(n)
/// using the sample standard deviation. A single value has a zero-width interval.
struct Interval {
    double mean = 0.0;
    double low = 0.0;
    double high = 0.0;
    double stderror = 0.0;
    std::size_t n = 0;
};

inline Interval ci95(std::span<const double> values)
{
    if (values.empty()) throw InvalidArgument("ci95: no values");
    Interval iv;
    iv.n = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    iv.mean = sum / static_cast<double>(iv.n);
    if (iv.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - iv.mean) * (v - iv.mean);
        iv.stderror = std::sqrt(ss / static_cast<double>(iv.n - 1)) / std::sqrt(static_cast<double>(iv.n));
    }
    iv.low = iv.mean - 1.96 * iv.stderror;
    iv.high = iv.mean + 1.96 * iv.stderror;
    return iv;
}

namespace detail {

inline constexpr std::array<std::string_view, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                              "#9467bd", "#8c564b", "#e377c2", "#17becf"};
inline constexpr double kWidth = 640.0;
inline constexpr double kHeight = 400.0;
inline constexpr double kLeft = 70.0;
inline constexpr double kRight = 150.0;
inline constexpr double kTop = 30.0;
inline constexpr double kBottom = 50.0;

inline std::string fmt(const char* spec, double v)
{
    char buf[48];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

inline double parse_number(const std::string& s, std::string_view column)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError("column '" + std::string(column) + "' holds non-numeric value '" + s + "'");
    }
}

inline std::string xml_escape(std::string_view s)
{
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

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void include(double v)
    {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    void pad()
    {
        if (hi - lo <= 0.0) {
            const double w = std::max(std::abs(lo) * 0.1, 0.5);
            lo -= w;
            hi += w;
        } else {
            const double w = (hi - lo) * 0.05;
            lo -= w;
            hi += w;
        }
    }
};

struct Canvas {
    Range xr, yr;
    std::string body;

    double px(double x) const { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * (kWidth - kLeft - kRight); }
    double py(double y) const { return kHeight - kBottom - (y - yr.lo) / (yr.hi - yr.lo) * (kHeight - kTop - kBottom); }

    std::string finish(std::string_view title, std::string_view xlabel, std::string_view ylabel,
                       const std::vector<std::string>& legend, bool numeric_x) const
    {
        std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
        s += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
        s += "<text x=\"320\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
             xml_escape(title) + "</text>\n";
        const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
        s += "<line x1=\"" + fmt("%.2f", x0) + "\" y1=\"" + fmt("%.2f", y0) + "\" x2=\"" + fmt("%.2f", x1) +
             "\" y2=\"" + fmt("%.2f", y0) + "\" stroke=\"black\"/>\n";
        s += "<line x1=\"" + fmt("%.2f", x0) + "\" y1=\"" + fmt("%.2f", y0) + "\" x2=\"" + fmt("%.2f", x0) +
             "\" y2=\"" + fmt("%.2f", y1) + "\" stroke=\"black\"/>\n";
        for (int t = 0; t <= 4; ++t) {
            const double v = yr.lo + (yr.hi - yr.lo) * t / 4.0;
            s += "<text x=\"" + fmt("%.2f", x0 - 6) + "\" y=\"" + fmt("%.2f", py(v) + 4) +
                 "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + fmt("%.4g", v) + "</text>\n";
            if (numeric_x) {
                const double xv = xr.lo + (xr.hi - xr.lo) * t / 4.0;
                s += "<text x=\"" + fmt("%.2f", px(xv)) + "\" y=\"" + fmt("%.2f", y0 + 16) +
                     "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + fmt("%.4g", xv) +
                     "</text>\n";
            }
        }
        s += "<text x=\"" + fmt("%.2f", (x0 + x1) / 2) + "\" y=\"" + fmt("%.2f", kHeight - 10) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + xml_escape(xlabel) + "</text>\n";
        s += "<text x=\"14\" y=\"" + fmt("%.2f", (y0 + y1) / 2) + "\" transform=\"rotate(-90 14 " +
             fmt("%.2f", (y0 + y1) / 2) + ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
             xml_escape(ylabel) + "</text>\n";
        s += body;
        for (std::size_t i = 0; i < legend.size(); ++i) {
            const double ly = kTop + 14.0 * static_cast<double>(i) + 6;
            s += "<rect x=\"" + fmt("%.2f", x1 + 12) + "\" y=\"" + fmt("%.2f", ly - 8) + "\" width=\"10\" height=\"10\" fill=\"" +
                 std::string(kPalette[i % kPalette.size()]) + "\"/>\n";
            s += "<text x=\"" + fmt("%.2f", x1 + 26) + "\" y=\"" + fmt("%.2f", ly) +
                 "\" font-family=\"sans-serif\" font-size=\"10\">" + xml_escape(legend[i]) + "</text>\n";
        }
        return s + "</svg>\n";
    }
};

// Values grouped by series (first-appearance order), then by x.
struct Grouped {
    std::vector<std::string> series;
    std::map<std::string, std::map<double, std::vector<double>>> values;
};

inline Grouped group(const csv::Table& table, const PlotColumns& cols, bool use_x)
{
    const std::size_t sc = table.column(cols.series);
    const std::size_t yc = table.column(cols.y);
    const std::size_t xc = use_x ? table.column(cols.x) : 0;
    Grouped g;
    for (const auto& row : table.rows) {
        const std::string& s = row[sc];
        if (!g.values.contains(s)) g.series.push_back(s);
        const double x = use_x ? parse_number(row[xc], cols.x) : 0.0;
        g.values[s][x].push_back(parse_number(row[yc], cols.y));
    }
    if (g.series.empty()) throw FormatError("plot: CSV has no data rows");
    return g;
}

inline double quantile(std::vector<double> v, double q)
{
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(i);
    return i + 1 < v.size() ? v[i] + frac * (v[i + 1] - v[i]) : v[i];
}

}  // namespace detail

/// Renders a chart for `table`. Line: one polyline per series over numeric x,
/// points are group means, a shaded 95% band wherever a group has >1 values.
/// Box: quartile boxes with min/max whiskers per series. Bar: series means
/// with 95% error bars.
inline std::string render_plot(const csv::Table& table, PlotKind kind, const PlotColumns& cols = {},
                               std::string_view title = {})
{
    using namespace detail;
    Canvas cv;
    const Grouped g = group(table, cols, kind == PlotKind::line);

    if (kind == PlotKind::line) {
        for (const auto& [s, by_x] : g.values) {
            for (const auto& [x, ys] : by_x) {
                const Interval iv = ci95(ys);
                cv.xr.include(x);
                cv.yr.include(iv.low);
                cv.yr.include(iv.high);
            }
        }
        cv.xr.pad();
        cv.yr.pad();
        for (std::size_t k = 0; k < g.series.size(); ++k) {
            const auto& by_x = g.values.at(g.series[k]);
            const std::string colour(kPalette[k % kPalette.size()]);
            std::vector<std::pair<double, Interval>> pts;
            bool grouped = false;
            for (const auto& [x, ys] : by_x) {
                pts.emplace_back(x, ci95(ys));
                grouped = grouped || ys.size() > 1;
            }
            if (grouped) {
                std::string poly;
                for (const auto& [x, iv] : pts) poly += fmt("%.2f", cv.px(x)) + "," + fmt("%.2f", cv.py(iv.high)) + " ";
                for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
                    poly += fmt("%.2f", cv.px(it->first)) + "," + fmt("%.2f", cv.py(it->second.low)) + " ";
                }
                poly.pop_back();
                cv.body += "<polygon class=\"ci-band\" points=\"" + poly + "\" fill=\"" + colour +
                           "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
            }
            if (pts.size() > 1) {
                std::string line;
                for (const auto& [x, iv] : pts) line += fmt("%.2f", cv.px(x)) + "," + fmt("%.2f", cv.py(iv.mean)) + " ";
                line.pop_back();
                cv.body += "<polyline points=\"" + line + "\" fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"1.5\"/>\n";
            }
            for (const auto& [x, iv] : pts) {
                cv.body += "<circle class=\"marker\" cx=\"" + fmt("%.2f", cv.px(x)) + "\" cy=\"" +
                           fmt("%.2f", cv.py(iv.mean)) + "\" r=\"3\" fill=\"" + colour + "\"/>\n";
            }
        }
        return cv.finish(title, cols.x, cols.y, g.series, true);
    }

    // box and bar: one slot per series along x
    cv.xr.lo = 0.0;
    cv.xr.hi = static_cast<double>(g.series.size());
    for (const auto& s : g.series) {
        const auto& ys = g.values.at(s).begin()->second;
        if (kind == PlotKind::box) {
            for (double y : ys) cv.yr.include(y);
        } else {
            const Interval iv = ci95(ys);
            cv.yr.include(iv.low);
            cv.yr.include(iv.high);
            cv.yr.include(0.0);
        }
    }
    cv.yr.pad();
    const double slot = (kWidth - kLeft - kRight) / static_cast<double>(g.series.size());
    for (std::size_t k = 0; k < g.series.size(); ++k) {
        const auto& ys = g.values.at(g.series[k]).begin()->second;
        const std::string colour(kPalette[k % kPalette.size()]);
        const double cx = cv.px(static_cast<double>(k) + 0.5);
        const double half = slot * 0.3;
        if (kind == PlotKind::box) {
            const double q0 = quantile(ys, 0.0), q1 = quantile(ys, 0.25), q2 = quantile(ys, 0.5),
                         q3 = quantile(ys, 0.75), q4 = quantile(ys, 1.0);
            cv.body += "<line x1=\"" + fmt("%.2f", cx) + "\" y1=\"" + fmt("%.2f", cv.py(q0)) + "\" x2=\"" +
                       fmt("%.2f", cx) + "\" y2=\"" + fmt("%.2f", cv.py(q4)) + "\" stroke=\"black\"/>\n";
            cv.body += "<rect class=\"box\" x=\"" + fmt("%.2f", cx - half) + "\" y=\"" + fmt("%.2f", cv.py(q3)) +
                       "\" width=\"" + fmt("%.2f", 2 * half) + "\" height=\"" + fmt("%.2f", cv.py(q1) - cv.py(q3)) +
                       "\" fill=\"" + colour + "\" fill-opacity=\"0.5\" stroke=\"black\"/>\n";
            cv.body += "<line x1=\"" + fmt("%.2f", cx - half) + "\" y1=\"" + fmt("%.2f", cv.py(q2)) + "\" x2=\"" +
                       fmt("%.2f", cx + half) + "\" y2=\"" + fmt("%.2f", cv.py(q2)) + "\" stroke=\"black\" stroke-width=\"2\"/>\n";
        } else {
            const Interval iv = ci95(ys);
            const double top = cv.py(std::max(iv.mean, 0.0));
            const double bottom = cv.py(std::min(iv.mean, 0.0));
            cv.body += "<rect class=\"bar\" x=\"" + fmt("%.2f", cx - half) + "\" y=\"" + fmt("%.2f", top) +
                       "\" width=\"" + fmt("%.2f", 2 * half) + "\" height=\"" + fmt("%.2f", bottom - top) +
                       "\" fill=\"" + colour + "\"/>\n";
            if (iv.n > 1) {
                cv.body += "<line class=\"ci-bar\" x1=\"" + fmt("%.2f", cx) + "\" y1=\"" + fmt("%.2f", cv.py(iv.low)) +
                           "\" x2=\"" + fmt("%.2f", cx) + "\" y2=\"" + fmt("%.2f", cv.py(iv.high)) +
                           "\" stroke=\"black\"/>\n";
            }
        }
    }
    return cv.finish(title, cols.series, cols.y, g.series, false);
}

/// Reads `csv_path` and writes the chart to `svg_path`.
inline void emit_plot(const std::filesystem::path& csv_path, PlotKind kind, const std::filesystem::path& svg_path,
                      const PlotColumns& cols = {}, std::string_view title = {})
{
    csv::write_text(svg_path, render_plot(csv::read(csv_path), kind, cols, title));
}

}  // namespace steerlab
