#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latentscope/analyze.hpp"
#include "latentscope/config.hpp"
#include "latentscope/error.hpp"
#include "latentscope/util.hpp"

namespace latentscope::plot {

enum class ColorBy { component_depth, position_gradient, none };

inline std::string to_string(ColorBy c) {
    switch (c) {
        case ColorBy::component_depth: return "component_depth";
        case ColorBy::position_gradient: return "position_gradient";
        case ColorBy::none: return "none";
    }
    return "?";
}

inline ColorBy color_by_from_string(const std::string& s) {
    if (s == "component_depth" || s == "component") return ColorBy::component_depth;
    if (s == "position_gradient" || s == "position") return ColorBy::position_gradient;
    if (s == "none") return ColorBy::none;
    throw ValidationError("unknown color scheme: " + s);
}

struct PlotSpec {
    ColorBy color_by = ColorBy::none;
    std::optional<std::array<double, 4>> limits; // xmin, xmax, ymin, ymax
    double point_radius = 2.0;
    std::string title, xlabel, ylabel;
    bool log_scale = false;            // line charts: log10 on the value axis
    size_t max_points_per_panel = 50000;
    uint64_t seed = 0;
    double panel_width = 480, panel_height = 360;

    void validate() const {
        if (limits) {
            const auto& l = *limits;
            for (double v : l)
                if (!std::isfinite(v)) throw ValidationError("plot limits must be finite");
            if (l[0] >= l[1] || l[2] >= l[3])
                throw ValidationError("plot limits must satisfy min < max");
        }
    }
};

// Per-point identity used by the color schemes.
struct PointTag {
    enum class Family { attn, mlp, other };
    Family family = Family::other;
    int block = 0;
    int n_blocks = 1;
    long position = -1;
    long seq_len = 0;
};

// Points 1-3 live in a block's attention half, 4-6 in its MLP half.
inline PointTag tag_from_capture(const CaptureTag& t, size_t n_blocks, long position = -1,
                                 long seq_len = 0) {
    PointTag p;
    p.block = t.in_block() ? t.block : 0;
    p.n_blocks = static_cast<int>(n_blocks);
    p.position = position;
    p.seq_len = seq_len;
    if (t.in_block())
        p.family = t.point <= 3 ? PointTag::Family::attn : PointTag::Family::mlp;
    return p;
}

namespace detail {

inline std::string hex2(int v) {
    static const char* digits = "0123456789abcdef";
    std::string s(2, '0');
    s[0] = digits[(v >> 4) & 0xF];
    s[1] = digits[v & 0xF];
    return s;
}

inline std::string hsl_to_hex(double h, double s, double l) {
    double c = (1.0 - std::abs(2.0 * l - 1.0)) * s;
    double hp = h / 60.0;
    double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c; g = x;
    } else if (hp < 2) {
        r = x; g = c;
    } else if (hp < 3) {
        g = c; b = x;
    } else if (hp < 4) {
        g = x; b = c;
    } else if (hp < 5) {
        r = x; b = c;
    } else {
        r = c; b = x;
    }
    double m = l - c / 2.0;
    auto to255 = [&](double v) {
        int iv = static_cast<int>(std::lround((v + m) * 255.0));
        return std::clamp(iv, 0, 255);
    };
    return "#" + hex2(to255(r)) + hex2(to255(g)) + hex2(to255(b));
}

} // namespace detail

// Pure function of (family, block, n_blocks) and the scheme: attention is
// blue, MLP red, lightness ramps 0.30 (block 0) to 0.80 (last block).
// Position gradient is a single-hue lightness ramp over sequence index.
inline std::string point_color(const PointTag& t, ColorBy scheme) {
    switch (scheme) {
        case ColorBy::component_depth: {
            double frac = t.n_blocks > 1
                              ? static_cast<double>(t.block) / (t.n_blocks - 1)
                              : 0.0;
            double lightness = 0.30 + frac * (0.80 - 0.30);
            if (t.family == PointTag::Family::attn)
                return detail::hsl_to_hex(220.0, 0.70, lightness);
            if (t.family == PointTag::Family::mlp)
                return detail::hsl_to_hex(0.0, 0.70, lightness);
            return detail::hsl_to_hex(0.0, 0.0, lightness);
        }
        case ColorBy::position_gradient: {
            double frac = t.seq_len > 1 && t.position >= 0
                              ? static_cast<double>(t.position) / (t.seq_len - 1)
                              : 0.0;
            return detail::hsl_to_hex(170.0, 0.65, 0.25 + frac * (0.85 - 0.25));
        }
        case ColorBy::none: return "#4477aa";
    }
    return "#000000";
}

namespace detail {

struct AxisBox {
    double x0, y0, w, h; // pixel plot area
    double xmin, xmax, ymin, ymax;

    double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
    double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }
};

inline std::array<double, 4> data_limits(const std::vector<double>& xs,
                                         const std::vector<double>& ys) {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (double v : xs) {
        xmin = std::min(xmin, v);
        xmax = std::max(xmax, v);
    }
    for (double v : ys) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
    }
    if (xs.empty()) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    // 5% margins; degenerate spans widen by 0.5 either side
    auto widen = [](double& lo, double& hi) {
        if (hi - lo < 1e-300) {
            lo -= 0.5;
            hi += 0.5;
        } else {
            double m = (hi - lo) * 0.05;
            lo -= m;
            hi += m;
        }
    };
    widen(xmin, xmax);
    widen(ymin, ymax);
    return {xmin, xmax, ymin, ymax};
}

inline void render_axes(std::string& svg, const AxisBox& box, const std::string& xlabel,
                        const std::string& ylabel) {
    svg += "<rect x=\"" + format_fixed(box.x0, 2) + "\" y=\"" + format_fixed(box.y0, 2) +
           "\" width=\"" + format_fixed(box.w, 2) + "\" height=\"" + format_fixed(box.h, 2) +
           "\" fill=\"none\" stroke=\"#888888\" stroke-width=\"1\"/>\n";
    const int ticks = 5;
    for (int t = 0; t <= ticks; ++t) {
        double fx = static_cast<double>(t) / ticks;
        double xv = box.xmin + fx * (box.xmax - box.xmin);
        double yv = box.ymin + fx * (box.ymax - box.ymin);
        double px = box.x0 + fx * box.w;
        double py = box.y0 + box.h - fx * box.h;
        svg += "<line x1=\"" + format_fixed(px, 2) + "\" y1=\"" + format_fixed(box.y0 + box.h, 2) +
               "\" x2=\"" + format_fixed(px, 2) + "\" y2=\"" +
               format_fixed(box.y0 + box.h + 4, 2) + "\" stroke=\"#888888\"/>\n";
        svg += "<text x=\"" + format_fixed(px, 2) + "\" y=\"" +
               format_fixed(box.y0 + box.h + 16, 2) +
               "\" font-size=\"9\" text-anchor=\"middle\" fill=\"#444444\">" +
               format_fixed(xv, 3) + "</text>\n";
        svg += "<line x1=\"" + format_fixed(box.x0 - 4, 2) + "\" y1=\"" + format_fixed(py, 2) +
               "\" x2=\"" + format_fixed(box.x0, 2) + "\" y2=\"" + format_fixed(py, 2) +
               "\" stroke=\"#888888\"/>\n";
        svg += "<text x=\"" + format_fixed(box.x0 - 6, 2) + "\" y=\"" + format_fixed(py + 3, 2) +
               "\" font-size=\"9\" text-anchor=\"end\" fill=\"#444444\">" + format_fixed(yv, 3) +
               "</text>\n";
    }
    if (!xlabel.empty())
        svg += "<text x=\"" + format_fixed(box.x0 + box.w / 2, 2) + "\" y=\"" +
               format_fixed(box.y0 + box.h + 32, 2) +
               "\" font-size=\"11\" text-anchor=\"middle\" fill=\"#222222\">" + xlabel +
               "</text>\n";
    if (!ylabel.empty())
        svg += "<text x=\"" + format_fixed(box.x0 - 36, 2) + "\" y=\"" +
               format_fixed(box.y0 + box.h / 2, 2) +
               "\" font-size=\"11\" text-anchor=\"middle\" fill=\"#222222\" transform=\"rotate(-90 " +
               format_fixed(box.x0 - 36, 2) + " " + format_fixed(box.y0 + box.h / 2, 2) + ")\">" +
               ylabel + "</text>\n";
}

inline std::string join_numbers(const std::vector<double>& vs) {
    std::string out;
    for (size_t i = 0; i < vs.size(); ++i) {
        if (i) out += ' ';
        out += format_double(vs[i]);
    }
    return out;
}

struct PanelData {
    std::vector<double> xs, ys;
    std::vector<std::string> colors;
    std::string label;
};

// One scatter panel: frame, ticks, circles, and the exact numeric series in
// data-* attributes for test parsing.
inline void render_panel(std::string& svg, const PanelData& panel, const PlotSpec& spec,
                         double off_x, double off_y) {
    const double margin_l = 52, margin_b = 42, margin_t = 26, margin_r = 14;
    AxisBox box;
    box.x0 = off_x + margin_l;
    box.y0 = off_y + margin_t;
    box.w = spec.panel_width - margin_l - margin_r;
    box.h = spec.panel_height - margin_t - margin_b;
    std::array<double, 4> lims =
        spec.limits ? *spec.limits : data_limits(panel.xs, panel.ys);
    box.xmin = lims[0];
    box.xmax = lims[1];
    box.ymin = lims[2];
    box.ymax = lims[3];

    svg += "<g data-panel=\"" + panel.label + "\" data-xmin=\"" + format_double(box.xmin) +
           "\" data-xmax=\"" + format_double(box.xmax) + "\" data-ymin=\"" +
           format_double(box.ymin) + "\" data-ymax=\"" + format_double(box.ymax) +
           "\" data-plot-x=\"" + format_fixed(box.x0, 2) + "\" data-plot-y=\"" +
           format_fixed(box.y0, 2) + "\" data-plot-w=\"" + format_fixed(box.w, 2) +
           "\" data-plot-h=\"" + format_fixed(box.h, 2) + "\" data-x=\"" +
           join_numbers(panel.xs) + "\" data-y=\"" + join_numbers(panel.ys) + "\">\n";
    render_axes(svg, box, spec.xlabel, spec.ylabel);
    if (!panel.label.empty())
        svg += "<text x=\"" + format_fixed(box.x0 + box.w / 2, 2) + "\" y=\"" +
               format_fixed(off_y + 16, 2) +
               "\" font-size=\"11\" text-anchor=\"middle\" fill=\"#222222\">" + panel.label +
               "</text>\n";
    for (size_t i = 0; i < panel.xs.size(); ++i) {
        svg += "<circle cx=\"" + format_fixed(box.px(panel.xs[i]), 2) + "\" cy=\"" +
               format_fixed(box.py(panel.ys[i]), 2) + "\" r=\"" +
               format_fixed(spec.point_radius, 2) + "\" fill=\"" + panel.colors[i] +
               "\" fill-opacity=\"0.75\"/>\n";
    }
    svg += "</g>\n";
}

inline std::string svg_open(double width, double height, const std::string& kind,
                            const nlohmann::json& meta) {
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      format_fixed(width, 0) + "\" height=\"" + format_fixed(height, 0) +
                      "\" viewBox=\"0 0 " + format_fixed(width, 0) + " " +
                      format_fixed(height, 0) + "\" data-kind=\"" + kind + "\"";
    for (auto& [k, v] : meta.items()) {
        svg += " data-" + k + "=\"";
        svg += v.is_string() ? v.get<std::string>() : v.dump();
        svg += "\"";
    }
    svg += ">\n<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    return svg;
}

} // namespace detail

// 2D scatter. Points and tags are parallel arrays.
inline std::string render_scatter(const std::vector<std::array<double, 2>>& points,
                                  const std::vector<PointTag>& tags, const PlotSpec& spec) {
    spec.validate();
    if (points.size() != tags.size())
        throw ValidationError("render_scatter: points and tags differ in length");
    for (size_t i = 0; i < points.size(); ++i)
        if (!std::isfinite(points[i][0]) || !std::isfinite(points[i][1]))
            throw ValidationError("render_scatter: non-finite point at index " +
                                  std::to_string(i));

    std::vector<size_t> keep(points.size());
    for (size_t i = 0; i < keep.size(); ++i) keep[i] = i;
    bool downsampled = false;
    if (points.size() > spec.max_points_per_panel) {
        Rng rng(spec.seed);
        auto chosen =
            sample_without_replacement(rng, points.size(), spec.max_points_per_panel);
        keep.assign(chosen.begin(), chosen.end());
        downsampled = true;
    }

    detail::PanelData panel;
    panel.label = spec.title;
    for (size_t i : keep) {
        panel.xs.push_back(points[i][0]);
        panel.ys.push_back(points[i][1]);
        panel.colors.push_back(point_color(tags[i], spec.color_by));
    }
    nlohmann::json meta = {{"color-by", to_string(spec.color_by)},
                           {"shown", keep.size()},
                           {"total", points.size()}};
    if (downsampled) meta["downsampled"] = "true";
    std::string svg =
        detail::svg_open(spec.panel_width, spec.panel_height, "scatter", meta);
    detail::render_panel(svg, panel, spec, 0, 0);
    svg += "</svg>\n";
    return svg;
}

// All C(k,2) dimension pairs as panels in row-major pair order.
inline std::string render_pair_grid(const linalg::Matrix& points,
                                    const std::vector<PointTag>& tags, const PlotSpec& spec) {
    spec.validate();
    if (points.cols < 2) throw ValidationError("render_pair_grid: need at least 2 dims");
    if (points.rows != tags.size())
        throw ValidationError("render_pair_grid: points and tags differ in length");
    for (double v : points.data)
        if (!std::isfinite(v)) throw ValidationError("render_pair_grid: non-finite point");

    std::vector<std::pair<size_t, size_t>> pairs;
    for (size_t i = 0; i + 1 < points.cols; ++i)
        for (size_t j = i + 1; j < points.cols; ++j) pairs.push_back({i, j});

    std::vector<size_t> keep(points.rows);
    for (size_t i = 0; i < keep.size(); ++i) keep[i] = i;
    bool downsampled = false;
    if (points.rows > spec.max_points_per_panel) {
        Rng rng(spec.seed);
        auto chosen = sample_without_replacement(rng, points.rows, spec.max_points_per_panel);
        keep.assign(chosen.begin(), chosen.end());
        downsampled = true;
    }
    std::vector<std::string> colors;
    colors.reserve(keep.size());
    for (size_t i : keep) colors.push_back(point_color(tags[i], spec.color_by));

    const size_t cols = std::min<size_t>(5, pairs.size());
    const size_t rows = (pairs.size() + cols - 1) / cols;
    nlohmann::json meta = {{"color-by", to_string(spec.color_by)},
                           {"pairs", pairs.size()},
                           {"dims", points.cols},
                           {"shown", keep.size()},
                           {"total", points.rows}};
    if (downsampled) meta["downsampled"] = "true";
    std::string svg = detail::svg_open(spec.panel_width * static_cast<double>(cols),
                                       spec.panel_height * static_cast<double>(rows),
                                       "pair_grid", meta);
    for (size_t p = 0; p < pairs.size(); ++p) {
        detail::PanelData panel;
        panel.label = "dim " + std::to_string(pairs[p].first) + " vs dim " +
                      std::to_string(pairs[p].second);
        for (size_t i : keep) {
            panel.xs.push_back(points.at(i, pairs[p].first));
            panel.ys.push_back(points.at(i, pairs[p].second));
        }
        panel.colors = colors;
        double off_x = static_cast<double>(p % cols) * spec.panel_width;
        double off_y = static_cast<double>(p / cols) * spec.panel_height;
        detail::render_panel(svg, panel, spec, off_x, off_y);
    }
    svg += "</svg>\n";
    return svg;
}

// Line chart of a norm report (x = index, y = mean).
inline std::string render_line(const analyze::NormReport& report, const PlotSpec& spec) {
    spec.validate();
    if (report.indices.empty()) throw ValidationError("render_line: empty report");
    std::vector<double> xs, ys;
    for (size_t i = 0; i < report.indices.size(); ++i) {
        double y = report.means[i];
        if (spec.log_scale) {
            if (y <= 0.0)
                throw ValidationError(
                    "render_line: log scale requires strictly positive values");
            y = std::log10(y);
        }
        xs.push_back(static_cast<double>(report.indices[i]));
        ys.push_back(y);
    }
    const double margin_l = 52, margin_b = 42, margin_t = 26, margin_r = 14;
    detail::AxisBox box;
    box.x0 = margin_l;
    box.y0 = margin_t;
    box.w = spec.panel_width - margin_l - margin_r;
    box.h = spec.panel_height - margin_t - margin_b;
    auto lims = spec.limits ? *spec.limits : detail::data_limits(xs, ys);
    box.xmin = lims[0];
    box.xmax = lims[1];
    box.ymin = lims[2];
    box.ymax = lims[3];
    nlohmann::json meta = {{"axis", analyze::to_string(report.axis)},
                           {"log-scale", spec.log_scale ? "true" : "false"},
                           {"xmin", box.xmin},
                           {"xmax", box.xmax},
                           {"ymin", box.ymin},
                           {"ymax", box.ymax}};
    std::string svg = detail::svg_open(spec.panel_width, spec.panel_height, "line", meta);
    detail::render_axes(svg, box, spec.xlabel, spec.ylabel);
    if (!spec.title.empty())
        svg += "<text x=\"" + format_fixed(box.x0 + box.w / 2, 2) +
               "\" y=\"16\" font-size=\"11\" text-anchor=\"middle\" fill=\"#222222\">" +
               spec.title + "</text>\n";
    std::string pts;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) pts += ' ';
        pts += format_fixed(box.px(xs[i]), 2) + "," + format_fixed(box.py(ys[i]), 2);
    }
    svg += "<polyline data-indices=\"" + detail::join_numbers(xs) + "\" data-values=\"" +
           detail::join_numbers(ys) + "\" points=\"" + pts +
           "\" fill=\"none\" stroke=\"#2255bb\" stroke-width=\"1.5\"/>\n";
    svg += "</svg>\n";
    return svg;
}

// Bar chart of a token-norm histogram.
inline std::string render_histogram(const analyze::Histogram& hist, const PlotSpec& spec) {
    spec.validate();
    if (hist.counts.empty()) throw ValidationError("render_histogram: empty histogram");
    const double margin_l = 52, margin_b = 42, margin_t = 26, margin_r = 14;
    detail::AxisBox box;
    box.x0 = margin_l;
    box.y0 = margin_t;
    box.w = spec.panel_width - margin_l - margin_r;
    box.h = spec.panel_height - margin_t - margin_b;
    box.xmin = hist.edges.front();
    box.xmax = hist.edges.back();
    size_t max_count = 1;
    for (size_t c : hist.counts) max_count = std::max(max_count, c);
    box.ymin = 0;
    box.ymax = static_cast<double>(max_count) * 1.05;
    if (spec.limits) {
        box.xmin = (*spec.limits)[0];
        box.xmax = (*spec.limits)[1];
        box.ymin = (*spec.limits)[2];
        box.ymax = (*spec.limits)[3];
    }
    std::vector<double> edges_d(hist.edges.begin(), hist.edges.end());
    std::vector<double> counts_d(hist.counts.begin(), hist.counts.end());
    nlohmann::json meta = {{"total", hist.total()},
                           {"xmin", box.xmin},
                           {"xmax", box.xmax},
                           {"ymin", box.ymin},
                           {"ymax", box.ymax}};
    std::string svg = detail::svg_open(spec.panel_width, spec.panel_height, "histogram", meta);
    detail::render_axes(svg, box, spec.xlabel, spec.ylabel);
    if (!spec.title.empty())
        svg += "<text x=\"" + format_fixed(box.x0 + box.w / 2, 2) +
               "\" y=\"16\" font-size=\"11\" text-anchor=\"middle\" fill=\"#222222\">" +
               spec.title + "</text>\n";
    svg += "<g data-edges=\"" + detail::join_numbers(edges_d) + "\" data-counts=\"" +
           detail::join_numbers(counts_d) + "\">\n";
    for (size_t b = 0; b < hist.counts.size(); ++b) {
        double x = box.px(hist.edges[b]);
        double x1 = box.px(hist.edges[b + 1]);
        double y = box.py(static_cast<double>(hist.counts[b]));
        double y0 = box.py(0.0);
        svg += "<rect x=\"" + format_fixed(x, 2) + "\" y=\"" + format_fixed(y, 2) +
               "\" width=\"" + format_fixed(std::max(x1 - x - 1.0, 0.5), 2) + "\" height=\"" +
               format_fixed(std::max(y0 - y, 0.0), 2) +
               "\" fill=\"#88aadd\" stroke=\"#335588\" stroke-width=\"0.5\"/>\n";
    }
    svg += "</g>\n</svg>\n";
    return svg;
}

// Pulls axis limits back out of a rendered SVG, for reuse across runs.
inline std::array<double, 4> limits_from_svg(const std::string& svg) {
    auto grab = [&](const std::string& key) {
        size_t at = svg.find(key + "=\"");
        if (at == std::string::npos)
            throw ValidationError("limits_from_svg: no " + key + " attribute found");
        at += key.size() + 2;
        size_t end = svg.find('"', at);
        return std::stod(svg.substr(at, end - at));
    };
    return {grab("data-xmin"), grab("data-xmax"), grab("data-ymin"), grab("data-ymax")};
}

} // namespace latentscope::plot
