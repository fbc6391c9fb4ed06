#pragma once

// Report tables and SVG charts. Everything here is a pure function of the
// tracking CSVs, so a report set can be regenerated byte for byte.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "echomimic/landscape_io.hpp"

namespace echomimic {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t col(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ParseError("csv: no column '" + name + "'");
    }
    const std::string& at(std::size_t row, const std::string& name) const { return rows.at(row).at(col(name)); }
    double num(std::size_t row, const std::string& name) const { return std::stod(at(row, name)); }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else {
            out.back() += c;
        }
    }
    return out;
}

inline CsvTable read_csv(const fs::path& path) {
    CsvTable t;
    const std::string text = read_text(path);
    std::size_t pos = 0;
    bool first = true;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            if (cells.size() != t.header.size())
                throw ParseError(path.string() + ": row has " + std::to_string(cells.size()) + " cells, expected " +
                                 std::to_string(t.header.size()));
            t.rows.push_back(std::move(cells));
        }
    }
    if (first) throw ParseError(path.string() + ": empty csv");
    return t;
}

inline std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string to_csv(const CsvTable& t) {
    auto line = [](const std::vector<std::string>& cells) {
        std::string s;
        for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + csv_cell(cells[i]);
        return s + "\n";
    };
    std::string out = line(t.header);
    for (const auto& r : t.rows) out += line(r);
    return out;
}

// ---------------------------------------------------------------------------
// SVG

inline std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

inline std::string xml_escape(const std::string& s) {
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

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

namespace detail {

inline constexpr const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
inline constexpr double svg_w = 720, svg_h = 420, pad_l = 70, pad_r = 170, pad_t = 40, pad_b = 55;

struct Axis {
    double lo = 0, hi = 1;
    double map(double v, double a, double b) const { return hi == lo ? (a + b) / 2 : a + (v - lo) / (hi - lo) * (b - a); }
};

inline Axis axis_for(std::vector<double> v) {
    v.erase(std::remove_if(v.begin(), v.end(), [](double d) { return !std::isfinite(d); }), v.end());
    if (v.empty()) return {0, 1};
    auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    double lo = *mn, hi = *mx;
    if (hi == lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double m = 0.05 * (hi - lo);
    return {lo - m, hi + m};
}

inline std::string frame(const std::string& title, const std::string& xlabel, const std::string& ylabel, const Axis& xa,
                         const Axis& ya, bool numeric_x) {
    const double x0 = pad_l, x1 = svg_w - pad_r, y0 = svg_h - pad_b, y1 = pad_t;
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + svg_num(svg_w) + "\" height=\"" +
                    svg_num(svg_h) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + svg_num(svg_w / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + xml_escape(title) +
         "</text>\n";
    s += "<line x1=\"" + svg_num(x0) + "\" y1=\"" + svg_num(y0) + "\" x2=\"" + svg_num(x1) + "\" y2=\"" + svg_num(y0) +
         "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + svg_num(x0) + "\" y1=\"" + svg_num(y0) + "\" x2=\"" + svg_num(x0) + "\" y2=\"" + svg_num(y1) +
         "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double yv = ya.lo + (ya.hi - ya.lo) * i / 4.0;
        const double py = ya.map(yv, y0, y1);
        s += "<text x=\"" + svg_num(x0 - 6) + "\" y=\"" + svg_num(py + 4) + "\" text-anchor=\"end\">" + svg_num(yv) +
             "</text>\n";
        s += "<line x1=\"" + svg_num(x0) + "\" y1=\"" + svg_num(py) + "\" x2=\"" + svg_num(x1) + "\" y2=\"" + svg_num(py) +
             "\" stroke=\"#ddd\"/>\n";
        if (numeric_x) {
            const double xv = xa.lo + (xa.hi - xa.lo) * i / 4.0;
            s += "<text x=\"" + svg_num(xa.map(xv, x0, x1)) + "\" y=\"" + svg_num(y0 + 18) + "\" text-anchor=\"middle\">" +
                 svg_num(xv) + "</text>\n";
        }
    }
    s += "<text x=\"" + svg_num((x0 + x1) / 2) + "\" y=\"" + svg_num(svg_h - 12) + "\" text-anchor=\"middle\">" +
         xml_escape(xlabel) + "</text>\n";
    s += "<text transform=\"translate(16," + svg_num((y0 + y1) / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         xml_escape(ylabel) + "</text>\n";
    return s;
}

inline std::string legend(const std::vector<std::string>& names) {
    std::string s;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const double y = pad_t + 10 + 18.0 * static_cast<double>(i);
        const double x = svg_w - pad_r + 12;
        s += "<rect x=\"" + svg_num(x) + "\" y=\"" + svg_num(y - 9) + "\" width=\"10\" height=\"10\" fill=\"" +
             palette[i % 10] + "\"/>\n";
        s += "<text x=\"" + svg_num(x + 15) + "\" y=\"" + svg_num(y) + "\">" + xml_escape(names[i]) + "</text>\n";
    }
    return s;
}

}  // namespace detail

/// Lines (or bare markers with `scatter`) for each series.
inline std::string svg_xy_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                const std::vector<Series>& series, bool scatter = false) {
    using namespace detail;
    std::vector<double> xs, ys;
    for (const auto& s : series) {
        xs.insert(xs.end(), s.x.begin(), s.x.end());
        ys.insert(ys.end(), s.y.begin(), s.y.end());
    }
    const Axis xa = axis_for(xs), ya = axis_for(ys);
    const double x0 = pad_l, x1 = svg_w - pad_r, y0 = svg_h - pad_b, y1 = pad_t;
    std::string out = frame(title, xlabel, ylabel, xa, ya, true);
    std::vector<std::string> names;
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        names.push_back(s.name);
        const std::string color = palette[k % 10];
        std::string pts;
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            const double px = xa.map(s.x[i], x0, x1), py = ya.map(s.y[i], y0, y1);
            pts += svg_num(px) + "," + svg_num(py) + " ";
            out += "<circle cx=\"" + svg_num(px) + "\" cy=\"" + svg_num(py) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
        }
        if (!scatter && !pts.empty())
            out += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    }
    return out + legend(names) + "</svg>\n";
}

inline std::string svg_bar_chart(const std::string& title, const std::string& ylabel,
                                 const std::vector<std::string>& labels, const std::vector<double>& values) {
    using namespace detail;
    std::vector<double> ys = values;
    ys.push_back(0.0);
    const Axis ya = axis_for(ys);
    const double x0 = pad_l, x1 = svg_w - pad_r, y0 = svg_h - pad_b, y1 = pad_t;
    std::string out = frame(title, "", ylabel, {}, ya, false);
    const double slot = (x1 - x0) / static_cast<double>(std::max<std::size_t>(1, labels.size()));
    const double zero = ya.map(0.0, y0, y1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double v = i < values.size() ? values[i] : 0.0;
        const double py = ya.map(v, y0, y1);
        const double bx = x0 + slot * static_cast<double>(i) + slot * 0.15;
        out += "<rect x=\"" + svg_num(bx) + "\" y=\"" + svg_num(std::min(py, zero)) + "\" width=\"" + svg_num(slot * 0.7) +
               "\" height=\"" + svg_num(std::abs(zero - py)) + "\" fill=\"" + palette[i % 10] + "\"/>\n";
        out += "<text x=\"" + svg_num(bx + slot * 0.35) + "\" y=\"" + svg_num(y0 + 18) + "\" text-anchor=\"middle\">" +
               xml_escape(labels[i]) + "</text>\n";
        out += "<text x=\"" + svg_num(bx + slot * 0.35) + "\" y=\"" + svg_num(std::min(py, zero) - 4) +
               "\" text-anchor=\"middle\" font-size=\"10\">" + svg_num(v) + "</text>\n";
    }
    return out + "</svg>\n";
}

/// Grid of cells shaded by value (darker = higher), value printed in each cell.
inline std::string svg_heatmap(const std::string& title, const std::vector<std::string>& row_labels,
                               const std::vector<std::string>& col_labels,
                               const std::vector<std::vector<double>>& values) {
    using namespace detail;
    std::vector<double> all;
    for (const auto& r : values) all.insert(all.end(), r.begin(), r.end());
    const Axis va = axis_for(all);
    const double x0 = 140, y0 = 60, cw = 150, ch = 60;
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      svg_num(x0 + cw * static_cast<double>(col_labels.size()) + 20) + "\" height=\"" +
                      svg_num(y0 + ch * static_cast<double>(row_labels.size()) + 20) +
                      "\" font-family=\"sans-serif\" font-size=\"12\">\n"
                      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"10\" y=\"22\" font-size=\"15\">" + xml_escape(title) + "</text>\n";
    for (std::size_t c = 0; c < col_labels.size(); ++c)
        out += "<text x=\"" + svg_num(x0 + cw * (static_cast<double>(c) + 0.5)) + "\" y=\"" + svg_num(y0 - 8) +
               "\" text-anchor=\"middle\">" + xml_escape(col_labels[c]) + "</text>\n";
    for (std::size_t r = 0; r < row_labels.size(); ++r) {
        const double y = y0 + ch * static_cast<double>(r);
        out += "<text x=\"" + svg_num(x0 - 8) + "\" y=\"" + svg_num(y + ch / 2 + 4) + "\" text-anchor=\"end\">" +
               xml_escape(row_labels[r]) + "</text>\n";
        for (std::size_t c = 0; c < col_labels.size(); ++c) {
            const double v = r < values.size() && c < values[r].size() ? values[r][c] : NAN;
            const double t = std::isfinite(v) ? std::clamp(va.map(v, 0.0, 1.0), 0.0, 1.0) : 0.0;
            const int shade = static_cast<int>(std::lround(235 - 170 * t));
            char fill[16];
            std::snprintf(fill, sizeof fill, "#%02x%02xff", shade, shade);
            const double x = x0 + cw * static_cast<double>(c);
            out += "<rect x=\"" + svg_num(x) + "\" y=\"" + svg_num(y) + "\" width=\"" + svg_num(cw - 2) + "\" height=\"" +
                   svg_num(ch - 2) + "\" fill=\"" + fill + "\"/>\n";
            out += "<text x=\"" + svg_num(x + cw / 2) + "\" y=\"" + svg_num(y + ch / 2 + 4) + "\" text-anchor=\"middle\">" +
                   (std::isfinite(v) ? svg_num(v) : std::string("n/a")) + "</text>\n";
        }
    }
    return out + "</svg>\n";
}

}  // namespace echomimic
