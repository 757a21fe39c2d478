#include "kmhe/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace kmhe {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 360.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 160.0;
constexpr double kTop = 36.0;
constexpr double kBottom = 48.0;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string escape(const std::string& s) {
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

}  // namespace

std::string overlay_svg(const std::string& title, const std::vector<double>& t, const std::vector<PlotSeries>& series,
                        const std::string& x_label, const std::string& y_label) {
    double t_lo = std::numeric_limits<double>::infinity(), t_hi = -t_lo;
    double y_lo = t_lo, y_hi = -t_lo;
    for (double v : t) {
        if (std::isfinite(v)) t_lo = std::min(t_lo, v), t_hi = std::max(t_hi, v);
    }
    for (const auto& s : series) {
        for (double v : s.values) {
            if (std::isfinite(v)) y_lo = std::min(y_lo, v), y_hi = std::max(y_hi, v);
        }
    }
    if (!std::isfinite(t_lo)) t_lo = 0.0, t_hi = 1.0;
    if (!std::isfinite(y_lo)) y_lo = 0.0, y_hi = 1.0;
    if (t_hi <= t_lo) t_hi = t_lo + 1.0;
    if (y_hi <= y_lo) {
        const double pad = std::max(1e-12, std::abs(y_lo) * 0.05);
        y_lo -= pad;
        y_hi += pad;
    } else {
        const double pad = 0.05 * (y_hi - y_lo);
        y_lo -= pad;
        y_hi += pad;
    }

    const double pw = kWidth - kLeft - kRight;
    const double ph = kHeight - kTop - kBottom;
    auto px = [&](double v) { return kLeft + (v - t_lo) / (t_hi - t_lo) * pw; };
    auto py = [&](double v) { return kTop + (y_hi - v) / (y_hi - y_lo) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << num(kLeft) << "\" y=\"20\" font-size=\"14\">" << escape(title) << "</text>\n";
    os << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
       << "\" fill=\"none\" stroke=\"#444\"/>\n";

    for (int i = 0; i <= 4; ++i) {
        const double tv = t_lo + (t_hi - t_lo) * i / 4.0;
        const double yv = y_lo + (y_hi - y_lo) * i / 4.0;
        os << "<line x1=\"" << num(px(tv)) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(px(tv)) << "\" y2=\""
           << num(kTop + ph) << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << num(px(tv)) << "\" y=\"" << num(kTop + ph + 16) << "\" text-anchor=\"middle\">" << tick(tv)
           << "</text>\n";
        os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << num(kLeft + pw) << "\" y2=\""
           << num(py(yv)) << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << tick(yv)
           << "</text>\n";
    }
    os << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 10) << "\" text-anchor=\"middle\">"
       << escape(x_label) << "</text>\n";
    if (!y_label.empty()) {
        os << "<text transform=\"translate(16 " << num(kTop + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
           << escape(y_label) << "</text>\n";
    }

    for (std::size_t s = 0; s < series.size(); ++s) {
        const auto& ser = series[s];
        const std::size_t n = std::min(ser.values.size(), t.size());
        std::string path;
        bool pen_down = false;
        for (std::size_t k = 0; k < n; ++k) {
            if (!std::isfinite(ser.values[k]) || !std::isfinite(t[k])) {
                pen_down = false;
                continue;
            }
            path += pen_down ? " L" : " M";
            path += num(px(t[k])) + ' ' + num(py(ser.values[k]));
            pen_down = true;
        }
        os << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << escape(ser.color) << "\" stroke-width=\"1.5\"";
        if (ser.dashed) os << " stroke-dasharray=\"6 3\"";
        os << "/>\n";
        const double ly = kTop + 14.0 + 18.0 * static_cast<double>(s);
        const double lx = kLeft + pw + 12.0;
        os << "<line x1=\"" << num(lx) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(lx + 24) << "\" y2=\"" << num(ly)
           << "\" stroke=\"" << escape(ser.color) << "\" stroke-width=\"2\"" << (ser.dashed ? " stroke-dasharray=\"6 3\"" : "")
           << "/>\n";
        os << "<text x=\"" << num(lx + 30) << "\" y=\"" << num(ly + 4) << "\">" << escape(ser.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace kmhe
