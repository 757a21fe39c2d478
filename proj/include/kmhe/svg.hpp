#pragma once

#include <string>
#include <vector>

namespace kmhe {

struct PlotSeries {
    std::string label;
    std::vector<double> values;
    std::string color = "#1f77b4";
    bool dashed = false;
};

/// Static line chart with a shared time axis and a legend. Non-finite samples break the line.
std::string overlay_svg(const std::string& title, const std::vector<double>& t, const std::vector<PlotSeries>& series,
                        const std::string& x_label = "t", const std::string& y_label = {});

}  // namespace kmhe
