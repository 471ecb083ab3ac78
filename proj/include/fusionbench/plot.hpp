#pragma once

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fusionbench/datapipe.hpp"
#include "fusionbench/errors.hpp"
#include "fusionbench/recipe.hpp"

namespace fusionbench {

// SVG rendering for dataset composition and training curves. Text output,
// fixed formatting; identical inputs give identical bytes.

namespace svg {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
                                   "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd",
                                   "#5f9e6e", "#b55d60", "#857aab", "#766a52"};
    return colors[i % (sizeof(colors) / sizeof(colors[0]))];
}

class Canvas {
public:
    Canvas(double width, double height) : width_(width), height_(height) {}

    void rect(double x, double y, double w, double h, const std::string& fill) {
        body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w)
              << "\" height=\"" << num(h) << "\" fill=\"" << fill << "\"/>\n";
    }

    void line(double x1, double y1, double x2, double y2, const std::string& stroke) {
        body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2)
              << "\" y2=\"" << num(y2) << "\" stroke=\"" << stroke
              << "\" stroke-width=\"1\"/>\n";
    }

    void polyline(const std::vector<std::pair<double, double>>& points,
                  const std::string& stroke) {
        body_ << "<polyline fill=\"none\" stroke=\"" << stroke
              << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : points) body_ << num(x) << ',' << num(y) << ' ';
        body_ << "\"/>\n";
    }

    void text(double x, double y, const std::string& content, int size = 12) {
        body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << size
              << "\" font-family=\"sans-serif\">" << content << "</text>\n";
    }

    std::string finish() const {
        std::ostringstream out;
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width_)
            << "\" height=\"" << num(height_) << "\" viewBox=\"0 0 " << num(width_) << ' '
            << num(height_) << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
            << body_.str() << "</svg>\n";
        return out.str();
    }

private:
    double width_, height_;
    std::ostringstream body_;
};

}  // namespace svg

// One composition figure per split: video durations as a stacked horizontal
// bar (sorted by length) above the per-class label share.
inline std::string render_split_composition(const DatasetManifest& manifest,
                                            const std::string& split) {
    std::vector<double> durations;
    std::map<std::size_t, std::size_t> class_counts;
    std::size_t total_frames = 0;
    for (const auto& v : manifest.videos) {
        if (v.split != split) continue;
        durations.push_back(v.duration);
        const CsvTable labels = read_csv(manifest.resolve(v.labels_path));
        for (const auto& row : labels.rows) {
            ++class_counts[static_cast<std::size_t>(std::llround(row[1]))];
            ++total_frames;
        }
    }
    if (durations.empty())
        throw ConfigError("plot: split '" + split + "' has no videos");
    std::sort(durations.rbegin(), durations.rend());
    double total_duration = 0.0;
    for (double d : durations) total_duration += d;

    svg::Canvas canvas(640, 220);
    canvas.text(20, 28, "split: " + split + " (" + std::to_string(durations.size()) +
                            " videos, " + svg::num(total_duration) + " s)");
    // Top bar: one segment per video, width proportional to duration.
    double x = 20;
    const double bar_w = 600.0;
    for (std::size_t i = 0; i < durations.size(); ++i) {
        const double w = bar_w * durations[i] / total_duration;
        canvas.rect(x, 50, w > 1.0 ? w - 1.0 : w, 40, svg::palette(i % 2 ? 7 : 0));
        x += w;
    }
    canvas.text(20, 110, "videos by length");
    // Bottom bar: label distribution.
    x = 20;
    for (const auto& [cls, count] : class_counts) {
        const double w = bar_w * static_cast<double>(count) / static_cast<double>(total_frames);
        canvas.rect(x, 130, w > 1.0 ? w - 1.0 : w, 40, svg::palette(cls));
        x += w;
    }
    canvas.text(20, 190, "label distribution (" + std::to_string(class_counts.size()) +
                             " classes over " + std::to_string(total_frames) + " frames)");
    return canvas.finish();
}

// Loss and learning-rate curves from training log records.
inline std::string render_training_curves(const std::vector<TrainLogRecord>& records) {
    if (records.empty()) throw ConfigError("plot: training log is empty");
    svg::Canvas canvas(640, 320);
    const double x0 = 50, y0 = 20, w = 560, h = 120;

    auto draw_series = [&](double top, const std::string& name, const std::string& color,
                           auto&& getter) {
        double lo = getter(records.front()), hi = lo;
        for (const auto& r : records) {
            lo = std::min(lo, getter(r));
            hi = std::max(hi, getter(r));
        }
        if (hi <= lo) hi = lo + 1.0;
        std::vector<std::pair<double, double>> points;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const double px =
                x0 + w * static_cast<double>(i) / static_cast<double>(records.size() - 1 + 1e-12);
            const double py = top + h - h * (getter(records[i]) - lo) / (hi - lo);
            points.emplace_back(px, py);
        }
        canvas.line(x0, top + h, x0 + w, top + h, "#888888");
        canvas.polyline(points, color);
        canvas.text(x0, top - 4, name + "  [" + svg::num(lo) + ", " + svg::num(hi) + "]");
    };

    draw_series(y0 + 20, "total loss", svg::palette(3),
                [](const TrainLogRecord& r) { return r.total; });
    draw_series(y0 + 170, "learning rate", svg::palette(0),
                [](const TrainLogRecord& r) { return r.lr; });
    return canvas.finish();
}

}  // namespace fusionbench
