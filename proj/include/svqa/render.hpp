#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "svqa/scene.hpp"

namespace svqa {

// Fixed camera: orthographic in x, with world depth (y) and height (z)
// sharing the vertical image axis. Larger y means farther away, drawn
// higher on screen and earlier by the painter.
constexpr double kPixelsPerUnit = 8.0;
constexpr double kDepthSlope = 0.45;  // how strongly depth lifts the image row

inline std::pair<double, double> project(const SimConfig& cfg, double x, double y, double z) {
    const double u = cfg.W / 2.0 + kPixelsPerUnit * x;
    const double v = cfg.H * 0.625 - kPixelsPerUnit * (kDepthSlope * y + z);
    return {u, v};
}

constexpr float kBackground[3] = {0.12f, 0.12f, 0.14f};

inline float luminance(float r, float g, float b) {
    return 0.299f * r + 0.587f * g + 0.114f * b;
}

// Frame-major, row-major, channel-last pixel block in [0,1].
struct Clip {
    int F = 0, H = 0, W = 0;
    std::vector<float> pixels;

    Clip() = default;
    Clip(int f, int h, int w)
        : F(f), H(h), W(w), pixels(static_cast<size_t>(f) * h * w * 3, 0.0f) {}

    float& at(int f, int y, int x, int c) {
        return pixels[(((static_cast<size_t>(f) * H) + y) * W + x) * 3 + c];
    }
    float at(int f, int y, int x, int c) const {
        return pixels[(((static_cast<size_t>(f) * H) + y) * W + x) * 3 + c];
    }
};

// Inclusive pixel bounds of an object's rasterized footprint.
struct BoxI {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
    bool intersects(const BoxI& o) const {
        return x0 <= o.x1 && o.x0 <= x1 && y0 <= o.y1 && o.y0 <= y1;
    }
};

struct RenderResult {
    Clip clip;
    // boxes[frame][object]: footprint bounds; nullopt while contained.
    std::vector<std::vector<std::optional<BoxI>>> boxes;
    // visible[frame][object]: object owns at least one pixel after occlusion.
    std::vector<std::vector<bool>> visible;
};

RenderResult render(const Scene& scene);

}  // namespace svqa
