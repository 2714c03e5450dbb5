#pragma once

#include <vector>

#include "svqa/dataset.hpp"
#include "svqa/render.hpp"

namespace svqa {

// Dense integer displacement field between two frames, (dx, dy) per pixel,
// +x right and +y down.
struct FlowField {
    int H = 0, W = 0;
    std::vector<float> vectors;  // H*W*2

    FlowField() = default;
    FlowField(int h, int w) : H(h), W(w), vectors(static_cast<size_t>(h) * w * 2, 0.0f) {}

    float& at(int y, int x, int c) {
        return vectors[((static_cast<size_t>(y) * W) + x) * 2 + c];
    }
    float at(int y, int x, int c) const {
        return vectors[((static_cast<size_t>(y) * W) + x) * 2 + c];
    }
};

constexpr int kFlowSearchRadius = 3;
constexpr int kFlowWindowRadius = 3;  // 7x7 comparison window

// Block matching on luminance: per pixel, the displacement within the search
// radius minimizing the summed absolute difference over the window; ties go
// to the smallest magnitude, then lexicographically smallest (dy, dx).
// Window coordinates are clamped at the borders. Frames are H*W*3 in [0,1].
FlowField estimate_flow(const std::vector<float>& frame_a, const std::vector<float>& frame_b,
                        int H, int W);
FlowField estimate_flow(const Clip& clip, int frame_a, int frame_b);

// Pairwise flow of consecutive frames: F-1 fields. Throws ContractError
// when the clip has fewer than 2 frames.
FlowStack flow_clip(const Clip& clip);

}  // namespace svqa
