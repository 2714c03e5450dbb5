#pragma once

#include <string>
#include <vector>

#include "svqa/render.hpp"
#include "svqa/scenegraph.hpp"

namespace svqa {

// Clip container: magic "CLIP", u32 version=1, u32 F,H,W, u32 CRC32 of the
// payload, then F*H*W*3 little-endian f32 in [0,1].
void save_clip(const std::string& path, const Clip& clip);
Clip load_clip(const std::string& path);

// Flow debug container: same layout with magic "FLOW" and 2 channels
// (dx, dy); N is the number of fields (frames-1 for a clip).
struct FlowStack {
    int N = 0, H = 0, W = 0;
    std::vector<float> vectors;  // N*H*W*2, (dx, dy) per pixel

    FlowStack() = default;
    FlowStack(int n, int h, int w)
        : N(n), H(h), W(w), vectors(static_cast<size_t>(n) * h * w * 2, 0.0f) {}

    float& at(int n, int y, int x, int c) {
        return vectors[(((static_cast<size_t>(n) * H) + y) * W + x) * 2 + c];
    }
    float at(int n, int y, int x, int c) const {
        return vectors[(((static_cast<size_t>(n) * H) + y) * W + x) * 2 + c];
    }
};

void save_flow(const std::string& path, const FlowStack& flow);
FlowStack load_flow(const std::string& path);

struct DatasetItem {
    uint64_t seed = 0;
    Clip clip;
    TemporalSceneGraph truth;
};

// Writes clip_NNNN.clip + truth_NNNN.json per item plus manifest.json
// (a list of {clip, truth, seed}); returns the manifest path.
std::string export_dataset(const std::vector<DatasetItem>& items, const std::string& dir);
std::vector<DatasetItem> import_dataset(const std::string& dir);

}  // namespace svqa
