#include "svqa/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace svqa {

namespace {

std::vector<float> luminance_plane(const std::vector<float>& frame, int H, int W) {
    std::vector<float> lum(static_cast<size_t>(H) * W);
    for (size_t p = 0; p < lum.size(); ++p)
        lum[p] = luminance(frame[p * 3], frame[p * 3 + 1], frame[p * 3 + 2]);
    return lum;
}

}  // namespace

FlowField estimate_flow(const std::vector<float>& frame_a, const std::vector<float>& frame_b,
                        int H, int W) {
    if (H <= 0 || W <= 0) throw ContractError("estimate_flow: bad dimensions");
    const size_t need = static_cast<size_t>(H) * W * 3;
    if (frame_a.size() != need || frame_b.size() != need)
        throw ContractError("estimate_flow: frame buffers do not match dimensions");

    const std::vector<float> la = luminance_plane(frame_a, H, W);
    const std::vector<float> lb = luminance_plane(frame_b, H, W);
    constexpr int R = kFlowSearchRadius;
    constexpr int K = kFlowWindowRadius;

    FlowField out(H, W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            float best_sad = std::numeric_limits<float>::infinity();
            int best_dy = 0, best_dx = 0, best_mag = 0;
            for (int dy = -R; dy <= R; ++dy) {
                for (int dx = -R; dx <= R; ++dx) {
                    double sad = 0.0;
                    for (int wy = -K; wy <= K; ++wy) {
                        const int ya = std::clamp(y + wy, 0, H - 1);
                        const int yb = std::clamp(y + wy + dy, 0, H - 1);
                        const float* ra = la.data() + static_cast<size_t>(ya) * W;
                        const float* rb = lb.data() + static_cast<size_t>(yb) * W;
                        for (int wx = -K; wx <= K; ++wx) {
                            const int xa = std::clamp(x + wx, 0, W - 1);
                            const int xb = std::clamp(x + wx + dx, 0, W - 1);
                            sad += std::abs(static_cast<double>(ra[xa]) - rb[xb]);
                        }
                    }
                    const float sadf = static_cast<float>(sad);
                    const int mag = dy * dy + dx * dx;
                    // Candidates arrive in ascending (dy, dx), so keeping the
                    // first among equals already realizes the lexicographic
                    // tie-break after the magnitude one.
                    if (sadf < best_sad || (sadf == best_sad && mag < best_mag)) {
                        best_sad = sadf;
                        best_dy = dy;
                        best_dx = dx;
                        best_mag = mag;
                    }
                }
            }
            out.at(y, x, 0) = static_cast<float>(best_dx);
            out.at(y, x, 1) = static_cast<float>(best_dy);
        }
    }
    return out;
}

FlowField estimate_flow(const Clip& clip, int frame_a, int frame_b) {
    if (frame_a < 0 || frame_a >= clip.F || frame_b < 0 || frame_b >= clip.F)
        throw ContractError("estimate_flow: frame index out of range");
    const size_t stride = static_cast<size_t>(clip.H) * clip.W * 3;
    std::vector<float> a(clip.pixels.begin() + frame_a * stride,
                         clip.pixels.begin() + (frame_a + 1) * stride);
    std::vector<float> b(clip.pixels.begin() + frame_b * stride,
                         clip.pixels.begin() + (frame_b + 1) * stride);
    return estimate_flow(a, b, clip.H, clip.W);
}

FlowStack flow_clip(const Clip& clip) {
    if (clip.F < 2) throw ContractError("flow_clip: need at least 2 frames");
    FlowStack out(clip.F - 1, clip.H, clip.W);
    for (int f = 0; f + 1 < clip.F; ++f) {
        FlowField field = estimate_flow(clip, f, f + 1);
        std::copy(field.vectors.begin(), field.vectors.end(),
                  out.vectors.begin() + static_cast<size_t>(f) * clip.H * clip.W * 2);
    }
    return out;
}

}  // namespace svqa
