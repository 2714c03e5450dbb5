#include "svqa/render.hpp"

#include <algorithm>
#include <cmath>

namespace svqa {

namespace {

// Fixed directional light, expressed in image-normal space (x right,
// y down, z toward the viewer).
constexpr double kLx = -0.356, kLy = -0.509, kLz = 0.784;
// Light heading used by the flat-facet shading of cubes and cones.
constexpr double kLightYaw = 0.9;

// Deterministic per-object albedo pattern: bilinear value noise on a ~3 px
// lattice anchored to the object's centre.  It translates rigidly with the
// object (block matching locks onto it) and does not spin with yaw, so
// rotation shows up purely as a brightness change.  The pattern must be
// aperiodic and incoherent: a periodic or smoothly coherent texture lets the
// matcher trade a facet-brightness swing for a phantom shift (full-period
// realignment, or sliding along the phase gradient), whereas for zero-mean
// noise no displacement beats staying put under a uniform brightness change.
inline double lattice_noise(int id, int i, int j) {
    uint64_t h = static_cast<uint64_t>(static_cast<uint32_t>(i)) * 0x9E3779B97F4A7C15ull ^
                 static_cast<uint64_t>(static_cast<uint32_t>(j)) * 0xC2B2AE3D27D4EB4Full ^
                 static_cast<uint64_t>(static_cast<uint32_t>(id + 1)) * 0x165667B19E3779F9ull;
    h ^= h >> 29;
    h *= 0xBF58476D1CE4E5B9ull;
    h ^= h >> 32;
    return static_cast<double>(h & 0xFFFFFFu) / static_cast<double>(0x7FFFFFu) - 1.0;
}

inline double value_noise(int salt, double x, double y, double pitch) {
    const double gx = x / pitch, gy = y / pitch;
    const double fx = std::floor(gx), fy = std::floor(gy);
    const int i = static_cast<int>(fx), j = static_cast<int>(fy);
    const double tx = gx - fx, ty = gy - fy;
    const double top = lattice_noise(salt, i, j) +
                       (lattice_noise(salt, i + 1, j) - lattice_noise(salt, i, j)) * tx;
    const double bot = lattice_noise(salt, i, j + 1) +
                       (lattice_noise(salt, i + 1, j + 1) - lattice_noise(salt, i, j + 1)) * tx;
    return top + (bot - top) * ty;
}

// Two octaves with incommensurate pitches.  One octave alone is piecewise
// linear inside each lattice cell, and a linear ramp under a uniform
// brightness change is indistinguishable from a small slide; the fine
// octave keeps the pattern rough at pixel scale so staying put always wins.
inline double albedo(int id, double dx, double dy) {
    return 1.0 + 0.11 * value_noise(id, dx, dy, 3.0) +
           0.10 * value_noise(id + 32, dx, dy, 1.7);
}

struct DrawSpec {
    int id;
    Shape shape;
    float rgb[3];
    double u0, v0, r_px, yaw;
};

// Spheres get smooth hemisphere shading (in [0.45, 0.93]); cubes a single
// yaw-dependent facet value and cones an azimuth-dependent band that sweeps
// as the cone turns (both in [0.60, 0.80]).  The facet amplitude is kept
// small: it sets the per-frame brightness delta a turning object throws at
// the block matcher, and past ~10% per frame the matcher starts paying for
// brightness changes with phantom shifts.  The rotation gate only needs the
// cumulative swing over the event, which stays an order of magnitude above
// its threshold.
inline double shade_at(const DrawSpec& d, double lx, double ly) {
    switch (d.shape) {
        case Shape::Sphere: {
            const double nz2 = 1.0 - lx * lx - ly * ly;
            const double nz = nz2 > 0.0 ? std::sqrt(nz2) : 0.0;
            const double lambert = std::max(0.0, lx * kLx + ly * kLy + nz * kLz);
            return 0.45 + 0.48 * lambert;
        }
        case Shape::Cube: return 0.7 + 0.10 * std::cos(d.yaw - kLightYaw);
        case Shape::Cone: {
            const double az = std::asin(std::clamp(lx, -1.0, 1.0)) * 0.9;
            return 0.7 + 0.10 * std::cos(d.yaw + az - kLightYaw);
        }
    }
    return 0.7;
}

inline bool inside_silhouette(const DrawSpec& d, double px, double py) {
    const double dx = px - d.u0, dy = py - d.v0;
    switch (d.shape) {
        case Shape::Sphere: return dx * dx + dy * dy <= d.r_px * d.r_px;
        case Shape::Cube: {
            const double hs = 0.82 * d.r_px;
            return std::abs(dx) <= hs && std::abs(dy) <= hs;
        }
        case Shape::Cone: {
            // Triangle: apex above center, base corners below.
            const double ax = 0.0, ay = -1.1 * d.r_px;
            const double bx = -d.r_px, by = 0.8 * d.r_px;
            const double cx = d.r_px, cy = 0.8 * d.r_px;
            auto side = [&](double x1, double y1, double x2, double y2) {
                return (x2 - x1) * (dy - y1) - (y2 - y1) * (dx - x1);
            };
            const double s1 = side(ax, ay, bx, by);
            const double s2 = side(bx, by, cx, cy);
            const double s3 = side(cx, cy, ax, ay);
            return (s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0);
        }
    }
    return false;
}

// Coverage test with a deterministic ~0.7 px serration of the outline.
// Long straight silhouette edges are a trap for the block matcher: a window
// in the middle of one sees boundary structure in only one axis, so a
// per-frame facet-brightness swing can buy a phantom slide *along* the edge
// for free.  The serration is anchored to the object centre (translates
// rigidly, ignores yaw) and puts boundary contrast in both axes everywhere.
inline bool covered(const DrawSpec& d, double px, double py) {
    const double dx = px - d.u0, dy = py - d.v0;
    const double jx = 0.7 * value_noise(4 * d.id + 64, dx, dy, 2.0);
    const double jy = 0.7 * value_noise(4 * d.id + 65, dx, dy, 2.0);
    return inside_silhouette(d, px + jx, py + jy);
}

}  // namespace

RenderResult render(const Scene& scene) {
    const int F = scene.config.F, H = scene.config.H, W = scene.config.W;
    const int n = static_cast<int>(scene.objects.size());
    RenderResult out;
    out.clip = Clip(F, H, W);
    out.boxes.assign(F, std::vector<std::optional<BoxI>>(n));
    out.visible.assign(F, std::vector<bool>(n, false));

    std::vector<int> owner(static_cast<size_t>(H) * W);
    for (int f = 0; f < F; ++f) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c) out.clip.at(f, y, x, c) = kBackground[c];
        std::fill(owner.begin(), owner.end(), -1);

        std::vector<ObjectState> states(n);
        std::vector<int> order;
        for (int i = 0; i < n; ++i) {
            states[i] = object_state(scene, i, f);
            if (!states[i].contained) order.push_back(i);
        }
        // Painter: farthest (largest world y) first; nearer objects overdraw.
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (states[a].y != states[b].y) return states[a].y > states[b].y;
            return a < b;
        });

        for (int idx : order) {
            const ObjectState& st = states[idx];
            const ObjectSpec& obj = scene.objects[idx];
            DrawSpec d;
            d.id = idx;
            d.shape = obj.shape;
            color_rgb(obj.color, d.rgb);
            auto [u, v] = project(scene.config, st.x, st.y, st.z);
            d.u0 = u;
            d.v0 = v;
            d.r_px = kPixelsPerUnit * st.radius;
            d.yaw = st.yaw;

            const int x_lo = std::max(0, static_cast<int>(std::floor(u - 1.2 * d.r_px)) - 1);
            const int x_hi = std::min(W - 1, static_cast<int>(std::ceil(u + 1.2 * d.r_px)) + 1);
            const int y_lo = std::max(0, static_cast<int>(std::floor(v - 1.2 * d.r_px)) - 1);
            const int y_hi = std::min(H - 1, static_cast<int>(std::ceil(v + 1.2 * d.r_px)) + 1);

            std::optional<BoxI> box;
            for (int y = y_lo; y <= y_hi; ++y) {
                for (int x = x_lo; x <= x_hi; ++x) {
                    const double px = x + 0.5, py = y + 0.5;
                    if (!covered(d, px, py)) continue;
                    const double lx = (px - d.u0) / d.r_px, ly = (py - d.v0) / d.r_px;
                    const double m = shade_at(d, lx, ly) * albedo(d.id, px - d.u0, py - d.v0);
                    for (int c = 0; c < 3; ++c)
                        out.clip.at(f, y, x, c) =
                            std::clamp(static_cast<float>(d.rgb[c] * m), 0.0f, 1.0f);
                    owner[static_cast<size_t>(y) * W + x] = idx;
                    if (!box) {
                        box = BoxI{x, y, x, y};
                    } else {
                        box->x0 = std::min(box->x0, x);
                        box->y0 = std::min(box->y0, y);
                        box->x1 = std::max(box->x1, x);
                        box->y1 = std::max(box->y1, y);
                    }
                }
            }
            out.boxes[f][idx] = box;
        }
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int o = owner[static_cast<size_t>(y) * W + x];
                if (o >= 0) out.visible[f][o] = true;
            }
    }
    return out;
}

}  // namespace svqa
