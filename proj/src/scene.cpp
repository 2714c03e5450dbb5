#include "svqa/scene.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "svqa/render.hpp"

namespace svqa {

using nlohmann::json;

std::string to_string(Shape s) {
    switch (s) {
        case Shape::Cube: return "cube";
        case Shape::Sphere: return "sphere";
        case Shape::Cone: return "cone";
    }
    throw ContractError("bad shape value");
}

std::string to_string(Color c) {
    switch (c) {
        case Color::Red: return "red";
        case Color::Green: return "green";
        case Color::Blue: return "blue";
        case Color::Yellow: return "yellow";
        case Color::Purple: return "purple";
        case Color::Gray: return "gray";
    }
    throw ContractError("bad color value");
}

std::string to_string(ObjSize s) {
    switch (s) {
        case ObjSize::Small: return "small";
        case ObjSize::Large: return "large";
    }
    throw ContractError("bad size value");
}

std::string to_string(EventKind k) {
    switch (k) {
        case EventKind::Translate: return "translate";
        case EventKind::Rotate: return "rotate";
        case EventKind::Contain: return "contain";
        case EventKind::Scale: return "scale";
    }
    throw ContractError("bad event kind value");
}

Shape shape_from_string(const std::string& s) {
    if (s == "cube") return Shape::Cube;
    if (s == "sphere") return Shape::Sphere;
    if (s == "cone") return Shape::Cone;
    throw ContractError("unknown shape '" + s + "'");
}

Color color_from_string(const std::string& s) {
    if (s == "red") return Color::Red;
    if (s == "green") return Color::Green;
    if (s == "blue") return Color::Blue;
    if (s == "yellow") return Color::Yellow;
    if (s == "purple") return Color::Purple;
    if (s == "gray") return Color::Gray;
    throw ContractError("unknown color '" + s + "'");
}

ObjSize size_from_string(const std::string& s) {
    if (s == "small") return ObjSize::Small;
    if (s == "large") return ObjSize::Large;
    throw ContractError("unknown size '" + s + "'");
}

EventKind event_kind_from_string(const std::string& s) {
    if (s == "translate") return EventKind::Translate;
    if (s == "rotate") return EventKind::Rotate;
    if (s == "contain") return EventKind::Contain;
    if (s == "scale") return EventKind::Scale;
    throw ContractError("unknown event kind '" + s + "'");
}

void color_rgb(Color c, float out[3]) {
    switch (c) {
        case Color::Red: out[0] = 0.88f; out[1] = 0.12f; out[2] = 0.12f; return;
        case Color::Green: out[0] = 0.12f; out[1] = 0.78f; out[2] = 0.17f; return;
        case Color::Blue: out[0] = 0.16f; out[1] = 0.32f; out[2] = 0.88f; return;
        case Color::Yellow: out[0] = 0.88f; out[1] = 0.82f; out[2] = 0.14f; return;
        case Color::Purple: out[0] = 0.58f; out[1] = 0.18f; out[2] = 0.82f; return;
        case Color::Gray: out[0] = 0.58f; out[1] = 0.58f; out[2] = 0.60f; return;
    }
    throw ContractError("bad color value");
}

double size_radius(ObjSize s) { return s == ObjSize::Small ? 0.5 : 0.85; }

ObjectState object_state(const Scene& scene, int object_id, int frame) {
    if (object_id < 0 || object_id >= static_cast<int>(scene.objects.size()))
        throw ContractError("object_state: no object with id " + std::to_string(object_id));
    if (frame < 0 || frame >= scene.config.F)
        throw ContractError("object_state: frame out of range");
    const ObjectSpec& obj = scene.objects[object_id];

    ObjectState st;
    st.x = obj.x0;
    st.y = obj.y0;
    st.yaw = obj.yaw0;
    st.radius = size_radius(obj.size);
    for (const MotionEvent& ev : scene.events) {
        if (ev.subject != object_id) continue;
        const int len = ev.t1 - ev.t0;
        const int steps = std::clamp(frame - ev.t0, 0, len);
        switch (ev.kind) {
            case EventKind::Translate:
                st.x += ev.dx * steps;
                st.y += ev.dy * steps;
                break;
            case EventKind::Rotate:
                st.yaw += ev.omega * steps;
                break;
            case EventKind::Scale:
                st.radius *= 1.0 + (ev.factor - 1.0) * (static_cast<double>(steps) / len);
                break;
            case EventKind::Contain:
                if (frame >= ev.t0 && frame < ev.t1) st.contained = true;
                break;
        }
    }
    st.z = st.radius;  // resting on the ground plane
    return st;
}

std::vector<std::vector<ObjectState>> simulate_tracks(const Scene& scene) {
    std::vector<std::vector<ObjectState>> tracks(scene.config.F);
    for (int f = 0; f < scene.config.F; ++f) {
        tracks[f].resize(scene.objects.size());
        for (size_t i = 0; i < scene.objects.size(); ++i)
            tracks[f][i] = object_state(scene, static_cast<int>(i), f);
    }
    return tracks;
}

namespace {

constexpr int kMaxAttempts = 1000;

void validate_config(const SimConfig& c) {
    if (c.n_objects < 3 || c.n_objects > 8)
        throw ContractError("config: n_objects must be in 3..8");
    if (c.F < 8 || c.F > 512) throw ContractError("config: F must be in 8..512");
    if (c.H < 32 || c.H > 512 || c.W < 32 || c.W > 512)
        throw ContractError("config: H and W must be in 32..512");
    if (c.n_events < 0 || c.n_events > 16)
        throw ContractError("config: n_events must be in 0..16");
    if (c.n_events > 0 && c.allowed_kinds.empty())
        throw ContractError("config: no event kinds allowed but n_events > 0");
}

// The whole silhouette must stay inside the frame with a 1-pixel margin for
// every frame of the clip.
bool subject_stays_in_frame(const Scene& scene, int object_id) {
    for (int f = 0; f < scene.config.F; ++f) {
        ObjectState st = object_state(scene, object_id, f);
        auto [u, v] = project(scene.config, st.x, st.y, st.z);
        const double r_px = kPixelsPerUnit * st.radius * 1.15;  // cone apex overhang
        if (u - r_px < 1.0 || u + r_px > scene.config.W - 2.0) return false;
        if (v - r_px < 1.0 || v + r_px > scene.config.H - 2.0) return false;
    }
    return true;
}

bool intervals_overlap(const Scene& scene, int subject, int t0, int t1) {
    for (const MotionEvent& ev : scene.events)
        if (ev.subject == subject && t0 < ev.t1 && ev.t0 < t1) return true;
    return false;
}

// Per-axis pixel velocities are drawn from a quantized menu whose fractional
// parts stay well clear of 0.5, so integer block matching rounds to within
// 0.35 px of the true displacement on both axes.
constexpr double kVelocityMenu[] = {-1.25, -1.0, -0.75, 0.0, 0.75, 1.0, 1.25};

}  // namespace

Scene generate_scene(uint64_t seed, const SimConfig& config) {
    validate_config(config);
    Scene scene;
    scene.config = config;
    scene.seed = seed;
    Rng root(seed);
    Rng rng_obj = root.fork(1);
    Rng rng_ev = root.fork(2);

    // --- objects -------------------------------------------------------------
    for (int i = 0; i < config.n_objects; ++i) {
        ObjectSpec obj;
        obj.id = i;
        obj.shape = static_cast<Shape>(rng_obj.next_below(kNumShapes));
        obj.color = static_cast<Color>(rng_obj.next_below(kNumColors));
        obj.size = static_cast<ObjSize>(rng_obj.next_below(kNumSizes));
        obj.yaw0 = rng_obj.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double r = size_radius(obj.size);
        bool placed = false;
        for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
            obj.x0 = rng_obj.uniform(-kWorldHalf, kWorldHalf);
            obj.y0 = rng_obj.uniform(-kWorldHalf, kWorldHalf);
            placed = true;
            for (const ObjectSpec& other : scene.objects) {
                const double d = std::hypot(obj.x0 - other.x0, obj.y0 - other.y0);
                if (d <= r + size_radius(other.size) + 0.1) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed)
            throw ContractError("generate_scene: could not place object " + std::to_string(i) +
                                " after 1000 attempts");
        scene.objects.push_back(obj);
    }

    // --- events --------------------------------------------------------------
    std::vector<int> rotatable, containable, cones;
    for (const ObjectSpec& o : scene.objects) {
        if (o.shape == Shape::Cube || o.shape == Shape::Cone) rotatable.push_back(o.id);
        if (o.shape != Shape::Cone) containable.push_back(o.id);
        if (o.shape == Shape::Cone) cones.push_back(o.id);
    }

    for (int e = 0; e < config.n_events; ++e) {
        bool accepted = false;
        for (int attempt = 0; attempt < kMaxAttempts && !accepted; ++attempt) {
            MotionEvent ev;
            ev.kind = rng_ev.pick(config.allowed_kinds);

            switch (ev.kind) {
                case EventKind::Translate: {
                    const int max_len = std::min(16, config.F - 2);
                    if (max_len < 8) continue;  // clip too short for this kind
                    ev.subject = static_cast<int>(rng_ev.next_below(scene.objects.size()));
                    int len = rng_ev.uniform_int(8, max_len);
                    int t0 = rng_ev.uniform_int(1, config.F - 1 - len);
                    ev.t0 = t0;
                    ev.t1 = t0 + len;
                    double pu = 0.0, pv = 0.0;
                    while (pu == 0.0 && pv == 0.0) {
                        pu = kVelocityMenu[rng_ev.next_below(7)];
                        pv = kVelocityMenu[rng_ev.next_below(7)];
                    }
                    ev.dx = pu / kPixelsPerUnit;
                    ev.dy = -pv / (kPixelsPerUnit * kDepthSlope);
                    break;
                }
                case EventKind::Rotate: {
                    const int max_len = std::min(14, config.F - 2);
                    if (max_len < 9 || rotatable.empty()) continue;
                    ev.subject = rotatable[rng_ev.next_below(rotatable.size())];
                    int len = rng_ev.uniform_int(9, max_len);
                    int t0 = rng_ev.uniform_int(1, config.F - 1 - len);
                    ev.t0 = t0;
                    ev.t1 = t0 + len;
                    // Speed window: at least half a turn over the event so the
                    // facet shading runs through a visible brightness range,
                    // but capped so the per-frame brightness step stays small
                    // enough for block matching to hold still through it.
                    double mag = rng_ev.uniform(3.14159265358979323846 / len, 0.36);
                    ev.omega = rng_ev.chance(0.5) ? mag : -mag;
                    break;
                }
                case EventKind::Contain: {
                    if (config.F < 12 || cones.empty() || containable.empty()) continue;
                    ev.subject = containable[rng_ev.next_below(containable.size())];
                    ev.target = cones[rng_ev.next_below(cones.size())];
                    int len = rng_ev.uniform_int(6, std::min(12, config.F - 5));
                    int t0 = rng_ev.uniform_int(2, config.F - 2 - len);
                    ev.t0 = t0;
                    ev.t1 = t0 + len;
                    break;
                }
                case EventKind::Scale: {
                    const int max_len = std::min(12, config.F - 2);
                    if (max_len < 6) continue;
                    ev.subject = static_cast<int>(rng_ev.next_below(scene.objects.size()));
                    int len = rng_ev.uniform_int(6, max_len);
                    int t0 = rng_ev.uniform_int(1, config.F - 1 - len);
                    ev.t0 = t0;
                    ev.t1 = t0 + len;
                    ev.factor = rng_ev.chance(0.5) ? rng_ev.uniform(1.35, 1.6)
                                                   : rng_ev.uniform(0.62, 0.74);
                    break;
                }
            }

            if (intervals_overlap(scene, ev.subject, ev.t0, ev.t1)) continue;
            scene.events.push_back(ev);
            if (ev.kind == EventKind::Translate || ev.kind == EventKind::Scale) {
                if (!subject_stays_in_frame(scene, ev.subject)) {
                    scene.events.pop_back();
                    continue;
                }
            }
            accepted = true;
        }
        if (!accepted)
            throw ContractError("generate_scene: could not sample event " + std::to_string(e) +
                                " after 1000 attempts");
    }

    std::stable_sort(scene.events.begin(), scene.events.end(),
                     [](const MotionEvent& a, const MotionEvent& b) {
                         if (a.t0 != b.t0) return a.t0 < b.t0;
                         return a.subject < b.subject;
                     });
    return scene;
}

std::string scene_to_json(const Scene& scene) {
    json j;
    j["seed"] = scene.seed;
    j["config"] = {{"n_objects", scene.config.n_objects}, {"F", scene.config.F},
                   {"H", scene.config.H},                 {"W", scene.config.W},
                   {"n_events", scene.config.n_events}};
    json kinds = json::array();
    for (EventKind k : scene.config.allowed_kinds) kinds.push_back(to_string(k));
    j["config"]["allowed_kinds"] = kinds;

    j["objects"] = json::array();
    for (const ObjectSpec& o : scene.objects)
        j["objects"].push_back({{"id", o.id},
                                {"shape", to_string(o.shape)},
                                {"color", to_string(o.color)},
                                {"size", to_string(o.size)},
                                {"x", o.x0},
                                {"y", o.y0},
                                {"yaw", o.yaw0}});
    j["events"] = json::array();
    for (const MotionEvent& e : scene.events) {
        json je{{"kind", to_string(e.kind)}, {"subject", e.subject},
                {"t0", e.t0},               {"t1", e.t1}};
        switch (e.kind) {
            case EventKind::Translate:
                je["dx"] = e.dx;
                je["dy"] = e.dy;
                break;
            case EventKind::Rotate: je["omega"] = e.omega; break;
            case EventKind::Contain: je["target"] = e.target; break;
            case EventKind::Scale: je["factor"] = e.factor; break;
        }
        j["events"].push_back(je);
    }
    return j.dump(2) + "\n";
}

Scene scene_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("scene JSON parse failure: ") + e.what());
    }
    try {
        Scene scene;
        scene.seed = j.at("seed").get<uint64_t>();
        const json& c = j.at("config");
        scene.config.n_objects = c.at("n_objects").get<int>();
        scene.config.F = c.at("F").get<int>();
        scene.config.H = c.at("H").get<int>();
        scene.config.W = c.at("W").get<int>();
        scene.config.n_events = c.at("n_events").get<int>();
        scene.config.allowed_kinds.clear();
        for (const auto& k : c.at("allowed_kinds"))
            scene.config.allowed_kinds.push_back(event_kind_from_string(k.get<std::string>()));
        for (const auto& o : j.at("objects")) {
            ObjectSpec obj;
            obj.id = o.at("id").get<int>();
            obj.shape = shape_from_string(o.at("shape").get<std::string>());
            obj.color = color_from_string(o.at("color").get<std::string>());
            obj.size = size_from_string(o.at("size").get<std::string>());
            obj.x0 = o.at("x").get<double>();
            obj.y0 = o.at("y").get<double>();
            obj.yaw0 = o.at("yaw").get<double>();
            scene.objects.push_back(obj);
        }
        for (const auto& e : j.at("events")) {
            MotionEvent ev;
            ev.kind = event_kind_from_string(e.at("kind").get<std::string>());
            ev.subject = e.at("subject").get<int>();
            ev.t0 = e.at("t0").get<int>();
            ev.t1 = e.at("t1").get<int>();
            switch (ev.kind) {
                case EventKind::Translate:
                    ev.dx = e.at("dx").get<double>();
                    ev.dy = e.at("dy").get<double>();
                    break;
                case EventKind::Rotate: ev.omega = e.at("omega").get<double>(); break;
                case EventKind::Contain: ev.target = e.at("target").get<int>(); break;
                case EventKind::Scale: ev.factor = e.at("factor").get<double>(); break;
            }
            scene.events.push_back(ev);
        }
        return scene;
    } catch (const json::exception& e) {
        throw IoError(std::string("scene JSON missing or mistyped field: ") + e.what());
    }
}

}  // namespace svqa
