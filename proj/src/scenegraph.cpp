#include "svqa/scenegraph.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace svqa {

using nlohmann::json;

std::string to_string(Relation r) {
    switch (r) {
        case Relation::Left: return "left";
        case Relation::Right: return "right";
        case Relation::Behind: return "behind";
        case Relation::Front: return "front";
        case Relation::Near: return "near";
    }
    throw ContractError("bad relation value");
}

Relation relation_from_string(const std::string& s) {
    if (s == "left") return Relation::Left;
    if (s == "right") return Relation::Right;
    if (s == "behind") return Relation::Behind;
    if (s == "front") return Relation::Front;
    if (s == "near") return Relation::Near;
    throw ContractError("unknown relation '" + s + "'");
}

TemporalSceneGraph build_graph(const Scene& scene, const RenderResult& rendered) {
    TemporalSceneGraph g;
    g.F = scene.config.F;
    g.H = scene.config.H;
    g.W = scene.config.W;
    const int n = static_cast<int>(scene.objects.size());
    for (int i = 0; i < n; ++i) {
        ObjectTrack tr;
        tr.id = i;
        tr.shape = scene.objects[i].shape;
        tr.color = scene.objects[i].color;
        tr.size = scene.objects[i].size;
        tr.frames.resize(g.F);
        for (int f = 0; f < g.F; ++f) {
            ObjectState st = object_state(scene, i, f);
            FrameState& fs = tr.frames[f];
            fs.wx = st.x;
            fs.wy = st.y;
            auto [u, v] = project(scene.config, st.x, st.y, st.z);
            fs.px = u;
            fs.py = v;
            fs.box = rendered.boxes[f][i];
            fs.visible = rendered.visible[f][i];
            if (st.contained) {
                for (const MotionEvent& ev : scene.events)
                    if (ev.kind == EventKind::Contain && ev.subject == i && ev.t0 <= f &&
                        f < ev.t1)
                        fs.contained_by = ev.target;
            }
        }
        g.objects.push_back(std::move(tr));
    }
    for (const MotionEvent& ev : scene.events)
        g.events.push_back({ev.kind, ev.subject, ev.target, ev.t0, ev.t1});
    return g;
}

namespace {
const ObjectTrack& track_of(const TemporalSceneGraph& g, int id) {
    if (id < 0 || id >= static_cast<int>(g.objects.size()))
        throw ContractError("scene graph has no object " + std::to_string(id));
    return g.objects[id];
}

void check_frame(const TemporalSceneGraph& g, int frame) {
    if (frame < 0 || frame >= g.F)
        throw ContractError("frame " + std::to_string(frame) + " outside 0.." +
                            std::to_string(g.F - 1));
}
}  // namespace

bool spatial_relation(const TemporalSceneGraph& g, int a, int b, int frame, Relation rel) {
    const ObjectTrack& ta = track_of(g, a);
    const ObjectTrack& tb = track_of(g, b);
    check_frame(g, frame);
    if (!ta.frames[frame].visible)
        throw RelationUndefinedError("object " + std::to_string(a) + " not visible at frame " +
                                     std::to_string(frame));
    if (!tb.frames[frame].visible)
        throw RelationUndefinedError("object " + std::to_string(b) + " not visible at frame " +
                                     std::to_string(frame));
    const FrameState& fa = ta.frames[frame];
    const FrameState& fb = tb.frames[frame];
    switch (rel) {
        case Relation::Left: return fa.wx < fb.wx;
        case Relation::Right: return fa.wx > fb.wx;
        case Relation::Behind: return fa.wy > fb.wy;
        case Relation::Front: return fa.wy < fb.wy;
        case Relation::Near:
            return std::hypot(fa.wx - fb.wx, fa.wy - fb.wy) < kNearTau * (2.0 * kWorldHalf);
    }
    throw ContractError("bad relation value");
}

std::vector<int> objects_matching(const TemporalSceneGraph& g, std::optional<Shape> shape,
                                  std::optional<Color> color, std::optional<int> frame) {
    if (frame) check_frame(g, *frame);
    std::vector<int> out;
    for (const ObjectTrack& t : g.objects) {
        if (shape && t.shape != *shape) continue;
        if (color && t.color != *color) continue;
        if (frame && !t.frames[*frame].visible) continue;
        out.push_back(t.id);
    }
    return out;
}

std::pair<double, double> location_of(const TemporalSceneGraph& g, int id, int frame) {
    const ObjectTrack& t = track_of(g, id);
    check_frame(g, frame);
    return {t.frames[frame].px, t.frames[frame].py};
}

std::vector<GraphEvent> actions_of(const TemporalSceneGraph& g, int id) {
    track_of(g, id);
    std::vector<GraphEvent> out;
    for (const GraphEvent& e : g.events)
        if (e.subject == id) out.push_back(e);
    std::stable_sort(out.begin(), out.end(),
                     [](const GraphEvent& a, const GraphEvent& b) { return a.t0 < b.t0; });
    return out;
}

bool was_contained(const TemporalSceneGraph& g, int id, int frame) {
    const ObjectTrack& t = track_of(g, id);
    check_frame(g, frame);
    return t.frames[frame].contained_by >= 0;
}

std::string graph_to_json(const TemporalSceneGraph& g) {
    json j;
    j["F"] = g.F;
    j["H"] = g.H;
    j["W"] = g.W;
    j["objects"] = json::array();
    for (const ObjectTrack& t : g.objects) {
        json track = json::array();
        for (const FrameState& fs : t.frames)
            track.push_back({{"wx", fs.wx},
                             {"wy", fs.wy},
                             {"px", fs.px},
                             {"py", fs.py},
                             {"visible", fs.visible},
                             {"contained_by", fs.contained_by}});
        j["objects"].push_back({{"id", t.id},
                                {"shape", to_string(t.shape)},
                                {"color", to_string(t.color)},
                                {"size", to_string(t.size)},
                                {"track", track}});
    }
    j["events"] = json::array();
    for (const GraphEvent& e : g.events)
        j["events"].push_back({{"kind", to_string(e.kind)},
                               {"subject", e.subject},
                               {"target", e.target},
                               {"t0", e.t0},
                               {"t1", e.t1}});
    j["boxes"] = json::array();
    for (int f = 0; f < g.F; ++f) {
        json row = json::array();
        for (const ObjectTrack& t : g.objects) {
            const auto& box = t.frames[f].box;
            if (box)
                row.push_back(json::array({box->x0, box->y0, box->x1, box->y1}));
            else
                row.push_back(nullptr);
        }
        j["boxes"].push_back(row);
    }
    return j.dump(2) + "\n";
}

TemporalSceneGraph graph_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("scene graph JSON parse failure: ") + e.what());
    }
    try {
        TemporalSceneGraph g;
        g.F = j.at("F").get<int>();
        g.H = j.at("H").get<int>();
        g.W = j.at("W").get<int>();
        for (const auto& o : j.at("objects")) {
            ObjectTrack t;
            t.id = o.at("id").get<int>();
            t.shape = shape_from_string(o.at("shape").get<std::string>());
            t.color = color_from_string(o.at("color").get<std::string>());
            t.size = size_from_string(o.at("size").get<std::string>());
            for (const auto& fs : o.at("track")) {
                FrameState s;
                s.wx = fs.at("wx").get<double>();
                s.wy = fs.at("wy").get<double>();
                s.px = fs.at("px").get<double>();
                s.py = fs.at("py").get<double>();
                s.visible = fs.at("visible").get<bool>();
                s.contained_by = fs.at("contained_by").get<int>();
                t.frames.push_back(s);
            }
            if (static_cast<int>(t.frames.size()) != g.F)
                throw IoError("scene graph track length != F for object " +
                              std::to_string(t.id));
            g.objects.push_back(std::move(t));
        }
        for (const auto& e : j.at("events")) {
            GraphEvent ev;
            ev.kind = event_kind_from_string(e.at("kind").get<std::string>());
            ev.subject = e.at("subject").get<int>();
            ev.target = e.at("target").get<int>();
            ev.t0 = e.at("t0").get<int>();
            ev.t1 = e.at("t1").get<int>();
            if (ev.subject < 0 || ev.subject >= static_cast<int>(g.objects.size()))
                throw IoError("scene graph event references missing object");
            g.events.push_back(ev);
        }
        const auto& boxes = j.at("boxes");
        if (static_cast<int>(boxes.size()) != g.F)
            throw IoError("scene graph boxes must have one row per frame");
        for (int f = 0; f < g.F; ++f) {
            const auto& row = boxes[f];
            if (row.size() != g.objects.size())
                throw IoError("scene graph boxes row " + std::to_string(f) +
                              " has wrong object count");
            for (size_t i = 0; i < g.objects.size(); ++i) {
                if (row[i].is_null()) continue;
                g.objects[i].frames[f].box =
                    BoxI{row[i][0].get<int>(), row[i][1].get<int>(), row[i][2].get<int>(),
                         row[i][3].get<int>()};
            }
        }
        for (const ObjectTrack& t : g.objects)
            for (const FrameState& fs : t.frames)
                if (fs.contained_by >= 0 && fs.visible)
                    throw IoError("scene graph marks a contained object visible");
        return g;
    } catch (const json::exception& e) {
        throw IoError(std::string("scene graph JSON missing or mistyped field: ") + e.what());
    }
}

}  // namespace svqa
