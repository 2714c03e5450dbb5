#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "svqa/render.hpp"
#include "svqa/scene.hpp"

namespace svqa {

// Per-frame ground-truth state of one object.
struct FrameState {
    double wx = 0.0, wy = 0.0;  // world centroid
    double px = 0.0, py = 0.0;  // projected pixel centroid
    std::optional<BoxI> box;    // rasterized footprint; empty while contained
    bool visible = false;
    int contained_by = -1;  // covering object id, or -1
};

struct ObjectTrack {
    int id = 0;
    Shape shape = Shape::Cube;
    Color color = Color::Red;
    ObjSize size = ObjSize::Small;
    std::vector<FrameState> frames;  // exactly F entries
};

struct GraphEvent {
    EventKind kind = EventKind::Translate;
    int subject = -1;
    int target = -1;  // Contain only
    int t0 = 0, t1 = 0;
};

struct TemporalSceneGraph {
    int F = 0;
    int H = 0, W = 0;  // pixel frame the boxes/centroids live in
    std::vector<ObjectTrack> objects;
    std::vector<GraphEvent> events;
};

// Assembles the ground-truth graph for a rendered scene: analytic tracks,
// rasterizer boxes and visibility, events carried over.
TemporalSceneGraph build_graph(const Scene& scene, const RenderResult& rendered);

enum class Relation { Left, Right, Behind, Front, Near };
constexpr int kNumRelations = 5;

std::string to_string(Relation r);
Relation relation_from_string(const std::string& s);

// Near threshold: centroid distance below kNearTau * world width.
constexpr double kNearTau = 0.2;

// Left/Right compare world x; Behind/Front compare world depth (larger y is
// Behind). An invisible participant makes the relation undefined (thrown),
// which is distinct from false.
bool spatial_relation(const TemporalSceneGraph& g, int a, int b, int frame, Relation rel);

// Conjunctive attribute filter; with a frame, only objects visible there.
std::vector<int> objects_matching(const TemporalSceneGraph& g, std::optional<Shape> shape,
                                  std::optional<Color> color, std::optional<int> frame);

// Pixel centroid at a frame (tracked analytically even while contained).
std::pair<double, double> location_of(const TemporalSceneGraph& g, int id, int frame);

std::vector<GraphEvent> actions_of(const TemporalSceneGraph& g, int id);
bool was_contained(const TemporalSceneGraph& g, int id, int frame);

std::string graph_to_json(const TemporalSceneGraph& g);
TemporalSceneGraph graph_from_json(const std::string& text);

}  // namespace svqa
