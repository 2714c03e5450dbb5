#pragma once

#include <optional>
#include <string>
#include <vector>

#include "svqa/common.hpp"

namespace svqa {

enum class Shape { Cube, Sphere, Cone };
enum class Color { Red, Green, Blue, Yellow, Purple, Gray };
enum class ObjSize { Small, Large };
enum class EventKind { Translate, Rotate, Contain, Scale };

constexpr int kNumShapes = 3;
constexpr int kNumColors = 6;
constexpr int kNumSizes = 2;

std::string to_string(Shape s);
std::string to_string(Color c);
std::string to_string(ObjSize s);
std::string to_string(EventKind k);
Shape shape_from_string(const std::string& s);
Color color_from_string(const std::string& s);
ObjSize size_from_string(const std::string& s);
EventKind event_kind_from_string(const std::string& s);

// Base color of each palette entry (channel max kept below 0.9 so shading
// plus the albedo pattern never clips).
void color_rgb(Color c, float out[3]);

// World radii. Objects rest on the ground plane, so center height == radius.
double size_radius(ObjSize s);

struct ObjectSpec {
    int id = 0;
    Shape shape = Shape::Cube;
    Color color = Color::Red;
    ObjSize size = ObjSize::Small;
    double x0 = 0.0, y0 = 0.0;  // world position at frame 0
    double yaw0 = 0.0;          // initial heading, radians
};

struct MotionEvent {
    EventKind kind = EventKind::Translate;
    int subject = -1;
    int target = -1;           // Contain only: the covering cone
    int t0 = 0, t1 = 0;        // active over frames [t0, t1)
    double dx = 0.0, dy = 0.0; // Translate: world displacement per frame
    double omega = 0.0;        // Rotate: radians per frame
    double factor = 1.0;       // Scale: total size multiplier over the event
};

struct SimConfig {
    int n_objects = 5;  // 3..8
    int F = 24;
    int H = 64;
    int W = 64;
    int n_events = 3;
    // Which event kinds the sampler may draw. Narrowed for special corpora
    // (e.g. translation-only clips for flow checks).
    std::vector<EventKind> allowed_kinds{EventKind::Translate, EventKind::Rotate,
                                         EventKind::Contain, EventKind::Scale};
};

struct Scene {
    SimConfig config;
    uint64_t seed = 0;
    std::vector<ObjectSpec> objects;
    std::vector<MotionEvent> events;
};

// World bounds for object centers, both axes.
constexpr double kWorldHalf = 2.8;

// Instantaneous state of one object at one frame.
struct ObjectState {
    double x = 0.0, y = 0.0, z = 0.0;
    double yaw = 0.0;
    double radius = 0.0;
    bool contained = false;
};

ObjectState object_state(const Scene& scene, int object_id, int frame);

// Per-frame states for every object: tracks[frame][object_id].
std::vector<std::vector<ObjectState>> simulate_tracks(const Scene& scene);

// Uniformly samples shapes/colors/sizes/positions and a set of motion events.
// Same (seed, config) always yields the identical scene. Throws ContractError
// when the config is out of bounds or placement/event sampling fails after
// 1000 rejection attempts.
Scene generate_scene(uint64_t seed, const SimConfig& config);

std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& text);

}  // namespace svqa
