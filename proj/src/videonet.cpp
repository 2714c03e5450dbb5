#include "svqa/videonet.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <set>

#include "svqa/render.hpp"

namespace svqa {

using nlohmann::json;

namespace {

json block_to_json(const R21DBlockConfig& b) {
    return json{{"n_in", b.n_in},
                {"n_out", b.n_out},
                {"m", b.m},
                {"d", b.d},
                {"t", b.t},
                {"spatial_stride1", b.spatial_stride1},
                {"spatial_stride2", b.spatial_stride2},
                {"temporal_stride", b.temporal_stride}};
}

R21DBlockConfig block_from_json(const json& j) {
    R21DBlockConfig b;
    b.n_in = j.at("n_in").get<int>();
    b.n_out = j.at("n_out").get<int>();
    b.m = j.at("m").get<int>();
    b.d = j.at("d").get<int>();
    b.t = j.at("t").get<int>();
    b.spatial_stride1 = j.at("spatial_stride1").get<int>();
    b.spatial_stride2 = j.at("spatial_stride2").get<int>();
    b.temporal_stride = j.at("temporal_stride").get<int>();
    return b;
}

void validate_stream(const std::vector<R21DBlockConfig>& blocks, int expect_in,
                     const char* name) {
    if (blocks.empty())
        throw ContractError(std::string("network config: ") + name + " stream has no blocks");
    if (blocks.front().n_in != expect_in)
        throw ContractError(std::string("network config: ") + name + " stream must start at " +
                            std::to_string(expect_in) + " channels");
    for (size_t i = 0; i < blocks.size(); ++i) {
        const R21DBlockConfig& b = blocks[i];
        if (b.n_in < 1 || b.n_out < 1 || b.m < 1 || b.d < 1 || b.t < 1 ||
            b.spatial_stride1 < 1 || b.spatial_stride2 < 1 || b.temporal_stride < 1)
            throw ContractError("network config: block fields must be positive");
        if (b.d % 2 == 0 || b.t % 2 == 0)
            throw ContractError("network config: kernel extents must be odd");
        if (i > 0 && b.n_in != blocks[i - 1].n_out)
            throw ContractError(std::string("network config: ") + name +
                                " stream channel mismatch between blocks " +
                                std::to_string(i - 1) + " and " + std::to_string(i));
    }
}

// Overall spatial shrink factor of a stream (product of spatial strides).
int spatial_scale(const std::vector<R21DBlockConfig>& blocks) {
    int s = 1;
    for (const R21DBlockConfig& b : blocks) s *= b.spatial_stride1 * b.spatial_stride2;
    return s;
}

// Center-of-window map from a pooled frame index back to an input frame.
int src_frame(int f_out, int n_out, int n_in) {
    const int f = static_cast<int>(std::floor((f_out + 0.5) * n_in / n_out));
    return std::clamp(f, 0, n_in - 1);
}

}  // namespace

NetworkConfig default_network_config() {
    NetworkConfig cfg;
    auto stream = [](int c0) {
        std::vector<R21DBlockConfig> v(3);
        v[0] = {c0, 8, 8, 3, 3, 2, 2, 1};
        v[1] = {8, 16, 16, 3, 3, 2, 1, 2};
        v[2] = {16, 16, 16, 3, 3, 1, 1, 2};
        return v;
    };
    cfg.rgb = stream(3);
    cfg.flow = stream(2);
    return cfg;
}

void validate_network_config(const NetworkConfig& cfg) {
    validate_stream(cfg.rgb, 3, "rgb");
    validate_stream(cfg.flow, 2, "flow");
    if (cfg.n_shapes != kNumShapes || cfg.n_colors != kNumColors || cfg.n_actions != 5)
        throw ContractError("network config: class counts must match the scene vocabulary");
    if (cfg.head_hidden < 1) throw ContractError("network config: head width must be positive");
    if (cfg.roi < 1) throw ContractError("network config: roi grid must be positive");
    if (!(cfg.theta_move > 0.0) || !(cfg.theta_shade > 0.0))
        throw ContractError("network config: detector thresholds must be positive");
}

std::string network_config_to_json(const NetworkConfig& cfg) {
    json j;
    j["version"] = 1;
    j["rgb"] = json::array();
    for (const R21DBlockConfig& b : cfg.rgb) j["rgb"].push_back(block_to_json(b));
    j["flow"] = json::array();
    for (const R21DBlockConfig& b : cfg.flow) j["flow"].push_back(block_to_json(b));
    j["head_hidden"] = cfg.head_hidden;
    j["n_shapes"] = cfg.n_shapes;
    j["n_colors"] = cfg.n_colors;
    j["n_actions"] = cfg.n_actions;
    j["roi"] = cfg.roi;
    j["theta_move"] = cfg.theta_move;
    j["theta_shade"] = cfg.theta_shade;
    return j.dump(2);
}

NetworkConfig network_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("network config: ") + e.what());
    }
    try {
        if (j.at("version").get<int>() != 1)
            throw ContractError("network config: unsupported version");
        NetworkConfig cfg;
        cfg.rgb.clear();
        cfg.flow.clear();
        for (const json& b : j.at("rgb")) cfg.rgb.push_back(block_from_json(b));
        for (const json& b : j.at("flow")) cfg.flow.push_back(block_from_json(b));
        cfg.head_hidden = j.at("head_hidden").get<int>();
        cfg.n_shapes = j.at("n_shapes").get<int>();
        cfg.n_colors = j.at("n_colors").get<int>();
        cfg.n_actions = j.at("n_actions").get<int>();
        cfg.roi = j.at("roi").get<int>();
        cfg.theta_move = j.at("theta_move").get<double>();
        cfg.theta_shade = j.at("theta_shade").get<double>();
        validate_network_config(cfg);
        return cfg;
    } catch (const json::exception& e) {
        throw IoError(std::string("network config: ") + e.what());
    }
}

std::string action_name(int cls) {
    if (cls >= 0 && cls < kActionNoAction) return to_string(static_cast<EventKind>(cls));
    if (cls == kActionNoAction) return "no_action";
    throw ContractError("action_name: class out of range");
}

// ---------------------------------------------------------------------------
// Blocks

R21DBlock make_block(const R21DBlockConfig& cfg, const std::string& prefix, Rng& rng) {
    R21DBlock blk;
    blk.cfg = cfg;
    const int d2 = cfg.d * cfg.d;
    blk.ws1 = Parameter(prefix + ".ws1", glorot_uniform({cfg.m, cfg.n_in, cfg.d, cfg.d},
                                                        cfg.n_in * d2, cfg.m * d2, rng));
    blk.bs1 = Parameter(prefix + ".bs1", Tensor::zeros({cfg.m}));
    blk.ws2 = Parameter(prefix + ".ws2",
                        glorot_uniform({cfg.m, cfg.m, cfg.d, cfg.d}, cfg.m * d2, cfg.m * d2, rng));
    blk.bs2 = Parameter(prefix + ".bs2", Tensor::zeros({cfg.m}));
    blk.wt = Parameter(prefix + ".wt", glorot_uniform({cfg.n_out, cfg.m, cfg.t}, cfg.m * cfg.t,
                                                      cfg.n_out * cfg.t, rng));
    blk.bt = Parameter(prefix + ".bt", Tensor::zeros({cfg.n_out}));
    return blk;
}

int64_t block_param_count(const R21DBlockConfig& cfg) {
    const int64_t d2 = static_cast<int64_t>(cfg.d) * cfg.d;
    return cfg.m * cfg.n_in * d2 + cfg.m          // spatial 1
           + cfg.m * cfg.m * d2 + cfg.m           // spatial 2
           + cfg.n_out * cfg.m * cfg.t + cfg.n_out;  // temporal
}

NodeRef apply_block(Graph& g, NodeRef x, R21DBlock& blk) {
    const R21DBlockConfig& c = blk.cfg;
    const Tensor& xv = g.value(x);
    if (xv.rank() != 4 || xv.shape[0] != c.n_in)
        throw ContractError("r21d block: input must be [" + std::to_string(c.n_in) +
                            ", F, H, W], got " + shape_str(xv.shape));

    // frames as the batch axis for the per-frame spatial convolutions
    NodeRef h = g.permute(x, {1, 0, 2, 3});  // [F, C, H, W]
    h = g.relu(g.conv2d(h, g.leaf(blk.ws1), g.leaf(blk.bs1), c.spatial_stride1, (c.d - 1) / 2));
    h = g.relu(g.conv2d(h, g.leaf(blk.ws2), g.leaf(blk.bs2), c.spatial_stride2, (c.d - 1) / 2));

    const Tensor& hv = g.value(h);  // [F, m, H', W']
    const int F = hv.shape[0], H = hv.shape[2], W = hv.shape[3];
    h = g.permute(h, {1, 0, 2, 3});            // [m, F, H', W']
    h = g.reshape(h, {1, c.m, F, H * W});      // temporal conv batches spatial cells
    h = g.relu(g.conv1d_temporal(h, g.leaf(blk.wt), g.leaf(blk.bt), c.temporal_stride,
                                 (c.t - 1) / 2));
    const int Fp = g.value(h).shape[2];
    return g.reshape(h, {c.n_out, Fp, H, W});
}

Tensor r21d_block(const Tensor& x, R21DBlock& blk) {
    Graph g;
    return g.value(apply_block(g, g.constant(x), blk));
}

// ---------------------------------------------------------------------------
// Model

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out;
    for (std::vector<R21DBlock>* stream : {&rgb_blocks, &flow_blocks})
        for (R21DBlock& b : *stream)
            for (Parameter* p : {&b.ws1, &b.bs1, &b.ws2, &b.bs2, &b.wt, &b.bt})
                out.push_back(p);
    for (Parameter* p : {&rgb_hidden_w, &rgb_hidden_b, &shape_w, &shape_b, &color_w, &color_b,
                         &flow_hidden_w, &flow_hidden_b, &action_w, &action_b})
        out.push_back(p);
    return out;
}

Model make_model(const NetworkConfig& cfg, uint64_t seed) {
    validate_network_config(cfg);
    Model m;
    m.cfg = cfg;
    Rng rng(seed);
    for (size_t i = 0; i < cfg.rgb.size(); ++i)
        m.rgb_blocks.push_back(make_block(cfg.rgb[i], "rgb" + std::to_string(i), rng));
    for (size_t i = 0; i < cfg.flow.size(); ++i)
        m.flow_blocks.push_back(make_block(cfg.flow[i], "flow" + std::to_string(i), rng));

    const int k = cfg.roi;
    const int rgb_feat = cfg.rgb.back().n_out * k * k;
    const int flow_feat = cfg.flow.back().n_out * k * k;
    const int hid = cfg.head_hidden;
    auto lin = [&rng](const std::string& name, int in, int out) {
        return Parameter(name, glorot_uniform({in, out}, in, out, rng));
    };
    m.rgb_hidden_w = lin("rgb_hidden.w", rgb_feat, hid);
    m.rgb_hidden_b = Parameter("rgb_hidden.b", Tensor::zeros({hid}));
    m.shape_w = lin("shape.w", hid, cfg.n_shapes);
    m.shape_b = Parameter("shape.b", Tensor::zeros({cfg.n_shapes}));
    m.color_w = lin("color.w", hid, cfg.n_colors);
    m.color_b = Parameter("color.b", Tensor::zeros({cfg.n_colors}));
    m.flow_hidden_w = lin("flow_hidden.w", flow_feat, hid);
    m.flow_hidden_b = Parameter("flow_hidden.b", Tensor::zeros({hid}));
    m.action_w = lin("action.w", hid, cfg.n_actions);
    m.action_b = Parameter("action.b", Tensor::zeros({cfg.n_actions}));
    return m;
}

void save_model(const std::string& path, Model& m) {
    std::vector<Parameter*> params = m.parameters();
    save_checkpoint(path, params);
    write_file_text(path + ".json", network_config_to_json(m.cfg));
}

Model load_model(const std::string& path) {
    const NetworkConfig cfg = network_config_from_json(read_file_text(path + ".json"));
    Model m = make_model(cfg, 0);
    std::vector<Parameter*> params = m.parameters();
    load_checkpoint(path, params);
    return m;
}

// ---------------------------------------------------------------------------
// Layout shims

Tensor clip_to_tensor(const Clip& clip) {
    Tensor t({3, clip.F, clip.H, clip.W});
    for (int c = 0; c < 3; ++c)
        for (int f = 0; f < clip.F; ++f)
            for (int y = 0; y < clip.H; ++y)
                for (int x = 0; x < clip.W; ++x)
                    t.data[((static_cast<size_t>(c) * clip.F + f) * clip.H + y) * clip.W + x] =
                        clip.at(f, y, x, c);
    return t;
}

Tensor flow_to_tensor(const FlowStack& flow) {
    Tensor t({2, flow.N, flow.H, flow.W});
    for (int c = 0; c < 2; ++c)
        for (int n = 0; n < flow.N; ++n)
            for (int y = 0; y < flow.H; ++y)
                for (int x = 0; x < flow.W; ++x)
                    t.data[((static_cast<size_t>(c) * flow.N + n) * flow.H + y) * flow.W + x] =
                        flow.at(n, y, x, c);
    return t;
}

// ---------------------------------------------------------------------------
// Temporal segmentation

// Tracks are addressed by their id field; callers may hold graphs whose
// object list is not sorted by id.
static const ObjectTrack& track_of(const TemporalSceneGraph& g, int id, const char* who) {
    for (const ObjectTrack& o : g.objects)
        if (o.id == id) return o;
    throw ContractError(std::string(who) + ": unknown object id");
}

std::vector<IntervalLabel> action_intervals(const TemporalSceneGraph& g, int object_id) {
    if (object_id < 0 || object_id >= static_cast<int>(g.objects.size()))
        throw ContractError("action_intervals: unknown object id");
    std::vector<IntervalLabel> out;
    std::vector<bool> busy(static_cast<size_t>(g.F), false);
    for (const GraphEvent& e : g.events) {
        if (e.subject == object_id) {
            IntervalLabel it;
            it.t0 = e.t0;
            it.t1 = e.t1;
            it.cls = static_cast<int>(e.kind);
            out.push_back(it);
        }
        if (e.subject == object_id || e.target == object_id)
            for (int f = std::max(0, e.t0); f < std::min(g.F, e.t1); ++f)
                busy[static_cast<size_t>(f)] = true;
    }
    std::sort(out.begin(), out.end(),
              [](const IntervalLabel& a, const IntervalLabel& b) { return a.t0 < b.t0; });

    // idle gaps: maximal uncovered runs of >= 4 frames, at most two per object
    int gaps = 0;
    int run = 0;
    for (int f = 0; f <= g.F && gaps < 2; ++f) {
        if (f < g.F && !busy[static_cast<size_t>(f)]) {
            ++run;
            continue;
        }
        if (run >= 4) {
            IntervalLabel it;
            it.t0 = f - run;
            it.t1 = f;
            it.cls = kActionNoAction;
            out.push_back(it);
            ++gaps;
        }
        run = 0;
    }
    std::sort(out.begin(), out.end(),
              [](const IntervalLabel& a, const IntervalLabel& b) { return a.t0 < b.t0; });
    return out;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

// Ground-truth boxes mapped to the pooled feature geometry; invisible
// frames stay empty and pool to zeros.
std::vector<std::optional<std::array<float, 4>>> feature_boxes(const ObjectTrack& obj,
                                                               int frames_out, int frames_in,
                                                               int scale) {
    std::vector<std::optional<std::array<float, 4>>> out(static_cast<size_t>(frames_out));
    for (int f = 0; f < frames_out; ++f) {
        const FrameState& fs = obj.frames[static_cast<size_t>(src_frame(f, frames_out, frames_in))];
        if (!fs.visible || !fs.box) continue;
        const float s = static_cast<float>(scale);
        out[static_cast<size_t>(f)] = std::array<float, 4>{
            static_cast<float>(fs.box->x0) / s, static_cast<float>(fs.box->y0) / s,
            static_cast<float>(fs.box->x1 + 1) / s, static_cast<float>(fs.box->y1 + 1) / s};
    }
    return out;
}

// Pooled feature frames whose source window lands inside [t0, t1).
std::vector<int> interval_feature_frames(int t0, int t1, int frames_out, int frames_in) {
    std::vector<int> picks;
    for (int f = 0; f < frames_out; ++f) {
        const int src = src_frame(f, frames_out, frames_in);
        if (src >= t0 && src < t1) picks.push_back(f);
    }
    if (picks.empty()) {
        // interval narrower than the temporal stride: use the nearest frame
        const double center = 0.5 * (t0 + t1 - 1);
        int best = 0;
        double bestd = 1e18;
        for (int f = 0; f < frames_out; ++f) {
            const double d = std::abs(src_frame(f, frames_out, frames_in) - center);
            if (d < bestd) {
                bestd = d;
                best = f;
            }
        }
        picks.push_back(best);
    }
    return picks;
}

struct ClipGraph {
    Graph g;
    NodeRef rgb_feat, flow_feat;
    int rgb_frames = 0, flow_frames = 0;
    int rgb_scale = 1, flow_scale = 1;
};

void build_trunks(ClipGraph& cg, Model& m, const Clip& clip, const FlowStack& flow) {
    NodeRef rgb = cg.g.constant(clip_to_tensor(clip));
    for (R21DBlock& b : m.rgb_blocks) rgb = apply_block(cg.g, rgb, b);
    NodeRef flo = cg.g.constant(flow_to_tensor(flow));
    for (R21DBlock& b : m.flow_blocks) flo = apply_block(cg.g, flo, b);
    cg.rgb_feat = rgb;
    cg.flow_feat = flo;
    cg.rgb_frames = cg.g.value(rgb).shape[1];
    cg.flow_frames = cg.g.value(flo).shape[1];
    cg.rgb_scale = spatial_scale(m.cfg.rgb);
    cg.flow_scale = spatial_scale(m.cfg.flow);
}

struct HeadNodes {
    NodeRef shape, color;                 // [1, n_shapes], [1, n_colors]
    std::vector<NodeRef> actions;         // per interval, [1, n_actions]
    std::vector<IntervalLabel> intervals;
};

HeadNodes build_heads(ClipGraph& cg, Model& m, const TemporalSceneGraph& truth, int obj_id) {
    Graph& g = cg.g;
    const ObjectTrack& obj = track_of(truth, obj_id, "build_heads");
    const int k = m.cfg.roi;
    HeadNodes out;

    NodeRef pooled = g.roi_pool(cg.rgb_feat,
                                feature_boxes(obj, cg.rgb_frames, truth.F, cg.rgb_scale), k);
    NodeRef feat = g.reshape(g.mean_frames(pooled),
                             {1, m.cfg.rgb.back().n_out * k * k});
    NodeRef hid = g.relu(g.linear(feat, g.leaf(m.rgb_hidden_w), g.leaf(m.rgb_hidden_b)));
    out.shape = g.linear(hid, g.leaf(m.shape_w), g.leaf(m.shape_b));
    out.color = g.linear(hid, g.leaf(m.color_w), g.leaf(m.color_b));

    out.intervals = action_intervals(truth, obj_id);
    if (out.intervals.empty()) return out;
    NodeRef fpool = g.roi_pool(cg.flow_feat,
                               feature_boxes(obj, cg.flow_frames, truth.F - 1, cg.flow_scale), k);
    for (const IntervalLabel& iv : out.intervals) {
        // motion over [t0, t1) shows up in the t1 - t0 - 1 pairwise fields
        const std::vector<int> picks = interval_feature_frames(
            iv.t0, std::max(iv.t0 + 1, iv.t1 - 1), cg.flow_frames, truth.F - 1);
        NodeRef part = g.reshape(g.mean_frames(g.gather_frames(fpool, picks)),
                                 {1, m.cfg.flow.back().n_out * k * k});
        NodeRef fhid =
            g.relu(g.linear(part, g.leaf(m.flow_hidden_w), g.leaf(m.flow_hidden_b)));
        out.actions.push_back(g.linear(fhid, g.leaf(m.action_w), g.leaf(m.action_b)));
    }
    return out;
}

std::vector<float> row_of(const Graph& g, NodeRef r) {
    const Tensor& t = g.value(r);
    return t.data;
}

int argmax_of(const std::vector<float>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::vector<ObjectPrediction> forward(Model& m, const Clip& clip, const FlowStack& flow,
                                      const TemporalSceneGraph& truth) {
    if (clip.F != truth.F || clip.H != truth.H || clip.W != truth.W)
        throw ContractError("forward: clip and graph geometry disagree");
    if (flow.N != clip.F - 1 || flow.H != clip.H || flow.W != clip.W)
        throw ContractError("forward: flow stack must hold F-1 fields at clip resolution");

    ClipGraph cg;
    build_trunks(cg, m, clip, flow);
    std::vector<ObjectPrediction> preds;
    for (const ObjectTrack& obj : truth.objects) {
        HeadNodes heads = build_heads(cg, m, truth, obj.id);
        ObjectPrediction p;
        p.id = obj.id;
        p.shape_logits = row_of(cg.g, heads.shape);
        p.color_logits = row_of(cg.g, heads.color);
        for (size_t i = 0; i < heads.intervals.size(); ++i) {
            p.intervals.emplace_back(heads.intervals[i].t0, heads.intervals[i].t1);
            p.action_logits.push_back(row_of(cg.g, heads.actions[i]));
            if (detect_rotation(clip, truth, flow, obj.id, heads.intervals[i].t0,
                                heads.intervals[i].t1, m.cfg.theta_move, m.cfg.theta_shade))
                p.rotating = true;
        }
        preds.push_back(std::move(p));
    }
    return preds;
}

// ---------------------------------------------------------------------------
// Rotation detector

bool detect_rotation(const Clip& clip, const TemporalSceneGraph& truth, const FlowStack& flow,
                     int object_id, int t0, int t1, double theta_move, double theta_shade) {
    const ObjectTrack& obj = track_of(truth, object_id, "detect_rotation");
    if (t0 < 0 || t1 > truth.F || t0 >= t1)
        throw ContractError("detect_rotation: bad interval");

    // Both statistics run over one fixed set of box pixels, anchored to the
    // box centre and surviving in every usable frame.  Pixels claimed by
    // another visible object's box in any frame are dropped from the whole
    // interval: a passing neighbour can neither fake a shading swing nor
    // smear its motion into the stillness measure, and because the pixel set
    // never changes between frames, the per-frame means stay comparable.
    auto masked = [&](int f, int object, int x, int y) {
        for (const ObjectTrack& other : truth.objects) {
            if (other.id == object) continue;
            const FrameState& os = other.frames[static_cast<size_t>(f)];
            if (os.visible && os.box && x >= os.box->x0 && x <= os.box->x1 && y >= os.box->y0 &&
                y <= os.box->y1)
                return true;
        }
        return false;
    };

    std::vector<int> frames;
    for (int f = t0; f < t1; ++f) {
        const FrameState& fs = obj.frames[static_cast<size_t>(f)];
        if (fs.visible && fs.box) frames.push_back(f);
    }
    if (frames.size() < 2) return false;  // nothing to compare (includes fully invisible)

    // Candidate offsets from the first usable frame's box, then pruned to
    // offsets that are in-box, in-frame, and unmasked in every usable frame.
    const BoxI& b0 = *obj.frames[static_cast<size_t>(frames.front())].box;
    const int total = (b0.x1 - b0.x0 + 1) * (b0.y1 - b0.y0 + 1);
    std::vector<std::pair<int, int>> offsets;
    for (int y = b0.y0; y <= b0.y1; ++y)
        for (int x = b0.x0; x <= b0.x1; ++x)
            offsets.emplace_back(x - (b0.x0 + b0.x1) / 2, y - (b0.y0 + b0.y1) / 2);
    for (int f : frames) {
        const BoxI& b = *obj.frames[static_cast<size_t>(f)].box;
        const int cx = (b.x0 + b.x1) / 2, cy = (b.y0 + b.y1) / 2;
        std::vector<std::pair<int, int>> kept;
        for (auto [ox, oy] : offsets) {
            const int x = cx + ox, y = cy + oy;
            if (x < b.x0 || x > b.x1 || y < b.y0 || y > b.y1) continue;
            if (x < 0 || x >= clip.W || y < 0 || y >= clip.H) continue;
            if (masked(f, object_id, x, y)) continue;
            kept.emplace_back(ox, oy);
        }
        offsets.swap(kept);
    }
    if (offsets.size() < static_cast<size_t>(std::max(9, total / 6)))
        return false;  // too little of the object stays measurable

    double lum_min = 1e18, lum_max = -1e18;
    double move_sum = 0.0;
    int64_t move_n = 0;
    for (int f : frames) {
        const BoxI& b = *obj.frames[static_cast<size_t>(f)].box;
        const int cx = (b.x0 + b.x1) / 2, cy = (b.y0 + b.y1) / 2;
        double sum = 0.0;
        for (auto [ox, oy] : offsets) {
            const int x = cx + ox, y = cy + oy;
            sum += luminance(clip.at(f, y, x, 0), clip.at(f, y, x, 1), clip.at(f, y, x, 2));
        }
        const double mean = sum / static_cast<double>(offsets.size());
        lum_min = std::min(lum_min, mean);
        lum_max = std::max(lum_max, mean);
        if (f < std::min(t1 - 1, flow.N)) {
            for (auto [ox, oy] : offsets) {
                const int x = cx + ox, y = cy + oy;
                move_sum += std::hypot(flow.at(f, y, x, 0), flow.at(f, y, x, 1));
                ++move_n;
            }
        }
    }

    const double mean_move = move_n ? move_sum / static_cast<double>(move_n) : 0.0;
    const double rel_range = (lum_max - lum_min) / std::max(1e-6, 0.5 * (lum_max + lum_min));
    return mean_move < theta_move && rel_range > theta_shade;
}

// ---------------------------------------------------------------------------
// Recognized graph

TemporalSceneGraph predicted_graph(const TemporalSceneGraph& truth,
                                   const std::vector<ObjectPrediction>& preds) {
    TemporalSceneGraph out = truth;
    out.events.clear();
    for (const ObjectPrediction& p : preds) {
        ObjectTrack& obj = const_cast<ObjectTrack&>(track_of(out, p.id, "predicted_graph"));
        obj.shape = static_cast<Shape>(argmax_of(p.shape_logits));
        obj.color = static_cast<Color>(argmax_of(p.color_logits));
        for (size_t i = 0; i < p.intervals.size(); ++i) {
            const int cls = argmax_of(p.action_logits[i]);
            if (cls == kActionNoAction) continue;  // recognized as idle
            GraphEvent e;
            e.kind = static_cast<EventKind>(cls);
            e.subject = p.id;
            e.t0 = p.intervals[i].first;
            e.t1 = p.intervals[i].second;
            // carry the target only when the original event survives as-is
            for (const GraphEvent& te : truth.events)
                if (te.subject == p.id && te.t0 == e.t0 && te.t1 == e.t1 && te.kind == e.kind)
                    e.target = te.target;
            out.events.push_back(e);
        }
    }
    std::sort(out.events.begin(), out.events.end(), [](const GraphEvent& a, const GraphEvent& b) {
        return a.t0 != b.t0 ? a.t0 < b.t0 : a.subject < b.subject;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct ClipLoss {
    NodeRef total;
    bool has_actions = false;
};

// Summed per-head mean cross-entropies for one clip.
ClipLoss build_loss(ClipGraph& cg, Model& m, const TemporalSceneGraph& truth) {
    if (truth.objects.empty()) throw ContractError("train: clip has no objects");
    Graph& g = cg.g;
    std::vector<NodeRef> shape_ce, color_ce, action_ce;
    for (const ObjectTrack& obj : truth.objects) {
        HeadNodes heads = build_heads(cg, m, truth, obj.id);
        shape_ce.push_back(
            g.cross_entropy(g.softmax(heads.shape), {static_cast<int>(obj.shape)}));
        color_ce.push_back(
            g.cross_entropy(g.softmax(heads.color), {static_cast<int>(obj.color)}));
        for (size_t i = 0; i < heads.intervals.size(); ++i)
            action_ce.push_back(
                g.cross_entropy(g.softmax(heads.actions[i]), {heads.intervals[i].cls}));
    }
    auto mean_of = [&g](const std::vector<NodeRef>& terms) {
        NodeRef acc = terms[0];
        for (size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
        return g.scale_add(acc, 1.0f / static_cast<float>(terms.size()), 0.0f);
    };
    ClipLoss out;
    out.total = g.add(mean_of(shape_ce), mean_of(color_ce));
    if (!action_ce.empty()) {
        out.total = g.add(out.total, mean_of(action_ce));
        out.has_actions = true;
    }
    return out;
}

}  // namespace

TrainReport train(Model& m, const std::vector<DatasetItem>& data, int epochs, float lr,
                  uint64_t seed) {
    if (data.empty()) throw ContractError("train: empty dataset");
    if (epochs < 0) throw ContractError("train: negative epoch count");
    std::vector<Parameter*> params = m.parameters();

    std::vector<FlowStack> flows;
    flows.reserve(data.size());
    for (const DatasetItem& item : data) flows.push_back(flow_clip(item.clip));

    TrainReport report;
    report.epochs = epochs;
    report.lr = lr;
    report.seed = seed;
    Rng root(seed);

    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng epoch_rng = root.fork(static_cast<uint64_t>(epoch));
        epoch_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t idx : order) {
            const DatasetItem& item = data[idx];
            ClipGraph cg;
            build_trunks(cg, m, item.clip, flows[idx]);
            ClipLoss loss = build_loss(cg, m, item.truth);
            const float lv = cg.g.value(loss.total).data[0];
            if (!std::isfinite(lv))
                throw NumericError("train: loss diverged at epoch " + std::to_string(epoch));
            epoch_loss += lv;
            zero_grads(params);
            cg.g.backward(loss.total);
            sgd_step(params, lr);
        }
        report.epoch_loss.push_back(epoch_loss);
    }

    const HeadAccuracy acc = evaluate(m, data);
    report.shape_acc = acc.shape;
    report.color_acc = acc.color;
    report.action_acc = acc.action;
    return report;
}

HeadAccuracy evaluate(Model& m, const std::vector<DatasetItem>& data) {
    if (data.empty()) throw ContractError("evaluate: empty dataset");
    HeadAccuracy acc;
    int shape_right = 0, color_right = 0, action_right = 0;
    for (const DatasetItem& item : data) {
        const FlowStack flow = flow_clip(item.clip);
        const std::vector<ObjectPrediction> preds = forward(m, item.clip, flow, item.truth);
        for (const ObjectPrediction& p : preds) {
            const ObjectTrack& obj = track_of(item.truth, p.id, "evaluate");
            ++acc.n_objects;
            if (argmax_of(p.shape_logits) == static_cast<int>(obj.shape)) ++shape_right;
            if (argmax_of(p.color_logits) == static_cast<int>(obj.color)) ++color_right;
            const std::vector<IntervalLabel> labels = action_intervals(item.truth, p.id);
            for (size_t i = 0; i < labels.size(); ++i) {
                ++acc.n_intervals;
                if (argmax_of(p.action_logits[i]) == labels[i].cls) ++action_right;
            }
        }
    }
    acc.shape = acc.n_objects ? static_cast<double>(shape_right) / acc.n_objects : 0.0;
    acc.color = acc.n_objects ? static_cast<double>(color_right) / acc.n_objects : 0.0;
    acc.action = acc.n_intervals ? static_cast<double>(action_right) / acc.n_intervals : 0.0;
    return acc;
}

std::string train_report_to_json(const TrainReport& r) {
    json j;
    j["version"] = 1;
    j["epochs"] = r.epochs;
    j["lr"] = r.lr;
    j["seed"] = r.seed;
    j["epoch_loss"] = r.epoch_loss;
    j["shape_acc"] = r.shape_acc;
    j["color_acc"] = r.color_acc;
    j["action_acc"] = r.action_acc;
    return j.dump(2);
}

TrainReport train_report_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        if (j.at("version").get<int>() != 1)
            throw ContractError("train report: unsupported version");
        TrainReport r;
        r.epochs = j.at("epochs").get<int>();
        r.lr = j.at("lr").get<double>();
        r.seed = j.at("seed").get<uint64_t>();
        r.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
        r.shape_acc = j.at("shape_acc").get<double>();
        r.color_acc = j.at("color_acc").get<double>();
        r.action_acc = j.at("action_acc").get<double>();
        return r;
    } catch (const json::exception& e) {
        throw IoError(std::string("train report: ") + e.what());
    }
}

}  // namespace svqa
