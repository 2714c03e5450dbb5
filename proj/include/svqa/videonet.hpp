#pragma once

#include <string>
#include <utility>
#include <vector>

#include "svqa/dataset.hpp"
#include "svqa/flow.hpp"
#include "svqa/scenegraph.hpp"
#include "svqa/tensor.hpp"

namespace svqa {

// One factorized spatiotemporal block: two spatial convolutions followed by
// one temporal convolution, each capped by a ReLU. Spatial kernels are d x d
// applied per frame; the temporal kernel spans t frames at every spatial
// location. m is the intermediate channel width between the convolutions.
struct R21DBlockConfig {
    int n_in = 3;
    int n_out = 8;
    int m = 8;
    int d = 3;  // spatial kernel extent, odd
    int t = 3;  // temporal kernel extent, odd
    int spatial_stride1 = 1;
    int spatial_stride2 = 1;
    int temporal_stride = 1;
};

// Two-stream layout: the RGB stream feeds shape and color heads, the flow
// stream feeds the action head. Heads share one hidden layer per stream.
struct NetworkConfig {
    std::vector<R21DBlockConfig> rgb;   // first block expects 3 channels
    std::vector<R21DBlockConfig> flow;  // first block expects 2 channels
    int head_hidden = 64;
    int n_shapes = kNumShapes;
    int n_colors = kNumColors;
    int n_actions = 5;  // Translate, Rotate, Contain, Scale, NoAction
    int roi = 4;        // pooled grid edge per object
    // Rotation detector thresholds: an object rotates over an interval when
    // its mean in-box flow stays under theta_move pixels while its mean
    // in-box luminance swings by more than theta_shade (relative range).
    double theta_move = 0.3;
    double theta_shade = 0.05;
};

// 3 blocks per stream, channels 3->8->16->16 (flow 2->8->16->16), overall
// spatial downscale 8x and temporal downscale 4x. Small enough to train on
// a CPU in minutes.
NetworkConfig default_network_config();

void validate_network_config(const NetworkConfig& cfg);
std::string network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const std::string& text);

// The action head's class order: EventKind values first, then the idle class.
constexpr int kActionNoAction = 4;
std::string action_name(int cls);

struct R21DBlock {
    R21DBlockConfig cfg;
    Parameter ws1, bs1;  // [m, n_in, d, d]
    Parameter ws2, bs2;  // [m, m, d, d]
    Parameter wt, bt;    // [n_out, m, t]
};

R21DBlock make_block(const R21DBlockConfig& cfg, const std::string& prefix, Rng& rng);

// Exact trainable scalar count of one block (weights + biases).
int64_t block_param_count(const R21DBlockConfig& cfg);

// Applies the block inside an autodiff graph. x is [n_in, F, H, W]; the
// result is [n_out, F', H', W'] with primed extents set by the strides.
NodeRef apply_block(Graph& g, NodeRef x, R21DBlock& blk);

// Standalone forward convenience over a value tensor.
Tensor r21d_block(const Tensor& x, R21DBlock& blk);

struct Model {
    NetworkConfig cfg;
    std::vector<R21DBlock> rgb_blocks;
    std::vector<R21DBlock> flow_blocks;
    Parameter rgb_hidden_w, rgb_hidden_b;
    Parameter shape_w, shape_b;
    Parameter color_w, color_b;
    Parameter flow_hidden_w, flow_hidden_b;
    Parameter action_w, action_b;

    // Stable enumeration order; checkpoints and SGD both rely on it.
    std::vector<Parameter*> parameters();
};

Model make_model(const NetworkConfig& cfg, uint64_t seed);

// Checkpoint (R21W container) plus a JSON sidecar "<path>.json" holding the
// architecture, so a model file reloads without external context.
void save_model(const std::string& path, Model& m);
Model load_model(const std::string& path);

// Layout shims between the clip/flow containers and [C, F, H, W] tensors.
Tensor clip_to_tensor(const Clip& clip);
Tensor flow_to_tensor(const FlowStack& flow);

// The temporal segmentation the action head is trained and queried on:
// one interval per event naming the object (as subject), plus up to two
// idle gaps of at least four frames labeled as the no-action class. Frames
// where the object serves as a containment target are not idle.
struct IntervalLabel {
    int t0 = 0, t1 = 0;  // [t0, t1)
    int cls = kActionNoAction;
};
std::vector<IntervalLabel> action_intervals(const TemporalSceneGraph& g, int object_id);

struct ObjectPrediction {
    int id = 0;
    std::vector<float> shape_logits;                 // [n_shapes]
    std::vector<float> color_logits;                 // [n_colors]
    std::vector<std::pair<int, int>> intervals;      // matches action_logits rows
    std::vector<std::vector<float>> action_logits;   // per interval, [n_actions]
    bool rotating = false;  // shading-based detector, independent of the head
};

// Runs both streams over one clip and pools per object through its
// ground-truth boxes. One prediction per object, in id order.
std::vector<ObjectPrediction> forward(Model& m, const Clip& clip, const FlowStack& flow,
                                      const TemporalSceneGraph& truth);

// True when the object's box barely moves (mean flow under theta_move px)
// while its luminance swings (relative range over theta_shade). Luminance is
// sampled only on frames where the box overlaps no other visible object;
// an interval with no such frame, or no visible frame at all, is false.
bool detect_rotation(const Clip& clip, const TemporalSceneGraph& truth, const FlowStack& flow,
                     int object_id, int t0, int t1, double theta_move = 0.3,
                     double theta_shade = 0.05);

// Ground-truth geometry with recognized attributes: shapes and colors from
// the heads' argmax, event kinds from the per-interval action argmax (idle
// predictions drop the event; action predictions on idle gaps add one).
TemporalSceneGraph predicted_graph(const TemporalSceneGraph& truth,
                                   const std::vector<ObjectPrediction>& preds);

struct TrainReport {
    int epochs = 0;
    double lr = 0.0;
    uint64_t seed = 0;
    std::vector<double> epoch_loss;  // summed clip losses per epoch
    double shape_acc = 0.0, color_acc = 0.0, action_acc = 0.0;  // final train set
};

std::string train_report_to_json(const TrainReport& r);
TrainReport train_report_from_json(const std::string& text);

struct HeadAccuracy {
    int n_objects = 0;
    int n_intervals = 0;
    double shape = 0.0, color = 0.0, action = 0.0;
};

// Per-clip SGD on the summed cross-entropy of the three heads. Clip order
// reshuffles each epoch from the seed; gradient accumulation within a clip
// is ordered by object index, so a (seed, data, epochs, lr) tuple is fully
// deterministic. Throws NumericError when the loss leaves the reals.
TrainReport train(Model& m, const std::vector<DatasetItem>& data, int epochs, float lr,
                  uint64_t seed);

HeadAccuracy evaluate(Model& m, const std::vector<DatasetItem>& data);

}  // namespace svqa
