#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "svqa/common.hpp"

namespace svqa {

// Dense row-major float32 tensor. A plain value; no view aliasing.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shp);
    Tensor(std::vector<int> shp, std::vector<float> values);

    static Tensor zeros(std::vector<int> shp) { return Tensor(std::move(shp)); }
    static Tensor full(std::vector<int> shp, float v);
    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    int64_t numel() const;
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const;
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    void fill(float v);
    bool all_finite() const;

    float& operator[](size_t i) { return data[i]; }
    float operator[](size_t i) const { return data[i]; }
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Trainable weight. grad always mirrors value's shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor::zeros(value.shape);
    }
};

void zero_grads(std::vector<Parameter*>& params);
// value <- value - lr * grad. Throws NumericError naming the parameter on
// a non-finite gradient.
void sgd_step(std::vector<Parameter*>& params, float lr);

// Glorot-uniform init in +-sqrt(6/(fan_in+fan_out)).
Tensor glorot_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng);

struct NodeRef {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode tape. Built fresh for every forward pass; backward() walks it
// once in reverse and accumulates into Parameter.grad for bound leaves.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaves.
    NodeRef leaf(Parameter& p);          // gradient flows into p.grad
    NodeRef constant(Tensor t);          // no gradient

    // Convolutions. Cross-correlation convention (no kernel flip).
    // conv2d: x[N,C,H,W] * w[M,C,kh,kw] + b[M] -> [N,M,H',W']
    NodeRef conv2d(NodeRef x, NodeRef w, NodeRef b, int stride, int pad);
    // conv1d over the frame axis: x[N,C,F,L] * w[M,C,t] + b[M] -> [N,M,F',L]
    NodeRef conv1d_temporal(NodeRef x, NodeRef w, NodeRef b, int stride, int pad);

    NodeRef relu(NodeRef x);
    // x[N,K] * w[K,M] + b[M]; pass an invalid NodeRef as b to skip the bias.
    NodeRef linear(NodeRef x, NodeRef w, NodeRef b);
    NodeRef softmax(NodeRef x);  // rows of [N,K]
    // -mean(log probs[n, labels[n]]); probs are softmax outputs. log is
    // clamped at 1e-12 (sets clamp_warning()).
    NodeRef cross_entropy(NodeRef probs, const std::vector<int>& labels);

    // Shape plumbing.
    NodeRef reshape(NodeRef x, std::vector<int> new_shape);
    NodeRef permute(NodeRef x, const std::vector<int>& perm);
    NodeRef gather_frames(NodeRef x, const std::vector<int>& frames);  // axis 1 of [C,F,...]
    NodeRef mean_frames(NodeRef x);  // [C,F,...] -> [C,...], mean over axis 1

    // Pointwise / reductions.
    NodeRef add(NodeRef a, NodeRef b);
    NodeRef mul(NodeRef a, NodeRef b);
    NodeRef scale_add(NodeRef x, float k, float c);  // k*x + c
    NodeRef clamp01(NodeRef x);
    NodeRef sum(NodeRef x);        // -> scalar
    NodeRef prod(NodeRef x);       // -> scalar, product of all entries
    NodeRef div_scalar(NodeRef x, NodeRef s);  // x / s, s a scalar node

    // Max-pool a box region of x[C,F,H,W] into a k x k grid per frame.
    // boxes: per frame, optional (x0,y0,x1,y1) in feature coordinates;
    // nullopt means the object is invisible that frame and yields zeros.
    NodeRef roi_pool(NodeRef x, const std::vector<std::optional<std::array<float, 4>>>& boxes,
                     int k);

    void backward(NodeRef loss);

    const Tensor& value(NodeRef r) const;
    size_t size() const { return nodes_.size(); }
    bool clamp_warning() const { return clamp_warning_; }

private:
    struct Node {
        Tensor value;
        std::vector<int> parents;
        // Propagates grads_[self] into grads_[parent] and bound parameters.
        std::function<void(Graph&, int self)> backprop;
        Parameter* param = nullptr;
        std::string op;
    };

    NodeRef push(Node n);
    Tensor& grad(int idx);
    void check_finite(const Tensor& t, const char* op) const;

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    bool clamp_warning_ = false;

    friend struct GraphTestAccess;
};

// Raw (non-autodiff) forward convolutions; the graph ops call these and the
// direct test oracles compare against them.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor conv1d_temporal_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                               int pad);

// Checkpoint container: magic "R21W", version u32=1, count u32, then per
// parameter: u16 name length + name, u8 rank, dims u32, payload f32 LE.
void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params);
// Loads into matching parameters (by position); names and shapes must agree.
void load_checkpoint(const std::string& path, std::vector<Parameter*>& params);

}  // namespace svqa
