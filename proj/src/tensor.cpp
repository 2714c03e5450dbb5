#include "svqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace svqa {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ContractError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<int> shp) : shape(std::move(shp)) {
    data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
}

Tensor::Tensor(std::vector<int> shp, std::vector<float> values)
    : shape(std::move(shp)), data(std::move(values)) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ContractError("tensor data length does not match shape " + shape_str(shape));
}

Tensor Tensor::full(std::vector<int> shp, float v) {
    Tensor t(std::move(shp));
    t.fill(v);
    return t;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

int Tensor::dim(int i) const {
    if (i < 0 || i >= rank()) throw ContractError("tensor dim index out of range");
    return shape[i];
}

void Tensor::fill(float v) { std::fill(data.begin(), data.end(), v); }

bool Tensor::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

void zero_grads(std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->grad.fill(0.0f);
}

void sgd_step(std::vector<Parameter*>& params, float lr) {
    for (Parameter* p : params) {
        if (!p->grad.all_finite())
            throw NumericError("non-finite gradient in parameter '" + p->name + "'");
        for (size_t i = 0; i < p->value.data.size(); ++i)
            p->value.data[i] -= lr * p->grad.data[i];
    }
}

Tensor glorot_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
    Tensor t(std::move(shape));
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (float& v : t.data) v = static_cast<float>(rng.uniform(-limit, limit));
    return t;
}

// ---------------------------------------------------------------------------
// Raw convolutions. Reductions accumulate in double.

static int conv_out_size(int in, int k, int stride, int pad, const char* what) {
    if (stride < 1) throw ContractError(std::string(what) + ": stride must be >= 1");
    if (k > in + 2 * pad)
        throw ContractError(std::string(what) + ": kernel extent exceeds padded input");
    return (in + 2 * pad - k) / stride + 1;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ContractError("conv2d: input must be [N,C,H,W], kernel [M,C,kh,kw]");
    int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    int M = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    if (w.shape[1] != C)
        throw ContractError("conv2d: kernel channels " + std::to_string(w.shape[1]) +
                            " != input channels " + std::to_string(C));
    if (b.numel() != M) throw ContractError("conv2d: bias length must equal output channels");
    int Ho = conv_out_size(H, kh, stride, pad, "conv2d");
    int Wo = conv_out_size(W, kw, stride, pad, "conv2d");

    Tensor y({N, M, Ho, Wo});
    const float* xp = x.data.data();
    const float* wp = w.data.data();
    float* yp = y.data.data();
    for (int n = 0; n < N; ++n) {
        for (int m = 0; m < M; ++m) {
            const double bias = b.data[m];
            for (int oh = 0; oh < Ho; ++oh) {
                for (int ow = 0; ow < Wo; ++ow) {
                    double acc = bias;
                    const int ih0 = oh * stride - pad;
                    const int iw0 = ow * stride - pad;
                    for (int c = 0; c < C; ++c) {
                        const float* xrow = xp + ((static_cast<int64_t>(n) * C + c) * H) * W;
                        const float* wrow = wp + ((static_cast<int64_t>(m) * C + c) * kh) * kw;
                        for (int u = 0; u < kh; ++u) {
                            const int ih = ih0 + u;
                            if (ih < 0 || ih >= H) continue;
                            for (int v = 0; v < kw; ++v) {
                                const int iw = iw0 + v;
                                if (iw < 0 || iw >= W) continue;
                                acc += static_cast<double>(xrow[ih * W + iw]) * wrow[u * kw + v];
                            }
                        }
                    }
                    yp[((static_cast<int64_t>(n) * M + m) * Ho + oh) * Wo + ow] =
                        static_cast<float>(acc);
                }
            }
        }
    }
    return y;
}

Tensor conv1d_temporal_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                               int pad) {
    if (x.rank() != 4 || w.rank() != 3)
        throw ContractError("conv1d_temporal: input must be [N,C,F,L], kernel [M,C,t]");
    int N = x.shape[0], C = x.shape[1], F = x.shape[2], L = x.shape[3];
    int M = w.shape[0], t = w.shape[2];
    if (w.shape[1] != C) throw ContractError("conv1d_temporal: kernel/input channel mismatch");
    if (b.numel() != M)
        throw ContractError("conv1d_temporal: bias length must equal output channels");
    int Fo = conv_out_size(F, t, stride, pad, "conv1d_temporal");

    Tensor y({N, M, Fo, L});
    for (int n = 0; n < N; ++n) {
        for (int m = 0; m < M; ++m) {
            const double bias = b.data[m];
            for (int of = 0; of < Fo; ++of) {
                const int if0 = of * stride - pad;
                for (int l = 0; l < L; ++l) {
                    double acc = bias;
                    for (int c = 0; c < C; ++c) {
                        for (int u = 0; u < t; ++u) {
                            const int f = if0 + u;
                            if (f < 0 || f >= F) continue;
                            acc += static_cast<double>(
                                       x.data[((static_cast<int64_t>(n) * C + c) * F + f) * L +
                                              l]) *
                                   w.data[(static_cast<int64_t>(m) * C + c) * t + u];
                        }
                    }
                    y.data[((static_cast<int64_t>(n) * M + m) * Fo + of) * L + l] =
                        static_cast<float>(acc);
                }
            }
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// Graph

NodeRef Graph::push(Node n) {
    check_finite(n.value, n.op.c_str());
    nodes_.push_back(std::move(n));
    return NodeRef{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad(int idx) {
    if (grads_[idx].data.empty()) grads_[idx] = Tensor::zeros(nodes_[idx].value.shape);
    return grads_[idx];
}

void Graph::check_finite(const Tensor& t, const char* op) const {
    if (!t.all_finite()) throw NumericError(std::string("non-finite output of ") + op);
}

const Tensor& Graph::value(NodeRef r) const {
    if (r.idx < 0 || r.idx >= static_cast<int>(nodes_.size()))
        throw ContractError("invalid node reference");
    return nodes_[r.idx].value;
}

NodeRef Graph::leaf(Parameter& p) {
    if (!p.grad.same_shape(p.value)) p.grad = Tensor::zeros(p.value.shape);
    Node n;
    n.value = p.value;
    n.param = &p;
    n.op = "leaf:" + p.name;
    Parameter* param = &p;
    n.backprop = [param](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        for (size_t i = 0; i < go.data.size(); ++i) param->grad.data[i] += go.data[i];
    };
    return push(std::move(n));
}

NodeRef Graph::constant(Tensor t) {
    Node n;
    n.value = std::move(t);
    n.op = "constant";
    return push(std::move(n));
}

NodeRef Graph::conv2d(NodeRef x, NodeRef w, NodeRef b, int stride, int pad) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    Node n;
    n.value = conv2d_forward(xv, wv, bv, stride, pad);
    n.parents = {x.idx, w.idx, b.idx};
    n.op = "conv2d";
    int xi = x.idx, wi = w.idx, bi = b.idx;
    n.backprop = [xi, wi, bi, stride, pad](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        const Tensor& xv = g.nodes_[xi].value;
        const Tensor& wv = g.nodes_[wi].value;
        Tensor& gx = g.grad(xi);
        Tensor& gw = g.grad(wi);
        Tensor& gb = g.grad(bi);
        int N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
        int M = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3];
        int Ho = go.shape[2], Wo = go.shape[3];
        for (int n2 = 0; n2 < N; ++n2) {
            for (int m = 0; m < M; ++m) {
                for (int oh = 0; oh < Ho; ++oh) {
                    for (int ow = 0; ow < Wo; ++ow) {
                        const float g1 =
                            go.data[((static_cast<int64_t>(n2) * M + m) * Ho + oh) * Wo + ow];
                        if (g1 == 0.0f) continue;
                        gb.data[m] += g1;
                        const int ih0 = oh * stride - pad;
                        const int iw0 = ow * stride - pad;
                        for (int c = 0; c < C; ++c) {
                            float* gxrow =
                                gx.data.data() + ((static_cast<int64_t>(n2) * C + c) * H) * W;
                            const float* xrow =
                                xv.data.data() + ((static_cast<int64_t>(n2) * C + c) * H) * W;
                            float* gwrow =
                                gw.data.data() + ((static_cast<int64_t>(m) * C + c) * kh) * kw;
                            const float* wrow =
                                wv.data.data() + ((static_cast<int64_t>(m) * C + c) * kh) * kw;
                            for (int u = 0; u < kh; ++u) {
                                const int ih = ih0 + u;
                                if (ih < 0 || ih >= H) continue;
                                for (int v = 0; v < kw; ++v) {
                                    const int iw = iw0 + v;
                                    if (iw < 0 || iw >= W) continue;
                                    gxrow[ih * W + iw] += g1 * wrow[u * kw + v];
                                    gwrow[u * kw + v] += g1 * xrow[ih * W + iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    };
    return push(std::move(n));
}

NodeRef Graph::conv1d_temporal(NodeRef x, NodeRef w, NodeRef b, int stride, int pad) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(b);
    Node n;
    n.value = conv1d_temporal_forward(xv, wv, bv, stride, pad);
    n.parents = {x.idx, w.idx, b.idx};
    n.op = "conv1d_temporal";
    int xi = x.idx, wi = w.idx, bi = b.idx;
    n.backprop = [xi, wi, bi, stride, pad](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        const Tensor& xv = g.nodes_[xi].value;
        const Tensor& wv = g.nodes_[wi].value;
        Tensor& gx = g.grad(xi);
        Tensor& gw = g.grad(wi);
        Tensor& gb = g.grad(bi);
        int N = xv.shape[0], C = xv.shape[1], F = xv.shape[2], L = xv.shape[3];
        int M = wv.shape[0], t = wv.shape[2];
        int Fo = go.shape[2];
        for (int n2 = 0; n2 < N; ++n2) {
            for (int m = 0; m < M; ++m) {
                for (int of = 0; of < Fo; ++of) {
                    const int if0 = of * stride - pad;
                    for (int l = 0; l < L; ++l) {
                        const float g1 =
                            go.data[((static_cast<int64_t>(n2) * M + m) * Fo + of) * L + l];
                        if (g1 == 0.0f) continue;
                        gb.data[m] += g1;
                        for (int c = 0; c < C; ++c) {
                            for (int u = 0; u < t; ++u) {
                                const int f = if0 + u;
                                if (f < 0 || f >= F) continue;
                                const int64_t xoff =
                                    ((static_cast<int64_t>(n2) * C + c) * F + f) * L + l;
                                const int64_t woff =
                                    (static_cast<int64_t>(m) * C + c) * t + u;
                                gx.data[xoff] += g1 * wv.data[woff];
                                gw.data[woff] += g1 * xv.data[xoff];
                            }
                        }
                    }
                }
            }
        }
    };
    return push(std::move(n));
}

NodeRef Graph::relu(NodeRef x) {
    const Tensor& xv = value(x);
    Node n;
    n.value = xv;
    for (float& v : n.value.data) v = std::max(v, 0.0f);
    n.parents = {x.idx};
    n.op = "relu";
    int xi = x.idx;
    n.backprop = [xi](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        const Tensor& xv = g.nodes_[xi].value;
        Tensor& gx = g.grad(xi);
        for (size_t i = 0; i < go.data.size(); ++i)
            if (xv.data[i] > 0.0f) gx.data[i] += go.data[i];
    };
    return push(std::move(n));
}

NodeRef Graph::linear(NodeRef x, NodeRef w, NodeRef b) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    if (xv.rank() != 2 || wv.rank() != 2 || xv.shape[1] != wv.shape[0])
        throw ContractError("linear: need x[N,K] and w[K,M]");
    int N = xv.shape[0], K = xv.shape[1], M = wv.shape[1];
    const float* bp = nullptr;
    if (b.valid()) {
        const Tensor& bv = value(b);
        if (bv.numel() != M) throw ContractError("linear: bias length mismatch");
        bp = bv.data.data();
    }
    Node n;
    n.value = Tensor({N, M});
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < M; ++j) {
            double acc = bp ? bp[j] : 0.0;
            for (int k = 0; k < K; ++k)
                acc += static_cast<double>(xv.data[i * K + k]) * wv.data[k * M + j];
            n.value.data[i * M + j] = static_cast<float>(acc);
        }
    }
    n.parents = b.valid() ? std::vector<int>{x.idx, w.idx, b.idx}
                          : std::vector<int>{x.idx, w.idx};
    n.op = "linear";
    int xi = x.idx, wi = w.idx, bi = b.valid() ? b.idx : -1;
    n.backprop = [xi, wi, bi](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        const Tensor& xv = g.nodes_[xi].value;
        const Tensor& wv = g.nodes_[wi].value;
        Tensor& gx = g.grad(xi);
        Tensor& gw = g.grad(wi);
        int N = xv.shape[0], K = xv.shape[1], M = wv.shape[1];
        for (int i = 0; i < N; ++i) {
            for (int j = 0; j < M; ++j) {
                const float g1 = go.data[i * M + j];
                if (g1 == 0.0f) continue;
                for (int k = 0; k < K; ++k) {
                    gx.data[i * K + k] += g1 * wv.data[k * M + j];
                    gw.data[k * M + j] += g1 * xv.data[i * K + k];
                }
            }
        }
        if (bi >= 0) {
            Tensor& gb = g.grad(bi);
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < M; ++j) gb.data[j] += go.data[i * M + j];
        }
    };
    return push(std::move(n));
}

NodeRef Graph::softmax(NodeRef x) {
    const Tensor& xv = value(x);
    if (xv.rank() != 2) throw ContractError("softmax: need [N,K]");
    int N = xv.shape[0], K = xv.shape[1];
    Node n;
    n.value = Tensor({N, K});
    for (int i = 0; i < N; ++i) {
        float mx = xv.data[i * K];
        for (int k = 1; k < K; ++k) mx = std::max(mx, xv.data[i * K + k]);
        double denom = 0.0;
        for (int k = 0; k < K; ++k) {
            float e = std::exp(xv.data[i * K + k] - mx);
            n.value.data[i * K + k] = e;
            denom += e;
        }
        for (int k = 0; k < K; ++k)
            n.value.data[i * K + k] = static_cast<float>(n.value.data[i * K + k] / denom);
    }
    n.parents = {x.idx};
    n.op = "softmax";
    int xi = x.idx;
    n.backprop = [xi](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        const Tensor& yv = g.nodes_[self].value;
        Tensor& gx = g.grad(xi);
        int N = yv.shape[0], K = yv.shape[1];
        for (int i = 0; i < N; ++i) {
            double dot = 0.0;
            for (int k = 0; k < K; ++k)
                dot += static_cast<double>(go.data[i * K + k]) * yv.data[i * K + k];
            for (int k = 0; k < K; ++k)
                gx.data[i * K + k] += static_cast<float>(
                    yv.data[i * K + k] * (go.data[i * K + k] - dot));
        }
    };
    return push(std::move(n));
}

NodeRef Graph::cross_entropy(NodeRef probs, const std::vector<int>& labels) {
    const Tensor& pv = value(probs);
    if (pv.rank() != 2) throw ContractError("cross_entropy: need probs[N,K]");
    int N = pv.shape[0], K = pv.shape[1];
    if (static_cast<int>(labels.size()) != N)
        throw ContractError("cross_entropy: one label per row required");
    constexpr float kClamp = 1e-12f;
    double acc = 0.0;
    for (int i = 0; i < N; ++i) {
        if (labels[i] < 0 || labels[i] >= K)
            throw ContractError("cross_entropy: label " + std::to_string(labels[i]) +
                                " out of range [0," + std::to_string(K) + ")");
        float p = pv.data[i * K + labels[i]];
        if (p < kClamp) {
            clamp_warning_ = true;
            p = kClamp;
        }
        acc -= std::log(static_cast<double>(p));
    }
    Node n;
    n.value = Tensor::scalar(static_cast<float>(acc / N));
    n.parents = {probs.idx};
    n.op = "cross_entropy";
    int pi = probs.idx;
    std::vector<int> lab = labels;
    n.backprop = [pi, lab](Graph& g, int self) {
        const float gscale = g.grads_[self].data[0];
        const Tensor& pv = g.nodes_[pi].value;
        Tensor& gp = g.grad(pi);
        int N = pv.shape[0], K = pv.shape[1];
        for (int i = 0; i < N; ++i) {
            float p = pv.data[i * K + lab[i]];
            if (p < 1e-12f) continue;  // clamped region, zero slope
            gp.data[i * K + lab[i]] += gscale * (-1.0f / (N * p));
        }
    };
    return push(std::move(n));
}

NodeRef Graph::reshape(NodeRef x, std::vector<int> new_shape) {
    const Tensor& xv = value(x);
    if (shape_numel(new_shape) != xv.numel())
        throw ContractError("reshape: element count mismatch " + shape_str(xv.shape) + " -> " +
                            shape_str(new_shape));
    Node n;
    n.value = Tensor(std::move(new_shape), xv.data);
    n.parents = {x.idx};
    n.op = "reshape";
    int xi = x.idx;
    n.backprop = [xi](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        Tensor& gx = g.grad(xi);
        for (size_t i = 0; i < go.data.size(); ++i) gx.data[i] += go.data[i];
    };
    return push(std::move(n));
}

namespace {
// Row-major strides for a shape.
std::vector<int64_t> strides_of(const std::vector<int>& shape) {
    std::vector<int64_t> st(shape.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        st[i] = acc;
        acc *= shape[i];
    }
    return st;
}

// dst axis a takes its coordinate from src axis perm[a].
void permute_copy(const Tensor& src, Tensor& dst, const std::vector<int>& perm) {
    const auto dst_st = strides_of(dst.shape);
    const int r = src.rank();
    std::vector<int> idx(r, 0);
    const int64_t n = src.numel();
    for (int64_t flat = 0; flat < n; ++flat) {
        int64_t doff = 0;
        for (int a = 0; a < r; ++a) doff += static_cast<int64_t>(idx[perm[a]]) * dst_st[a];
        dst.data[static_cast<size_t>(doff)] = src.data[static_cast<size_t>(flat)];
        for (int a = r - 1; a >= 0; --a) {
            if (++idx[a] < src.shape[a]) break;
            idx[a] = 0;
        }
    }
}
}  // namespace

NodeRef Graph::permute(NodeRef x, const std::vector<int>& perm) {
    const Tensor& xv = value(x);
    if (static_cast<int>(perm.size()) != xv.rank())
        throw ContractError("permute: axis list must cover every axis");
    std::vector<int> new_shape(perm.size());
    std::vector<char> seen(perm.size(), 0);
    for (size_t a = 0; a < perm.size(); ++a) {
        if (perm[a] < 0 || perm[a] >= xv.rank() || seen[perm[a]])
            throw ContractError("permute: invalid axis permutation");
        seen[perm[a]] = 1;
        new_shape[a] = xv.shape[perm[a]];
    }
    Node n;
    n.value = Tensor(new_shape);
    permute_copy(xv, n.value, perm);
    n.parents = {x.idx};
    n.op = "permute";
    int xi = x.idx;
    std::vector<int> p = perm;
    n.backprop = [xi, p](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        Tensor& gx = g.grad(xi);
        // inverse permutation: output axis a came from input axis p[a]
        std::vector<int> inv(p.size());
        for (size_t a = 0; a < p.size(); ++a) inv[p[a]] = static_cast<int>(a);
        Tensor tmp(gx.shape);
        permute_copy(go, tmp, inv);
        for (size_t i = 0; i < tmp.data.size(); ++i) gx.data[i] += tmp.data[i];
    };
    return push(std::move(n));
}

NodeRef Graph::gather_frames(NodeRef x, const std::vector<int>& frames) {
    const Tensor& xv = value(x);
    if (xv.rank() < 2) throw ContractError("gather_frames: rank must be >= 2");
    int C = xv.shape[0], F = xv.shape[1];
    int64_t inner = xv.numel() / (static_cast<int64_t>(C) * F);
    for (int f : frames)
        if (f < 0 || f >= F) throw ContractError("gather_frames: frame index out of range");
    std::vector<int> new_shape = xv.shape;
    new_shape[1] = static_cast<int>(frames.size());
    Node n;
    n.value = Tensor(new_shape);
    for (int c = 0; c < C; ++c)
        for (size_t i = 0; i < frames.size(); ++i)
            std::memcpy(n.value.data.data() + (c * frames.size() + i) * inner,
                        xv.data.data() + (static_cast<int64_t>(c) * F + frames[i]) * inner,
                        sizeof(float) * static_cast<size_t>(inner));
    n.parents = {x.idx};
    n.op = "gather_frames";
    int xi = x.idx;
    std::vector<int> fr = frames;
    n.backprop = [xi, fr, inner](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        Tensor& gx = g.grad(xi);
        const int C = gx.shape[0], F = gx.shape[1];
        for (int c = 0; c < C; ++c)
            for (size_t i = 0; i < fr.size(); ++i) {
                const float* src = go.data.data() + (c * fr.size() + i) * inner;
                float* dst = gx.data.data() + (static_cast<int64_t>(c) * F + fr[i]) * inner;
                for (int64_t k = 0; k < inner; ++k) dst[k] += src[k];
            }
    };
    return push(std::move(n));
}

NodeRef Graph::mean_frames(NodeRef x) {
    const Tensor& xv = value(x);
    if (xv.rank() < 2) throw ContractError("mean_frames: rank must be >= 2");
    int C = xv.shape[0], F = xv.shape[1];
    int64_t inner = xv.numel() / (static_cast<int64_t>(C) * F);
    std::vector<int> new_shape;
    new_shape.push_back(C);
    for (int i = 2; i < xv.rank(); ++i) new_shape.push_back(xv.shape[i]);
    Node n;
    n.value = Tensor(new_shape);
    for (int c = 0; c < C; ++c) {
        for (int64_t k = 0; k < inner; ++k) {
            double acc = 0.0;
            for (int f = 0; f < F; ++f)
                acc += xv.data[(static_cast<int64_t>(c) * F + f) * inner + k];
            n.value.data[c * inner + k] = static_cast<float>(acc / F);
        }
    }
    n.parents = {x.idx};
    n.op = "mean_frames";
    int xi = x.idx;
    n.backprop = [xi, inner](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        Tensor& gx = g.grad(xi);
        int C = gx.shape[0], F = gx.shape[1];
        for (int c = 0; c < C; ++c)
            for (int64_t k = 0; k < inner; ++k) {
                const float gv = go.data[c * inner + k] / F;
                for (int f = 0; f < F; ++f)
                    gx.data[(static_cast<int64_t>(c) * F + f) * inner + k] += gv;
            }
    };
    return push(std::move(n));
}

NodeRef Graph::add(NodeRef a, NodeRef b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) throw ContractError("add: shape mismatch");
    Node n;
    n.value = av;
    for (size_t i = 0; i < bv.data.size(); ++i) n.value.data[i] += bv.data[i];
    n.parents = {a.idx, b.idx};
    n.op = "add";
    int ai = a.idx, bi = b.idx;
    n.backprop = [ai, bi](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        Tensor& ga = g.grad(ai);
        Tensor& gb = g.grad(bi);
        for (size_t i = 0; i < go.data.size(); ++i) {
            ga.data[i] += go.data[i];
            gb.data[i] += go.data[i];
        }
    };
    return push(std::move(n));
}

NodeRef Graph::mul(NodeRef a, NodeRef b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) throw ContractError("mul: shape mismatch");
    Node n;
    n.value = av;
    for (size_t i = 0; i < bv.data.size(); ++i) n.value.data[i] *= bv.data[i];
    n.parents = {a.idx, b.idx};
    n.op = "mul";
    int ai = a.idx, bi = b.idx;
    n.backprop = [ai, bi](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        const Tensor& av = g.nodes_[ai].value;
        const Tensor& bv = g.nodes_[bi].value;
        Tensor& ga = g.grad(ai);
        Tensor& gb = g.grad(bi);
        for (size_t i = 0; i < go.data.size(); ++i) {
            ga.data[i] += go.data[i] * bv.data[i];
            gb.data[i] += go.data[i] * av.data[i];
        }
    };
    return push(std::move(n));
}

NodeRef Graph::scale_add(NodeRef x, float k, float c) {
    const Tensor& xv = value(x);
    Node n;
    n.value = xv;
    for (float& v : n.value.data) v = k * v + c;
    n.parents = {x.idx};
    n.op = "scale_add";
    int xi = x.idx;
    n.backprop = [xi, k](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        Tensor& gx = g.grad(xi);
        for (size_t i = 0; i < go.data.size(); ++i) gx.data[i] += k * go.data[i];
    };
    return push(std::move(n));
}

NodeRef Graph::clamp01(NodeRef x) {
    const Tensor& xv = value(x);
    Node n;
    n.value = xv;
    for (float& v : n.value.data) v = std::clamp(v, 0.0f, 1.0f);
    n.parents = {x.idx};
    n.op = "clamp01";
    int xi = x.idx;
    n.backprop = [xi](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        const Tensor& xv = g.nodes_[xi].value;
        Tensor& gx = g.grad(xi);
        for (size_t i = 0; i < go.data.size(); ++i)
            if (xv.data[i] > 0.0f && xv.data[i] < 1.0f) gx.data[i] += go.data[i];
    };
    return push(std::move(n));
}

NodeRef Graph::sum(NodeRef x) {
    const Tensor& xv = value(x);
    double acc = 0.0;
    for (float v : xv.data) acc += v;
    Node n;
    n.value = Tensor::scalar(static_cast<float>(acc));
    n.parents = {x.idx};
    n.op = "sum";
    int xi = x.idx;
    n.backprop = [xi](Graph& g, int self) {
        const float gv = g.grads_[self].data[0];
        Tensor& gx = g.grad(xi);
        for (float& v : gx.data) v += gv;
    };
    return push(std::move(n));
}

NodeRef Graph::prod(NodeRef x) {
    const Tensor& xv = value(x);
    double acc = 1.0;
    for (float v : xv.data) acc *= v;
    Node n;
    n.value = Tensor::scalar(static_cast<float>(acc));
    n.parents = {x.idx};
    n.op = "prod";
    int xi = x.idx;
    n.backprop = [xi](Graph& g, int self) {
        const float gv = g.grads_[self].data[0];
        const Tensor& xv = g.nodes_[xi].value;
        Tensor& gx = g.grad(xi);
        const size_t n2 = xv.data.size();
        for (size_t i = 0; i < n2; ++i) {
            double loo = 1.0;  // leave-one-out product, exact at zeros
            for (size_t j = 0; j < n2; ++j)
                if (j != i) loo *= xv.data[j];
            gx.data[i] += static_cast<float>(gv * loo);
        }
    };
    return push(std::move(n));
}

NodeRef Graph::div_scalar(NodeRef x, NodeRef s) {
    const Tensor& xv = value(x);
    const Tensor& sv = value(s);
    if (sv.numel() != 1) throw ContractError("div_scalar: divisor must be a scalar node");
    if (sv.data[0] == 0.0f) throw NumericError("div_scalar: division by zero");
    Node n;
    n.value = xv;
    const float inv = 1.0f / sv.data[0];
    for (float& v : n.value.data) v *= inv;
    n.parents = {x.idx, s.idx};
    n.op = "div_scalar";
    int xi = x.idx, si = s.idx;
    n.backprop = [xi, si](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        const Tensor& xv = g.nodes_[xi].value;
        const float s = g.nodes_[si].value.data[0];
        Tensor& gx = g.grad(xi);
        Tensor& gs = g.grad(si);
        double sacc = 0.0;
        for (size_t i = 0; i < go.data.size(); ++i) {
            gx.data[i] += go.data[i] / s;
            sacc += static_cast<double>(go.data[i]) * xv.data[i];
        }
        gs.data[0] += static_cast<float>(-sacc / (static_cast<double>(s) * s));
    };
    return push(std::move(n));
}

NodeRef Graph::roi_pool(NodeRef x,
                        const std::vector<std::optional<std::array<float, 4>>>& boxes, int k) {
    const Tensor& xv = value(x);
    if (xv.rank() != 4) throw ContractError("roi_pool: features must be [C,F,H,W]");
    if (k < 1) throw ContractError("roi_pool: grid size must be >= 1");
    int C = xv.shape[0], F = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    if (static_cast<int>(boxes.size()) != F)
        throw ContractError("roi_pool: one box entry per frame required");

    Node n;
    n.value = Tensor({C, F, k, k});
    // argmax flat index into x per output cell; -1 for invisible frames
    std::vector<int64_t> argmax(static_cast<size_t>(C) * F * k * k, -1);
    for (int f = 0; f < F; ++f) {
        if (!boxes[f].has_value()) continue;
        const auto& bx = *boxes[f];
        float x0 = std::clamp(bx[0], 0.0f, static_cast<float>(W - 1));
        float y0 = std::clamp(bx[1], 0.0f, static_cast<float>(H - 1));
        float x1 = std::clamp(bx[2], x0, static_cast<float>(W));
        float y1 = std::clamp(bx[3], y0, static_cast<float>(H));
        for (int gy = 0; gy < k; ++gy) {
            int cy0 = static_cast<int>(std::floor(y0 + (y1 - y0) * gy / k));
            int cy1 = static_cast<int>(std::ceil(y0 + (y1 - y0) * (gy + 1) / k));
            cy0 = std::clamp(cy0, 0, H - 1);
            cy1 = std::clamp(cy1, cy0 + 1, H);  // degenerate box: duplicate nearest cell
            for (int gx = 0; gx < k; ++gx) {
                int cx0 = static_cast<int>(std::floor(x0 + (x1 - x0) * gx / k));
                int cx1 = static_cast<int>(std::ceil(x0 + (x1 - x0) * (gx + 1) / k));
                cx0 = std::clamp(cx0, 0, W - 1);
                cx1 = std::clamp(cx1, cx0 + 1, W);
                for (int c = 0; c < C; ++c) {
                    float best = -std::numeric_limits<float>::infinity();
                    int64_t besti = -1;
                    for (int yy = cy0; yy < cy1; ++yy)
                        for (int xx = cx0; xx < cx1; ++xx) {
                            int64_t off =
                                ((static_cast<int64_t>(c) * F + f) * H + yy) * W + xx;
                            if (xv.data[off] > best) {
                                best = xv.data[off];
                                besti = off;
                            }
                        }
                    int64_t oo = ((static_cast<int64_t>(c) * F + f) * k + gy) * k + gx;
                    n.value.data[oo] = best;
                    argmax[oo] = besti;
                }
            }
        }
    }
    n.parents = {x.idx};
    n.op = "roi_pool";
    int xi = x.idx;
    n.backprop = [xi, argmax](Graph& g, int self) {
        const Tensor& go = g.grads_[self];
        Tensor& gx = g.grad(xi);
        for (size_t i = 0; i < go.data.size(); ++i)
            if (argmax[i] >= 0) gx.data[static_cast<size_t>(argmax[i])] += go.data[i];
    };
    return push(std::move(n));
}

void Graph::backward(NodeRef loss) {
    if (loss.idx < 0 || loss.idx >= static_cast<int>(nodes_.size()))
        throw ContractError("backward: invalid loss node");
    if (nodes_[loss.idx].value.numel() != 1)
        throw ContractError("backward: loss must be a scalar");
    grads_.assign(nodes_.size(), Tensor{});
    grad(loss.idx).data[0] = 1.0f;
    for (int i = loss.idx; i >= 0; --i) {
        if (grads_[i].data.empty()) continue;  // not on any path to the loss
        if (nodes_[i].backprop) nodes_[i].backprop(*this, i);
    }
    grads_.clear();
}

// ---------------------------------------------------------------------------
// Checkpoints

static constexpr char kCkptMagic[4] = {'R', '2', '1', 'W'};

void save_checkpoint(const std::string& path, const std::vector<Parameter*>& params) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kCkptMagic, kCkptMagic + 4);
    put_u32(out, 1u);
    put_u32(out, static_cast<uint32_t>(params.size()));
    for (const Parameter* p : params) {
        if (p->name.size() > 0xFFFF) throw ContractError("parameter name too long");
        put_u16(out, static_cast<uint16_t>(p->name.size()));
        out.insert(out.end(), p->name.begin(), p->name.end());
        out.push_back(static_cast<uint8_t>(p->value.rank()));
        for (int d : p->value.shape) put_u32(out, static_cast<uint32_t>(d));
        for (float v : p->value.data) put_f32(out, v);
    }
    write_file_bytes(path, out);
}

void load_checkpoint(const std::string& path, std::vector<Parameter*>& params) {
    const auto bytes = read_file_bytes(path);
    size_t pos = 0;
    auto need = [&](size_t n) {
        if (pos + n > bytes.size()) throw IoError("truncated checkpoint: " + path);
    };
    need(12);
    if (std::memcmp(bytes.data(), kCkptMagic, 4) != 0)
        throw IoError("bad checkpoint magic in " + path);
    pos = 4;
    uint32_t version = get_u32(bytes.data() + pos);
    pos += 4;
    if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version));
    uint32_t count = get_u32(bytes.data() + pos);
    pos += 4;
    if (count != params.size())
        throw IoError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                      std::to_string(params.size()));
    for (Parameter* p : params) {
        need(2);
        uint16_t name_len = get_u16(bytes.data() + pos);
        pos += 2;
        need(name_len);
        std::string name(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
        pos += name_len;
        if (name != p->name)
            throw IoError("checkpoint parameter '" + name + "' does not match model parameter '" +
                          p->name + "'");
        need(1);
        int rank = bytes[pos++];
        std::vector<int> shape(rank);
        need(static_cast<size_t>(rank) * 4);
        for (int i = 0; i < rank; ++i) {
            shape[i] = static_cast<int>(get_u32(bytes.data() + pos));
            pos += 4;
        }
        if (shape != p->value.shape)
            throw IoError("checkpoint shape " + shape_str(shape) + " for '" + name +
                          "' does not match model shape " + shape_str(p->value.shape));
        size_t n = static_cast<size_t>(shape_numel(shape));
        need(n * 4);
        for (size_t i = 0; i < n; ++i) {
            p->value.data[i] = get_f32(bytes.data() + pos);
            pos += 4;
        }
    }
    if (pos != bytes.size()) throw IoError("trailing bytes in checkpoint: " + path);
}

}  // namespace svqa
