#include "svqa/softexec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace svqa {

namespace {

constexpr double kPointerLeak = 1e-9;  // pointer mass a shift may silently drop
constexpr double kZeroMass = 1e-12;    // below this an attention counts as empty

double clamp_unit(double v) { return std::min(1.0, std::max(0.0, v)); }

// Canonical noun for a Count answer: the filters that narrowed the counted
// set, i.e. those after the last Relate (a Relate re-anchors, so filters
// before it describe the anchor, not the counted objects).
std::string derive_unit(const Program& p) {
    size_t start = 0;
    for (size_t i = 0; i < p.steps.size(); ++i)
        if (p.steps[i].kind == StepKind::Relate) start = i + 1;
    std::optional<Shape> shape;
    std::optional<Color> color;
    for (size_t i = start; i < p.steps.size(); ++i) {
        if (p.steps[i].kind == StepKind::FilterShape) shape = p.steps[i].shape;
        if (p.steps[i].kind == StepKind::FilterColor) color = p.steps[i].color;
    }
    std::string unit = color ? to_string(*color) + " " : "";
    unit += shape ? to_string(*shape) : "object";
    return unit;
}

int check_frame(int frame, int F) {
    if (frame < 0 || frame >= F)
        throw ContractError("frame " + std::to_string(frame) + " out of range for " +
                            std::to_string(F) + " frames");
    return frame;
}

// Terminal identity: inventory slot offset, answer kind, program step kind.
constexpr std::array<AnswerKind, 6> kTerminalKinds = {
    AnswerKind::Count,    AnswerKind::Bool,     AnswerKind::Color,
    AnswerKind::Shape,    AnswerKind::Location, AnswerKind::Actions,
};

int terminal_index(StepKind k) {
    switch (k) {
        case StepKind::Count: return 0;
        case StepKind::Exist: return 1;
        case StepKind::QueryColor: return 2;
        case StepKind::QueryShape: return 3;
        case StepKind::QueryLocation: return 4;
        case StepKind::QueryAction: return 5;
        default: throw ContractError("step is not a terminal");
    }
}

// Fills the register family of terminal t from a popped attention.
void reduce_terminal(SoftAnswer& out, int t, const Attention& att, const GraphEncoding& e,
                     int frame_ctx) {
    switch (t) {
        case 0: out.count = soft_count(att); break;
        case 1: out.exist = soft_exist(att); break;
        case 2: {
            bool degen = false;
            out.color_dist = soft_query(att, e.color_of, kNumColors, &degen);
            out.degenerate = out.degenerate || degen;
            break;
        }
        case 3: {
            bool degen = false;
            out.shape_dist = soft_query(att, e.shape_of, kNumShapes, &degen);
            out.degenerate = out.degenerate || degen;
            break;
        }
        case 4: {
            const double mass = soft_count(att);
            out.frame = frame_ctx;
            if (mass <= kZeroMass) {
                out.degenerate = true;
                out.px = out.py = 0.0;
                for (int i = 0; i < e.N; ++i) {
                    out.px += e.px[frame_ctx][i] / e.N;
                    out.py += e.py[frame_ctx][i] / e.N;
                }
            } else {
                out.px = out.py = 0.0;
                for (int i = 0; i < e.N; ++i) {
                    out.px += att[i] * e.px[frame_ctx][i] / mass;
                    out.py += att[i] * e.py[frame_ctx][i] / mass;
                }
            }
            break;
        }
        case 5: {
            const double mass = soft_count(att);
            out.action_presence = {};
            for (int i = 0; i < e.N; ++i)
                for (int k = 0; k < 4; ++k) {
                    const double w = mass <= kZeroMass ? 1.0 / std::max(1, e.N) : att[i] / mass;
                    out.action_presence[k] += w * e.has_action[i][k];
                }
            if (mass <= kZeroMass) out.degenerate = true;
            break;
        }
        default: throw ContractError("bad terminal index");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph encoding.

GraphEncoding encode_graph(const TemporalSceneGraph& g) {
    if (g.F <= 0) throw ContractError("graph has no frames");
    const int n = static_cast<int>(g.objects.size());
    GraphEncoding e;
    e.N = n;
    e.F = g.F;
    for (const ObjectTrack& o : g.objects) {
        if (static_cast<int>(o.frames.size()) != g.F)
            throw ContractError("object track length does not match frame count");
        e.shape_of.push_back(static_cast<int>(o.shape));
        e.color_of.push_back(static_cast<int>(o.color));
    }
    e.visible.assign(g.F, std::vector<double>(n, 0.0));
    e.px.assign(g.F, std::vector<double>(n, 0.0));
    e.py.assign(g.F, std::vector<double>(n, 0.0));
    for (int f = 0; f < g.F; ++f)
        for (int i = 0; i < n; ++i) {
            const FrameState& fs = g.objects[i].frames[f];
            e.visible[f][i] = fs.visible ? 1.0 : 0.0;
            e.px[f][i] = fs.px;
            e.py[f][i] = fs.py;
        }
    e.relation.resize(g.F);
    for (int f = 0; f < g.F; ++f)
        for (int r = 0; r < kNumRelations; ++r) {
            std::vector<double>& m = e.relation[f][r];
            m.assign(static_cast<size_t>(n) * n, 0.0);
            for (int x = 0; x < n; ++x)
                for (int a = 0; a < n; ++a) {
                    if (x == a || e.visible[f][x] == 0.0 || e.visible[f][a] == 0.0) continue;
                    if (spatial_relation(g, x, a, f, static_cast<Relation>(r)))
                        m[static_cast<size_t>(x) * n + a] = 1.0;
                }
        }
    e.has_action.assign(n, {});
    for (const GraphEvent& ev : g.events) {
        if (ev.subject < 0 || ev.subject >= n)
            throw ContractError("event subject out of range");
        e.has_action[ev.subject][static_cast<int>(ev.kind)] = 1.0;
    }
    return e;
}

Attention shape_indicator(const GraphEncoding& e, Shape s) {
    Attention out(e.N, 0.0);
    for (int i = 0; i < e.N; ++i) out[i] = e.shape_of[i] == static_cast<int>(s) ? 1.0 : 0.0;
    return out;
}

Attention color_indicator(const GraphEncoding& e, Color c) {
    Attention out(e.N, 0.0);
    for (int i = 0; i < e.N; ++i) out[i] = e.color_of[i] == static_cast<int>(c) ? 1.0 : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Soft modules.

Attention soft_filter(const Attention& att, const Attention& indicator) {
    if (att.size() != indicator.size()) throw ContractError("soft_filter width mismatch");
    Attention out(att.size());
    for (size_t i = 0; i < att.size(); ++i) out[i] = att[i] * indicator[i];
    return out;
}

Attention soft_relate(const Attention& anchor, const std::vector<double>& rel_matrix, int n) {
    if (static_cast<int>(anchor.size()) != n || rel_matrix.size() != static_cast<size_t>(n) * n)
        throw ContractError("soft_relate dimension mismatch");
    Attention out(anchor.size(), 0.0);
    for (int x = 0; x < n; ++x) {
        double acc = 0.0;
        for (int a = 0; a < n; ++a) acc += rel_matrix[static_cast<size_t>(x) * n + a] * anchor[a];
        out[x] = clamp_unit(acc);
    }
    return out;
}

double soft_count(const Attention& att) {
    return std::accumulate(att.begin(), att.end(), 0.0);
}

double soft_exist(const Attention& att) {
    double none = 1.0;
    for (double a : att) none *= 1.0 - a;
    return 1.0 - none;
}

std::vector<double> soft_query(const Attention& att, const std::vector<int>& labels,
                               int n_values, bool* degenerate) {
    if (n_values <= 0) throw ContractError("soft_query needs a positive value count");
    if (att.size() != labels.size()) throw ContractError("soft_query width mismatch");
    std::vector<double> mass(n_values, 0.0);
    for (size_t i = 0; i < att.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_values)
            throw ContractError("soft_query label out of range");
        mass[labels[i]] += att[i];
    }
    const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
    if (total <= kZeroMass) {
        if (degenerate) *degenerate = true;
        return std::vector<double>(n_values, 1.0 / n_values);
    }
    for (double& m : mass) m /= total;
    return mass;
}

// ---------------------------------------------------------------------------
// Soft stack.

SoftStack::SoftStack(int width, int depth) : width_(width), depth_(depth) {
    if (width < 0) throw ContractError("soft stack width must be non-negative");
    if (depth < 2) throw ContractError("soft stack needs the empty marker plus one slot");
    slots_.assign(depth, Attention(width, 0.0));
    pointer_.assign(depth, 0.0);
    pointer_[0] = 1.0;
}

void SoftStack::push(const Attention& att) {
    if (static_cast<int>(att.size()) != width_)
        throw ContractError("soft stack push width mismatch");
    // Advancing the pointer would drop whatever mass sits on the last slot.
    if (pointer_[depth_ - 1] > kPointerLeak) throw ContractError("soft stack overflow");
    for (int d = depth_ - 1; d >= 1; --d) pointer_[d] = pointer_[d - 1];
    pointer_[0] = 0.0;
    for (int d = 0; d < depth_; ++d) {
        const double w = pointer_[d];
        if (w == 0.0) continue;
        Attention& slot = slots_[d];
        for (int i = 0; i < width_; ++i) slot[i] = w * att[i] + (1.0 - w) * slot[i];
    }
}

Attention SoftStack::peek() const {
    Attention out(width_, 0.0);
    for (int d = 0; d < depth_; ++d) {
        const double w = pointer_[d];
        if (w == 0.0) continue;
        for (int i = 0; i < width_; ++i) out[i] += w * slots_[d][i];
    }
    return out;
}

Attention SoftStack::pop() {
    // Retreating past the empty marker would drop the mass resting on it.
    if (pointer_[0] > kPointerLeak) throw ContractError("soft stack underflow");
    Attention value = peek();
    for (int d = 0; d + 1 < depth_; ++d) pointer_[d] = pointer_[d + 1];
    pointer_[depth_ - 1] = 0.0;
    return value;
}

double SoftStack::pointer_sum() const {
    return std::accumulate(pointer_.begin(), pointer_.end(), 0.0);
}

SoftStack SoftStack::mix(const std::vector<double>& weights,
                         const std::vector<SoftStack>& states) {
    if (states.empty() || weights.size() != states.size())
        throw ContractError("soft stack mix needs one weight per state");
    SoftStack out(states[0].width_, states[0].depth_);
    std::fill(out.pointer_.begin(), out.pointer_.end(), 0.0);
    for (size_t s = 0; s < states.size(); ++s) {
        const SoftStack& st = states[s];
        if (st.width_ != out.width_ || st.depth_ != out.depth_)
            throw ContractError("soft stack mix dimension mismatch");
        for (int d = 0; d < out.depth_; ++d) {
            out.pointer_[d] += weights[s] * st.pointer_[d];
            for (int i = 0; i < out.width_; ++i)
                out.slots_[d][i] += weights[s] * st.slots_[d][i];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Answers.

Answer harden_answer(const SoftAnswer& s) {
    Answer a;
    a.kind = s.kind;
    switch (s.kind) {
        case AnswerKind::None: throw ContractError("soft answer has no terminal");
        case AnswerKind::Count:
            a.count = static_cast<int>(std::llround(std::max(0.0, s.count)));
            a.unit = s.unit;
            break;
        case AnswerKind::Bool: a.truth = s.exist > 0.5; break;
        case AnswerKind::Color: {
            if (s.color_dist.size() != kNumColors)
                throw ContractError("soft color answer has no distribution");
            const auto it = std::max_element(s.color_dist.begin(), s.color_dist.end());
            a.color = static_cast<Color>(it - s.color_dist.begin());
            break;
        }
        case AnswerKind::Shape: {
            if (s.shape_dist.size() != kNumShapes)
                throw ContractError("soft shape answer has no distribution");
            const auto it = std::max_element(s.shape_dist.begin(), s.shape_dist.end());
            a.shape = static_cast<Shape>(it - s.shape_dist.begin());
            break;
        }
        case AnswerKind::Location:
            a.frame = s.frame;
            a.px = s.px;
            a.py = s.py;
            break;
        case AnswerKind::Actions:
            for (int k = 0; k < 4; ++k)
                if (s.action_presence[k] > 0.5) a.actions.push_back(static_cast<EventKind>(k));
            break;
    }
    return a;
}

// ---------------------------------------------------------------------------
// Symbolic executor.

Answer exec_symbolic(const Program& p, const TemporalSceneGraph& g) {
    validate_program(p);
    const int n = static_cast<int>(g.objects.size());
    std::vector<std::vector<int>> sets(p.steps.size());
    std::vector<int> cur(n);
    std::iota(cur.begin(), cur.end(), 0);
    int frame_ctx = 0;
    Answer out;
    for (size_t i = 0; i < p.steps.size(); ++i) {
        const ProgramStep& s = p.steps[i];
        switch (s.kind) {
            case StepKind::FilterShape: {
                std::vector<int> next;
                for (int x : cur)
                    if (g.objects[x].shape == s.shape) next.push_back(x);
                cur = std::move(next);
                break;
            }
            case StepKind::FilterColor: {
                std::vector<int> next;
                for (int x : cur)
                    if (g.objects[x].color == s.color) next.push_back(x);
                cur = std::move(next);
                break;
            }
            case StepKind::AtFrame:
                frame_ctx = check_frame(s.frame, g.F);
                break;
            case StepKind::Relate: {
                const std::vector<int>& anchor_set = sets[s.anchor];
                if (anchor_set.size() != 1)
                    throw AmbiguousReferentError("relate anchor matches " +
                                                 std::to_string(anchor_set.size()) +
                                                 " objects, need exactly one");
                const int a = anchor_set[0];
                if (!g.objects[a].frames[frame_ctx].visible)
                    throw RelationUndefinedError("object " + std::to_string(a) +
                                                 " not visible at frame " +
                                                 std::to_string(frame_ctx));
                std::vector<int> next;
                for (int x = 0; x < n; ++x) {
                    if (x == a || !g.objects[x].frames[frame_ctx].visible) continue;
                    if (spatial_relation(g, x, a, frame_ctx, s.rel)) next.push_back(x);
                }
                cur = std::move(next);
                break;
            }
            case StepKind::Count:
                out.kind = AnswerKind::Count;
                out.count = static_cast<int>(cur.size());
                out.unit = derive_unit(p);
                break;
            case StepKind::Exist:
                out.kind = AnswerKind::Bool;
                out.truth = !cur.empty();
                break;
            default: {
                if (cur.size() != 1)
                    throw AmbiguousReferentError("query needs exactly one referent, matched " +
                                                 std::to_string(cur.size()));
                const int x = cur[0];
                switch (s.kind) {
                    case StepKind::QueryColor:
                        out.kind = AnswerKind::Color;
                        out.color = g.objects[x].color;
                        break;
                    case StepKind::QueryShape:
                        out.kind = AnswerKind::Shape;
                        out.shape = g.objects[x].shape;
                        break;
                    case StepKind::QueryLocation: {
                        out.kind = AnswerKind::Location;
                        out.frame = frame_ctx;
                        const auto [px, py] = location_of(g, x, frame_ctx);
                        out.px = px;
                        out.py = py;
                        break;
                    }
                    case StepKind::QueryAction: {
                        out.kind = AnswerKind::Actions;
                        std::array<bool, 4> seen{};
                        for (const GraphEvent& ev : actions_of(g, x))
                            seen[static_cast<int>(ev.kind)] = true;
                        for (int k = 0; k < 4; ++k)
                            if (seen[k]) out.actions.push_back(static_cast<EventKind>(k));
                        break;
                    }
                    default: throw ContractError("unreachable step kind");
                }
            }
        }
        sets[i] = cur;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hard-module soft executor.

SoftAnswer exec_soft(const Program& p, const GraphEncoding& e, const SoftExecOptions& opt) {
    validate_program(p);
    SoftStack st(e.N, opt.stack_depth);
    st.push(Attention(e.N, 1.0));  // the universe seeds the stack
    std::vector<int> slot_of(p.steps.size(), -1);
    int top_slot = 1;
    int frame_ctx = 0;
    SoftAnswer out;
    for (size_t i = 0; i < p.steps.size(); ++i) {
        const ProgramStep& s = p.steps[i];
        switch (s.kind) {
            case StepKind::FilterShape:
            case StepKind::FilterColor: {
                const Attention ind = s.kind == StepKind::FilterShape
                                          ? shape_indicator(e, s.shape)
                                          : color_indicator(e, s.color);
                st.push(soft_filter(st.peek(), ind));
                slot_of[i] = ++top_slot;
                break;
            }
            case StepKind::AtFrame:
                frame_ctx = check_frame(s.frame, e.F);
                break;
            case StepKind::Relate: {
                const Attention& anchor = st.slot(slot_of[s.anchor]);
                st.push(soft_relate(anchor, e.relation[frame_ctx][static_cast<int>(s.rel)],
                                    e.N));
                slot_of[i] = ++top_slot;
                break;
            }
            default: {
                const Attention att = st.pop();
                const int t = terminal_index(s.kind);
                reduce_terminal(out, t, att, e, frame_ctx);
                out.kind = kTerminalKinds[t];
                out.terminal_weights[t] = 1.0;
                if (s.kind == StepKind::Count) out.unit = derive_unit(p);
            }
        }
    }
    return out;
}

SoftAnswer exec_soft(const Program& p, const TemporalSceneGraph& g, const SoftExecOptions& opt) {
    return exec_soft(p, encode_graph(g), opt);
}

// ---------------------------------------------------------------------------
// Blended executor (numeric).

namespace {

// Applies inventory module m to the stack in place; terminals report their
// reduction through `readout` when one is wanted.
void apply_module(int m, SoftStack& st, const GraphEncoding& e, int frame_ctx,
                  SoftAnswer* readout) {
    if (m == 0) return;  // NoOp
    if (m <= 3) {
        st.push(soft_filter(st.peek(), shape_indicator(e, static_cast<Shape>(m - 1))));
        return;
    }
    if (m <= 9) {
        st.push(soft_filter(st.peek(), color_indicator(e, static_cast<Color>(m - 4))));
        return;
    }
    if (m <= 14) {
        st.push(soft_relate(st.peek(), e.relation[frame_ctx][m - 10], e.N));
        return;
    }
    const Attention att = st.pop();
    if (readout) reduce_terminal(*readout, m - kFirstTerminalModule, att, e, frame_ctx);
}

int module_index_of(const ProgramStep& s) {
    switch (s.kind) {
        case StepKind::FilterShape: return 1 + static_cast<int>(s.shape);
        case StepKind::FilterColor: return 4 + static_cast<int>(s.color);
        case StepKind::Relate: return 10 + static_cast<int>(s.rel);
        case StepKind::AtFrame: return 0;
        default: return kFirstTerminalModule + terminal_index(s.kind);
    }
}

}  // namespace

BlendedWeights delta_weights_for(const Program& p, int* frame_ctx) {
    validate_program(p);
    if (frame_ctx) *frame_ctx = 0;
    BlendedWeights w;
    int last_set_step = -1;
    for (size_t i = 0; i < p.steps.size(); ++i) {
        const ProgramStep& s = p.steps[i];
        if (s.kind == StepKind::Relate && s.anchor != last_set_step)
            throw ContractError(
                "blended relate anchors on the stack top; this program relates a deeper step");
        if (s.kind == StepKind::AtFrame && frame_ctx) *frame_ctx = s.frame;
        if (s.kind == StepKind::FilterShape || s.kind == StepKind::FilterColor ||
            s.kind == StepKind::Relate)
            last_set_step = static_cast<int>(i);
        std::array<double, kNumModules> row{};
        row[module_index_of(s)] = 1.0;
        w.rows.push_back(row);
    }
    return w;
}

SoftAnswer exec_soft_blended(const BlendedWeights& w, const GraphEncoding& e, int frame_ctx,
                             const SoftExecOptions& opt) {
    if (w.rows.empty()) throw ContractError("blended schedule has no steps");
    for (const auto& row : w.rows) {
        double total = 0.0;
        for (double v : row) {
            if (v < 0.0) throw ContractError("blended weights must be non-negative");
            total += v;
        }
        if (std::abs(total - 1.0) > 1e-6)
            throw ContractError("blended weight row must sum to one");
    }
    check_frame(frame_ctx, e.F);
    SoftStack st(e.N, opt.stack_depth);
    st.push(Attention(e.N, 1.0));
    SoftAnswer out;
    for (size_t si = 0; si < w.rows.size(); ++si) {
        const auto& row = w.rows[si];
        const bool final_step = si + 1 == w.rows.size();
        std::vector<double> weights;
        std::vector<SoftStack> states;
        double terminal_total = 0.0;
        for (int m = 0; m < kNumModules; ++m) {
            if (row[m] == 0.0) continue;
            SoftStack cur = st;
            const bool terminal = m >= kFirstTerminalModule;
            apply_module(m, cur, e, frame_ctx, terminal && final_step ? &out : nullptr);
            if (terminal && final_step) {
                out.terminal_weights[m - kFirstTerminalModule] = row[m];
                terminal_total += row[m];
            }
            weights.push_back(row[m]);
            states.push_back(std::move(cur));
        }
        if (final_step) {
            if (terminal_total <= kPointerLeak)
                throw ContractError("final blended step carries no terminal weight");
            int best = 0;
            for (int t = 0; t < 6; ++t) {
                out.terminal_weights[t] /= terminal_total;
                if (out.terminal_weights[t] > out.terminal_weights[best]) best = t;
            }
            out.kind = kTerminalKinds[best];
            // A weight schedule carries no lexical trace of what was counted.
            if (out.kind == AnswerKind::Count) out.unit = "object";
        } else {
            st = SoftStack::mix(weights, states);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Blended executor on the autodiff graph.

namespace {

struct GraphState {
    NodeRef slots;  // [D, N]
    NodeRef ptr;    // [1, D]
};

struct GraphConsts {
    int n = 0, depth = 0;
    NodeRef shift_push, shift_pop;  // [D, D]
    NodeRef ones_row;               // [1, N]
    std::array<NodeRef, kNumShapes> shape_ind;
    std::array<NodeRef, kNumColors> color_ind;
    std::array<NodeRef, kNumRelations> relate_t;  // [N, N], transposed
    NodeRef shape_onehot, color_onehot;           // [N, 3], [N, 6]
    NodeRef loc, act;                             // [N, 2], [N, 4]
    NodeRef eps;                                  // [1] normalizer guard
};

GraphConsts build_consts(Graph& gr, const GraphEncoding& e, int frame_ctx, int depth) {
    GraphConsts c;
    c.n = e.N;
    c.depth = depth;
    Tensor shift_push({depth, depth}), shift_pop({depth, depth});
    for (int d = 0; d + 1 < depth; ++d) {
        shift_push.data[d * depth + d + 1] = 1.0f;  // ptr row vector moves right
        shift_pop.data[(d + 1) * depth + d] = 1.0f;
    }
    c.shift_push = gr.constant(std::move(shift_push));
    c.shift_pop = gr.constant(std::move(shift_pop));
    c.ones_row = gr.constant(Tensor::full({1, std::max(1, e.N)}, 1.0f));
    auto row_of = [&](const Attention& a) {
        Tensor t({1, std::max(1, e.N)});
        for (int i = 0; i < e.N; ++i) t.data[i] = static_cast<float>(a[i]);
        return gr.constant(std::move(t));
    };
    for (int s = 0; s < kNumShapes; ++s)
        c.shape_ind[s] = row_of(shape_indicator(e, static_cast<Shape>(s)));
    for (int k = 0; k < kNumColors; ++k)
        c.color_ind[k] = row_of(color_indicator(e, static_cast<Color>(k)));
    for (int r = 0; r < kNumRelations; ++r) {
        Tensor t({std::max(1, e.N), std::max(1, e.N)});
        const std::vector<double>& m = e.relation[frame_ctx][r];
        for (int x = 0; x < e.N; ++x)
            for (int a = 0; a < e.N; ++a)
                t.data[a * e.N + x] = static_cast<float>(m[static_cast<size_t>(x) * e.N + a]);
        c.relate_t[r] = gr.constant(std::move(t));
    }
    Tensor sh({std::max(1, e.N), kNumShapes}), co({std::max(1, e.N), kNumColors});
    Tensor lc({std::max(1, e.N), 2}), ac({std::max(1, e.N), 4});
    for (int i = 0; i < e.N; ++i) {
        sh.data[i * kNumShapes + e.shape_of[i]] = 1.0f;
        co.data[i * kNumColors + e.color_of[i]] = 1.0f;
        lc.data[i * 2 + 0] = static_cast<float>(e.px[frame_ctx][i]);
        lc.data[i * 2 + 1] = static_cast<float>(e.py[frame_ctx][i]);
        for (int k = 0; k < 4; ++k) ac.data[i * 4 + k] = static_cast<float>(e.has_action[i][k]);
    }
    c.shape_onehot = gr.constant(std::move(sh));
    c.color_onehot = gr.constant(std::move(co));
    c.loc = gr.constant(std::move(lc));
    c.act = gr.constant(std::move(ac));
    c.eps = gr.constant(Tensor::scalar(1e-12f));
    return c;
}

NodeRef graph_peek(Graph& gr, const GraphState& st) {
    return gr.linear(st.ptr, st.slots, NodeRef{});  // [1,D] x [D,N] -> [1,N]
}

GraphState graph_push(Graph& gr, const GraphConsts& c, const GraphState& st, NodeRef att) {
    GraphState out;
    out.ptr = gr.linear(st.ptr, c.shift_push, NodeRef{});
    NodeRef ptr_col = gr.permute(out.ptr, {1, 0});                   // [D,1]
    NodeRef att_grid = gr.linear(ptr_col, att, NodeRef{});           // [D,N]
    NodeRef keep_col = gr.permute(gr.scale_add(out.ptr, -1.0f, 1.0f), {1, 0});
    NodeRef keep_grid = gr.linear(keep_col, c.ones_row, NodeRef{});  // [D,N]
    out.slots = gr.add(att_grid, gr.mul(keep_grid, st.slots));
    return out;
}

// value = peek, then the pointer retreats. The relaxed path has no underflow
// guard; mass on the empty marker simply reads its zeros.
GraphState graph_pop(Graph& gr, const GraphConsts& c, const GraphState& st, NodeRef* value) {
    *value = graph_peek(gr, st);
    GraphState out;
    out.slots = st.slots;
    out.ptr = gr.linear(st.ptr, c.shift_pop, NodeRef{});
    return out;
}

NodeRef graph_normalized(Graph& gr, const GraphConsts& c, NodeRef raw, NodeRef att) {
    NodeRef denom = gr.add(gr.sum(att), c.eps);
    return gr.div_scalar(raw, denom);
}

}  // namespace

BlendedGraphReadout exec_soft_blended_graph(Graph& gr, const GraphEncoding& e,
                                            const std::vector<BlendedStepLayout>& layout,
                                            std::vector<Parameter*>& step_logits,
                                            int frame_ctx, const SoftExecOptions& opt) {
    if (layout.empty()) throw ContractError("blended layout has no steps");
    if (layout.size() != step_logits.size())
        throw ContractError("need one logit row per layout step");
    check_frame(frame_ctx, e.F);
    for (size_t i = 0; i < layout.size(); ++i) {
        const auto& mods = layout[i].modules;
        if (mods.empty()) throw ContractError("layout step chooses among no modules");
        for (int m : mods)
            if (m < 0 || m >= kNumModules) throw ContractError("module index out of range");
        const Tensor& lv = step_logits[i]->value;
        if (lv.rank() != 2 || lv.shape[0] != 1 ||
            lv.shape[1] != static_cast<int>(mods.size()))
            throw ContractError("logit row shape must be [1, n_modules]");
    }
    bool final_has_terminal = false;
    for (int m : layout.back().modules)
        if (m >= kFirstTerminalModule) final_has_terminal = true;
    if (!final_has_terminal)
        throw ContractError("final layout step offers no terminal module");

    const int depth = opt.stack_depth;
    if (depth < 2) throw ContractError("soft stack needs the empty marker plus one slot");
    GraphConsts c = build_consts(gr, e, frame_ctx, depth);

    // Initial state: universe already pushed onto slot 1.
    Tensor slots0({depth, std::max(1, e.N)});
    for (int i = 0; i < e.N; ++i) slots0.data[1 * e.N + i] = 1.0f;
    Tensor ptr0({1, depth});
    ptr0.data[1] = 1.0f;
    GraphState st{gr.constant(std::move(slots0)), gr.constant(std::move(ptr0))};

    BlendedGraphReadout out;
    for (size_t si = 0; si < layout.size(); ++si) {
        const auto& mods = layout[si].modules;
        const bool final_step = si + 1 == layout.size();
        const int k = static_cast<int>(mods.size());
        NodeRef wrow = gr.softmax(gr.leaf(*step_logits[si]));  // [1,k]
        std::vector<NodeRef> w(k);
        for (int j = 0; j < k; ++j) {
            Tensor pick({k, 1});
            pick.data[j] = 1.0f;
            w[j] = gr.linear(wrow, gr.constant(std::move(pick)), NodeRef{});  // [1,1]
        }

        std::vector<GraphState> states(k);
        std::vector<NodeRef> readouts(k);  // terminals only
        for (int j = 0; j < k; ++j) {
            const int m = mods[j];
            if (m == 0) {
                states[j] = st;
            } else if (m <= 3) {
                NodeRef att = gr.mul(graph_peek(gr, st), c.shape_ind[m - 1]);
                states[j] = graph_push(gr, c, st, att);
            } else if (m <= 9) {
                NodeRef att = gr.mul(graph_peek(gr, st), c.color_ind[m - 4]);
                states[j] = graph_push(gr, c, st, att);
            } else if (m <= 14) {
                NodeRef att =
                    gr.clamp01(gr.linear(graph_peek(gr, st), c.relate_t[m - 10], NodeRef{}));
                states[j] = graph_push(gr, c, st, att);
            } else {
                NodeRef att;
                states[j] = graph_pop(gr, c, st, &att);
                if (final_step) {
                    switch (m - kFirstTerminalModule) {
                        case 0: readouts[j] = gr.reshape(gr.sum(att), {1, 1}); break;
                        case 1:
                            readouts[j] = gr.reshape(
                                gr.scale_add(gr.prod(gr.scale_add(att, -1.0f, 1.0f)), -1.0f,
                                             1.0f),
                                {1, 1});
                            break;
                        case 2:
                            readouts[j] = graph_normalized(
                                gr, c, gr.linear(att, c.color_onehot, NodeRef{}), att);
                            break;
                        case 3:
                            readouts[j] = graph_normalized(
                                gr, c, gr.linear(att, c.shape_onehot, NodeRef{}), att);
                            break;
                        case 4:
                            readouts[j] = graph_normalized(
                                gr, c, gr.linear(att, c.loc, NodeRef{}), att);
                            break;
                        case 5:
                            readouts[j] = graph_normalized(
                                gr, c, gr.linear(att, c.act, NodeRef{}), att);
                            break;
                        default: break;
                    }
                }
            }
        }

        if (final_step) {
            NodeRef terminal_mass;
            for (int j = 0; j < k; ++j) {
                if (mods[j] < kFirstTerminalModule) continue;
                terminal_mass = terminal_mass.valid() ? gr.add(terminal_mass, w[j]) : w[j];
            }
            out.terminal_mass = terminal_mass;
            NodeRef denom = gr.add(gr.reshape(terminal_mass, {1}), c.eps);
            for (int j = 0; j < k; ++j) {
                if (mods[j] < kFirstTerminalModule) continue;
                NodeRef share = gr.div_scalar(w[j], denom);                 // [1,1]
                NodeRef scaled = gr.linear(share, readouts[j], NodeRef{});  // [1,Q]
                switch (mods[j] - kFirstTerminalModule) {
                    case 0: out.count = scaled; break;
                    case 1: out.exist = scaled; break;
                    case 2: out.color_dist = scaled; break;
                    case 3: out.shape_dist = scaled; break;
                    case 4: out.loc = scaled; break;
                    case 5: out.actions = scaled; break;
                    default: break;
                }
            }
        } else {
            // Convex mixture of the per-module stacks.
            NodeRef slots_mix, ptr_mix;
            const int dn = depth * std::max(1, e.N);
            for (int j = 0; j < k; ++j) {
                NodeRef sflat = gr.reshape(states[j].slots, {1, dn});
                NodeRef sterm = gr.linear(w[j], sflat, NodeRef{});
                NodeRef pterm = gr.linear(w[j], states[j].ptr, NodeRef{});
                slots_mix = slots_mix.valid() ? gr.add(slots_mix, sterm) : sterm;
                ptr_mix = ptr_mix.valid() ? gr.add(ptr_mix, pterm) : pterm;
            }
            st.slots = gr.reshape(slots_mix, {depth, std::max(1, e.N)});
            st.ptr = ptr_mix;
        }
    }
    return out;
}

}  // namespace svqa
