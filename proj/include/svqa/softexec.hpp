#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "svqa/program.hpp"
#include "svqa/scenegraph.hpp"
#include "svqa/tensor.hpp"

namespace svqa {

// Two interchangeable executors answer a program against a scene graph.
//
// exec_symbolic works on explicit object sets. Step i produces a set S_i:
//  * the set before step 0 is the whole object universe,
//  * FilterShape/FilterColor intersect with the matching objects,
//  * AtFrame sets the time context (default frame 0) and passes the set on,
//  * Relate(rel, j) requires S_j to be a single anchor object a and
//    re-anchors from the universe: every other object that is visible at the
//    context frame and stands in `rel` to a. An invisible anchor makes the
//    relation undefined (thrown); invisible candidates are skipped.
//  * The terminal reduces the final set. Count/Exist accept any set; the
//    queries demand exactly one referent and throw otherwise. Locations are
//    tracked analytically, so a contained referent still has one.
//
// exec_soft replaces sets with attention vectors in [0,1]^N and runs the
// same steps as soft modules over a differentiable stack, so the layout can
// later be predicted instead of parsed. On one-hot inputs (which is what
// exact filters and relations produce) it reproduces exec_symbolic bit for
// bit; harden_answer collapses its soft outputs back into an Answer.

// ---------------------------------------------------------------------------
// Numeric view of a scene graph.

using Attention = std::vector<double>;

// Everything the soft modules need, flattened to plain arrays. relation[f][r]
// is an N x N row-major matrix whose (x, a) entry is 1 when x != a, both are
// visible at frame f, and x stands in relation r to a; visibility is baked in
// so soft_relate never has to consult the graph again.
struct GraphEncoding {
    int N = 0;
    int F = 0;
    std::vector<int> shape_of;  // enum index per object
    std::vector<int> color_of;
    std::vector<std::vector<double>> visible;  // [F][N], 0 or 1
    std::vector<std::array<std::vector<double>, kNumRelations>> relation;
    std::vector<std::vector<double>> px, py;        // [F][N] analytic centroids
    std::vector<std::array<double, 4>> has_action;  // [N][EventKind], 0 or 1
};

GraphEncoding encode_graph(const TemporalSceneGraph& g);

Attention shape_indicator(const GraphEncoding& e, Shape s);
Attention color_indicator(const GraphEncoding& e, Color c);

// ---------------------------------------------------------------------------
// Soft modules. Attention entries live in [0,1]; every module preserves that.

// Elementwise product with an attribute indicator.
Attention soft_filter(const Attention& att, const Attention& indicator);
// out[x] = clamp01(sum_a R(x,a) * anchor[a]); R is an N x N row-major matrix.
Attention soft_relate(const Attention& anchor, const std::vector<double>& rel_matrix, int n);
// Sum of the attention mass.
double soft_count(const Attention& att);
// Soft OR: 1 - prod(1 - a).
double soft_exist(const Attention& att);
// Attention-weighted histogram over labels, normalized to a distribution.
// Zero total mass falls back to uniform and sets *degenerate.
std::vector<double> soft_query(const Attention& att, const std::vector<int>& labels,
                               int n_values, bool* degenerate);

// ---------------------------------------------------------------------------
// Differentiable stack. The pointer is a distribution over depth slots; slot
// 0 is the empty-stack marker and never holds data. push blends the value
// into the slot under the advanced pointer; pop reads the expectation under
// the pointer and retreats it. Advancing past the last slot or retreating
// past the marker would destroy pointer mass, so both throw instead.

constexpr int kSoftStackDepth = 8;

class SoftStack {
public:
    SoftStack(int width, int depth = kSoftStackDepth);

    void push(const Attention& att);
    Attention pop();
    Attention peek() const;

    // Convex combination of same-shaped stacks (blended execution's state
    // mixing). Weights are taken as given; callers keep them a distribution.
    static SoftStack mix(const std::vector<double>& weights,
                         const std::vector<SoftStack>& states);

    int width() const { return width_; }
    int depth() const { return depth_; }
    double pointer_sum() const;
    const std::vector<double>& pointer() const { return pointer_; }
    const Attention& slot(int d) const { return slots_[static_cast<size_t>(d)]; }

private:
    int width_ = 0;
    int depth_ = 0;
    std::vector<Attention> slots_;
    std::vector<double> pointer_;
};

// ---------------------------------------------------------------------------
// Answers.

// Soft outputs of every terminal family, plus which terminal produced them
// (hard mode) or how the final step weighted them (blended mode).
struct SoftAnswer {
    AnswerKind kind = AnswerKind::None;
    double count = 0.0;
    std::string unit;
    double exist = 0.0;
    std::vector<double> color_dist;  // size 6 when set
    std::vector<double> shape_dist;  // size 3 when set
    int frame = 0;
    double px = 0.0, py = 0.0;
    std::array<double, 4> action_presence{};
    // Renormalized final-step mass per terminal, ordered Count, Exist,
    // QueryColor, QueryShape, QueryLocation, QueryAction.
    std::array<double, 6> terminal_weights{};
    bool degenerate = false;  // a zero-mass attention forced a uniform fallback
};

// Round/threshold/argmax the soft fields of the winning terminal.
Answer harden_answer(const SoftAnswer& s);

// ---------------------------------------------------------------------------
// Executors.

Answer exec_symbolic(const Program& p, const TemporalSceneGraph& g);

struct SoftExecOptions {
    int stack_depth = kSoftStackDepth;
};

// Hard-module execution: one module per program step. Filters and relations
// push their result, the terminal pops and reduces. A Relate step reads its
// anchor attention from the stack slot where the anchored step left it.
SoftAnswer exec_soft(const Program& p, const GraphEncoding& e,
                     const SoftExecOptions& opt = {});
SoftAnswer exec_soft(const Program& p, const TemporalSceneGraph& g,
                     const SoftExecOptions& opt = {});

// ---------------------------------------------------------------------------
// Blended execution. Instead of one module per step, every step carries a
// weight distribution over a fixed module inventory; each module transforms a
// copy of the stack and the copies are mixed convexly. With a delta
// distribution this reduces to hard-module execution. The inventory:
//
//   0            NoOp (leaves the stack alone; also stands in for AtFrame,
//                whose frame context is fixed per run instead)
//   1..3         FilterShape per shape
//   4..9         FilterColor per color
//   10..14       Relate per relation, anchored on the current stack top
//   15..20       Count, Exist, QueryColor, QueryShape, QueryLocation,
//                QueryAction; each pops and fills its answer register
//
// The answer is read at the final step: each terminal's register, tagged with
// the final step's terminal mass renormalized. Mixing push modules with
// non-push modules spreads the pointer across depths; the stack guards apply
// to the mixed pointer, so such a mixture followed by a pop can legitimately
// throw. Weight rows must be distributions.

constexpr int kNumModules = 21;
constexpr int kFirstTerminalModule = 15;

struct BlendedWeights {
    std::vector<std::array<double, kNumModules>> rows;  // one per step
};

// The delta schedule that replays a program: its AtFrame context is returned
// through *frame_ctx (programs without AtFrame leave it at 0).
BlendedWeights delta_weights_for(const Program& p, int* frame_ctx);

SoftAnswer exec_soft_blended(const BlendedWeights& w, const GraphEncoding& e, int frame_ctx = 0,
                             const SoftExecOptions& opt = {});

// ---------------------------------------------------------------------------
// Blended execution routed through the autodiff graph, so gradients reach the
// step weights. Each step softmaxes a logit row over a caller-chosen module
// subset (a delta schedule is the singleton-subset case). This path is the
// smooth relaxation: the stack guards and the zero-mass fallback are replaced
// by an epsilon in the normalizers, and leaked pointer mass is tolerated.

struct BlendedStepLayout {
    std::vector<int> modules;  // inventory indices this step chooses among
};

// Per-terminal registers, each scaled by that terminal's renormalized share
// of the final step's terminal mass (so a delta schedule returns the plain
// readout). NodeRefs are invalid for terminals absent from the final subset.
struct BlendedGraphReadout {
    NodeRef count;
    NodeRef exist;
    NodeRef color_dist;  // [1,6]
    NodeRef shape_dist;  // [1,3]
    NodeRef loc;         // [1,2]
    NodeRef actions;     // [1,4]
    NodeRef terminal_mass;  // [1,1], unnormalized final-step terminal weight
};

// step_logits[i] must be a [1, layout[i].modules.size()] parameter.
BlendedGraphReadout exec_soft_blended_graph(Graph& gr, const GraphEncoding& e,
                                            const std::vector<BlendedStepLayout>& layout,
                                            std::vector<Parameter*>& step_logits,
                                            int frame_ctx = 0,
                                            const SoftExecOptions& opt = {});

}  // namespace svqa
