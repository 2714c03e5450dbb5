#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "support.hpp"
#include "svqa/program.hpp"
#include "svqa/render.hpp"
#include "svqa/scene.hpp"
#include "svqa/scenegraph.hpp"
#include "svqa/softexec.hpp"

using namespace svqa;

namespace {

// --- hand-built graphs -------------------------------------------------------

struct Obj {
    Shape shape = Shape::Cube;
    Color color = Color::Red;
    double wx = 0.0, wy = 0.0;
    bool visible = true;
};

TemporalSceneGraph hand_graph(const std::vector<Obj>& objs, int F = 1) {
    TemporalSceneGraph g;
    g.F = F;
    g.H = g.W = 64;
    for (size_t i = 0; i < objs.size(); ++i) {
        ObjectTrack t;
        t.id = static_cast<int>(i);
        t.shape = objs[i].shape;
        t.color = objs[i].color;
        t.size = ObjSize::Small;
        for (int f = 0; f < F; ++f) {
            FrameState fs;
            fs.wx = objs[i].wx;
            fs.wy = objs[i].wy;
            fs.px = 32.0 + 8.0 * objs[i].wx;
            fs.py = 40.0 - 3.6 * objs[i].wy;
            fs.visible = objs[i].visible;
            t.frames.push_back(fs);
        }
        g.objects.push_back(std::move(t));
    }
    return g;
}

TemporalSceneGraph built(const Scene& s) { return build_graph(s, render(s)); }

// --- program step shorthands -------------------------------------------------

ProgramStep fshape(Shape s) {
    ProgramStep st;
    st.kind = StepKind::FilterShape;
    st.shape = s;
    return st;
}
ProgramStep fcolor(Color c) {
    ProgramStep st;
    st.kind = StepKind::FilterColor;
    st.color = c;
    return st;
}
ProgramStep relate(Relation r, int anchor) {
    ProgramStep st;
    st.kind = StepKind::Relate;
    st.rel = r;
    st.anchor = anchor;
    return st;
}
ProgramStep at_frame(int f) {
    ProgramStep st;
    st.kind = StepKind::AtFrame;
    st.frame = f;
    return st;
}
ProgramStep term(StepKind k) {
    ProgramStep st;
    st.kind = k;
    return st;
}
Program prog(std::vector<ProgramStep> v) { return Program{std::move(v)}; }

constexpr StepKind kTerminals[6] = {StepKind::Count,      StepKind::Exist,
                                    StepKind::QueryColor, StepKind::QueryShape,
                                    StepKind::QueryLocation, StepKind::QueryAction};

// --- independent oracle for the symbolic executor ----------------------------
//
// Computes set membership top-down and per object instead of folding sets
// forward, and reads graph fields directly instead of going through the
// production helpers, so the two implementations share as little as possible.

int oracle_frame_at(const Program& p, int i) {
    int f = 0;
    for (int k = 0; k < i; ++k)
        if (p.steps[k].kind == StepKind::AtFrame) f = p.steps[k].frame;
    return f;
}

bool oracle_member(const Program& p, const TemporalSceneGraph& g, int i, int x);

std::vector<int> oracle_members(const Program& p, const TemporalSceneGraph& g, int i) {
    std::vector<int> out;
    for (int x = 0; x < static_cast<int>(g.objects.size()); ++x)
        if (oracle_member(p, g, i, x)) out.push_back(x);
    return out;
}

bool oracle_member(const Program& p, const TemporalSceneGraph& g, int i, int x) {
    if (i < 0) return true;
    const ProgramStep& s = p.steps[i];
    switch (s.kind) {
        // evaluate the chain below unconditionally: a malformed step (say, an
        // ambiguous relate anchor) faults even for objects the filter rejects,
        // exactly as the step-by-step executor does
        case StepKind::FilterShape: {
            const bool below = oracle_member(p, g, i - 1, x);
            return below && g.objects[x].shape == s.shape;
        }
        case StepKind::FilterColor: {
            const bool below = oracle_member(p, g, i - 1, x);
            return below && g.objects[x].color == s.color;
        }
        case StepKind::AtFrame: return oracle_member(p, g, i - 1, x);
        case StepKind::Relate: {
            const std::vector<int> anchors = oracle_members(p, g, s.anchor);
            if (anchors.size() != 1) throw AmbiguousReferentError("oracle: anchor not unique");
            const int f = oracle_frame_at(p, i);
            if (f >= g.F) throw ContractError("oracle: frame out of range");
            const int a = anchors[0];
            if (!g.objects[a].frames[f].visible)
                throw RelationUndefinedError("oracle: anchor hidden");
            return x != a && g.objects[x].frames[f].visible &&
                   spatial_relation(g, x, a, f, s.rel);
        }
        default: throw ContractError("oracle: terminal inside the chain");
    }
}

Answer oracle_answer(const Program& p, const TemporalSceneGraph& g) {
    const int last = static_cast<int>(p.steps.size()) - 1;
    const ProgramStep& t = p.steps[last];
    const int f = oracle_frame_at(p, last);
    if (f >= g.F) throw ContractError("oracle: frame out of range");
    const std::vector<int> set = oracle_members(p, g, last - 1);
    Answer a;
    switch (t.kind) {
        case StepKind::Count: {
            a.kind = AnswerKind::Count;
            a.count = static_cast<int>(set.size());
            std::optional<Shape> sh;
            std::optional<Color> co;
            for (const ProgramStep& s : p.steps) {
                if (s.kind == StepKind::Relate) {
                    sh.reset();
                    co.reset();
                }
                if (s.kind == StepKind::FilterShape) sh = s.shape;
                if (s.kind == StepKind::FilterColor) co = s.color;
            }
            a.unit = (co ? to_string(*co) + " " : std::string()) +
                     (sh ? to_string(*sh) : std::string("object"));
            return a;
        }
        case StepKind::Exist:
            a.kind = AnswerKind::Bool;
            a.truth = !set.empty();
            return a;
        default: break;
    }
    if (set.size() != 1) throw AmbiguousReferentError("oracle: referent not unique");
    const int x = set[0];
    switch (t.kind) {
        case StepKind::QueryColor:
            a.kind = AnswerKind::Color;
            a.color = g.objects[x].color;
            break;
        case StepKind::QueryShape:
            a.kind = AnswerKind::Shape;
            a.shape = g.objects[x].shape;
            break;
        case StepKind::QueryLocation:
            a.kind = AnswerKind::Location;
            a.frame = f;
            a.px = g.objects[x].frames[f].px;
            a.py = g.objects[x].frames[f].py;
            break;
        case StepKind::QueryAction: {
            a.kind = AnswerKind::Actions;
            std::array<bool, 4> seen{};
            for (const GraphEvent& ev : g.events)
                if (ev.subject == x) seen[static_cast<int>(ev.kind)] = true;
            for (int k = 0; k < 4; ++k)
                if (seen[k]) a.actions.push_back(static_cast<EventKind>(k));
            break;
        }
        default: throw ContractError("oracle: unknown terminal");
    }
    return a;
}

enum class Fate { Ok, Ambiguous, Undefined, Contract };

template <class Fn>
std::pair<Fate, Answer> fate_of(Fn&& fn) {
    try {
        return {Fate::Ok, fn()};
    } catch (const AmbiguousReferentError&) {
        return {Fate::Ambiguous, Answer{}};
    } catch (const RelationUndefinedError&) {
        return {Fate::Undefined, Answer{}};
    } catch (const ContractError&) {
        return {Fate::Contract, Answer{}};
    }
}

// --- random graphs and programs for the fuzz comparisons ----------------------

TemporalSceneGraph random_graph(Rng& rng) {
    TemporalSceneGraph g;
    const int n = rng.uniform_int(1, 6);
    g.F = rng.uniform_int(1, 6);
    g.H = g.W = 64;
    for (int i = 0; i < n; ++i) {
        ObjectTrack t;
        t.id = i;
        t.shape = static_cast<Shape>(rng.uniform_int(0, kNumShapes - 1));
        t.color = static_cast<Color>(rng.uniform_int(0, kNumColors - 1));
        t.size = ObjSize::Small;
        for (int f = 0; f < g.F; ++f) {
            FrameState fs;
            fs.wx = rng.uniform(-2.8, 2.8);
            fs.wy = rng.uniform(-2.8, 2.8);
            fs.px = 32.0 + 8.0 * fs.wx;
            fs.py = 40.0 - 3.6 * fs.wy;
            fs.visible = rng.chance(0.85);
            t.frames.push_back(fs);
        }
        g.objects.push_back(std::move(t));
    }
    const int n_ev = rng.uniform_int(0, 3);
    for (int k = 0; k < n_ev; ++k) {
        GraphEvent ev;
        ev.kind = static_cast<EventKind>(rng.uniform_int(0, 3));
        ev.subject = rng.uniform_int(0, n - 1);
        ev.t0 = 0;
        ev.t1 = g.F;
        g.events.push_back(ev);
    }
    return g;
}

Program random_program(Rng& rng, int F) {
    Program p;
    std::vector<int> set_steps;
    auto add_filter = [&] {
        if (rng.chance(0.5))
            p.steps.push_back(fshape(static_cast<Shape>(rng.uniform_int(0, kNumShapes - 1))));
        else
            p.steps.push_back(fcolor(static_cast<Color>(rng.uniform_int(0, kNumColors - 1))));
        set_steps.push_back(static_cast<int>(p.steps.size()) - 1);
    };
    const int head = rng.uniform_int(0, 2);
    for (int i = 0; i < head; ++i) add_filter();
    if (rng.chance(0.35)) p.steps.push_back(at_frame(rng.uniform_int(0, F - 1)));
    if (!set_steps.empty() && rng.chance(0.5)) {
        p.steps.push_back(
            relate(static_cast<Relation>(rng.uniform_int(0, kNumRelations - 1)),
                   rng.pick(set_steps)));
        set_steps.push_back(static_cast<int>(p.steps.size()) - 1);
        if (rng.chance(0.3)) add_filter();
    }
    p.steps.push_back(term(kTerminals[rng.uniform_int(0, 5)]));
    return p;
}

// Programs whose anchors always sit on the stack top, exercised by the
// one-hot and blended-equivalence suites.
std::vector<Program> program_battery(int F) {
    std::vector<Program> out;
    for (int s = 0; s < kNumShapes; ++s) {
        const Shape sh = static_cast<Shape>(s);
        for (StepKind t : kTerminals) out.push_back(prog({fshape(sh), term(t)}));
        for (int r = 0; r < kNumRelations; ++r) {
            const Relation rel_ = static_cast<Relation>(r);
            out.push_back(prog({fshape(sh), relate(rel_, 0), term(StepKind::Count)}));
            out.push_back(prog({fshape(sh), relate(rel_, 0), term(StepKind::Exist)}));
            out.push_back(prog(
                {fshape(sh), at_frame(F / 2), relate(rel_, 0), term(StepKind::QueryColor)}));
        }
    }
    for (int c = 0; c < kNumColors; ++c) {
        const Color co = static_cast<Color>(c);
        out.push_back(prog({fcolor(co), term(StepKind::Count)}));
        out.push_back(prog({fcolor(co), term(StepKind::Exist)}));
        out.push_back(prog({fcolor(co), term(StepKind::QueryShape)}));
        out.push_back(prog({fcolor(co), fshape(Shape::Cube), term(StepKind::Count)}));
        out.push_back(prog({fcolor(co), at_frame(F - 1), term(StepKind::QueryLocation)}));
    }
    out.push_back(prog({term(StepKind::Count)}));
    out.push_back(prog({term(StepKind::Exist)}));
    for (int f : {0, F / 2, F - 1})
        out.push_back(prog({fshape(Shape::Cone), at_frame(f), term(StepKind::QueryLocation)}));
    return out;
}

bool soft_answers_close(const SoftAnswer& a, const SoftAnswer& b, double tol) {
    if (a.kind != b.kind || a.frame != b.frame || a.degenerate != b.degenerate) return false;
    auto near_ = [tol](double x, double y) { return std::abs(x - y) <= tol; };
    if (!near_(a.count, b.count) || !near_(a.exist, b.exist) || !near_(a.px, b.px) ||
        !near_(a.py, b.py))
        return false;
    if (a.color_dist.size() != b.color_dist.size() ||
        a.shape_dist.size() != b.shape_dist.size())
        return false;
    for (size_t i = 0; i < a.color_dist.size(); ++i)
        if (!near_(a.color_dist[i], b.color_dist[i])) return false;
    for (size_t i = 0; i < a.shape_dist.size(); ++i)
        if (!near_(a.shape_dist[i], b.shape_dist[i])) return false;
    for (int k = 0; k < 4; ++k)
        if (!near_(a.action_presence[k], b.action_presence[k])) return false;
    for (int t = 0; t < 6; ++t)
        if (!near_(a.terminal_weights[t], b.terminal_weights[t])) return false;
    return true;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("program validation accepts well-formed programs and names violations") {
    validate_program(prog({fshape(Shape::Cube), term(StepKind::Count)}));
    validate_program(prog({term(StepKind::Exist)}));
    validate_program(prog(
        {fcolor(Color::Red), fshape(Shape::Cube), relate(Relation::Near, 1),
         term(StepKind::QueryColor)}));
    validate_program(
        prog({fshape(Shape::Cube), relate(Relation::Left, 0), relate(Relation::Near, 1),
              term(StepKind::Count)}));

    CHECK_THROWS_AS(validate_program(prog({})), ContractError);
    CHECK_THROWS_AS(validate_program(prog({fshape(Shape::Cube)})), ContractError);
    CHECK_THROWS_AS(validate_program(prog({term(StepKind::Count), fshape(Shape::Cube)})),
                    ContractError);
    CHECK_THROWS_AS(
        validate_program(prog({term(StepKind::Count), term(StepKind::Exist)})),
        ContractError);
    // anchor must point at an earlier set-producing step
    CHECK_THROWS_AS(
        validate_program(prog({relate(Relation::Near, 0), term(StepKind::Count)})),
        ContractError);
    CHECK_THROWS_AS(validate_program(prog(
                        {fshape(Shape::Cube), relate(Relation::Near, 1), term(StepKind::Count)})),
                    ContractError);
    CHECK_THROWS_AS(validate_program(prog({fshape(Shape::Cube), relate(Relation::Near, -1),
                                           term(StepKind::Count)})),
                    ContractError);
    CHECK_THROWS_AS(validate_program(prog({at_frame(3), relate(Relation::Near, 0),
                                           term(StepKind::Count)})),
                    ContractError);
    Program neg = prog({at_frame(-1), term(StepKind::Count)});
    CHECK_THROWS_AS(validate_program(neg), ContractError);
}

TEST_CASE("program and answer JSON codecs round-trip") {
    const Program p = prog({fcolor(Color::Yellow), fshape(Shape::Sphere), at_frame(7),
                            relate(Relation::Behind, 1), term(StepKind::QueryLocation)});
    const std::string js = program_to_json(p);
    const Program q = program_from_json(js);
    REQUIRE(q.steps.size() == p.steps.size());
    CHECK(program_to_json(q) == js);
    CHECK(q.steps[3].rel == Relation::Behind);
    CHECK(q.steps[3].anchor == 1);
    CHECK(q.steps[2].frame == 7);

    CHECK_THROWS_AS(program_from_json("not json"), IoError);
    CHECK_THROWS_AS(program_from_json("{\"op\":\"count\"}"), IoError);
    CHECK_THROWS_AS(program_from_json("[{\"op\":\"blorp\"}]"), ContractError);
    // parses but fails validation: no terminal
    CHECK_THROWS_AS(program_from_json("[{\"op\":\"filter_shape\",\"shape\":\"cube\"}]"),
                    ContractError);

    Answer count;
    count.kind = AnswerKind::Count;
    count.count = 3;
    count.unit = "red cube";
    Answer loc;
    loc.kind = AnswerKind::Location;
    loc.frame = 5;
    loc.px = 12.25;
    loc.py = 40.5;
    Answer acts;
    acts.kind = AnswerKind::Actions;
    acts.actions = {EventKind::Translate, EventKind::Rotate};
    Answer truth;
    truth.kind = AnswerKind::Bool;
    truth.truth = true;
    Answer col;
    col.kind = AnswerKind::Color;
    col.color = Color::Purple;
    for (const Answer& a : {count, loc, acts, truth, col})
        CHECK(answer_from_json(answer_to_json(a)) == a);
    CHECK_THROWS_AS(answer_from_json("[1,2]"), IoError);

    CHECK(answer_to_string(count) == "3 red cubes");
    Answer one = count;
    one.count = 1;
    CHECK(answer_to_string(one) == "1 red cube");
    CHECK(answer_to_string(truth) == "yes");
    CHECK(answer_to_string(loc) == "(12.2, 40.5) at frame 5");
    CHECK(answer_to_string(acts) == "translate, rotate");
    Answer none_acts;
    none_acts.kind = AnswerKind::Actions;
    CHECK(answer_to_string(none_acts) == "nothing");
}

TEST_CASE("programs report their question category from the terminal") {
    CHECK(category_of(prog({term(StepKind::Count)})) == Category::Count);
    CHECK(category_of(prog({term(StepKind::Exist)})) == Category::Count);
    CHECK(category_of(prog({fshape(Shape::Cube), term(StepKind::QueryColor)})) ==
          Category::Color);
    CHECK(category_of(prog({fcolor(Color::Red), term(StepKind::QueryShape)})) ==
          Category::Shape);
    CHECK(category_of(prog({fshape(Shape::Cone), term(StepKind::QueryLocation)})) ==
          Category::Location);
    CHECK_THROWS_AS(category_of(prog({fshape(Shape::Cube), term(StepKind::QueryAction)})),
                    ContractError);
    for (Category c : {Category::Count, Category::Color, Category::Shape, Category::Location})
        CHECK(category_from_string(to_string(c)) == c);
}

TEST_CASE("symbolic executor resolves filters, relations, and queries") {
    // red cube at -1, blue sphere at 0 (near the cube), green cone far right
    const TemporalSceneGraph g = hand_graph({
        {Shape::Cube, Color::Red, -1.0, 0.0},
        {Shape::Sphere, Color::Blue, -0.4, 0.2},
        {Shape::Cone, Color::Green, 2.5, -1.0},
    });

    Answer a = exec_symbolic(prog({fcolor(Color::Red), term(StepKind::Count)}), g);
    CHECK(a.count == 1);
    CHECK(a.unit == "red object");
    CHECK(answer_to_string(a) == "1 red object");

    a = exec_symbolic(prog({term(StepKind::Count)}), g);
    CHECK(a.count == 3);
    CHECK(a.unit == "object");

    a = exec_symbolic(prog({fshape(Shape::Sphere), term(StepKind::Count)}), g);
    CHECK(a.count == 1);
    CHECK(a.unit == "sphere");

    // the sphere is near the cube; the relate result excludes the anchor
    a = exec_symbolic(prog({fshape(Shape::Cube), relate(Relation::Near, 0),
                            term(StepKind::Count)}),
                      g);
    CHECK(a.count == 1);
    CHECK(a.unit == "object");  // filters before the relate describe the anchor

    a = exec_symbolic(prog({fshape(Shape::Cube), relate(Relation::Near, 0),
                            term(StepKind::QueryColor)}),
                      g);
    CHECK(a.color == Color::Blue);

    // left/right/behind/front follow world coordinates
    a = exec_symbolic(prog({fshape(Shape::Cone), relate(Relation::Left, 0),
                            term(StepKind::Count)}),
                      g);
    CHECK(a.count == 2);
    a = exec_symbolic(prog({fshape(Shape::Cube), relate(Relation::Right, 0),
                            term(StepKind::Count)}),
                      g);
    CHECK(a.count == 2);
    a = exec_symbolic(prog({fshape(Shape::Cone), relate(Relation::Behind, 0),
                            term(StepKind::Exist)}),
                      g);
    CHECK(a.truth);  // larger world y is behind; both others have y > -1

    a = exec_symbolic(prog({fcolor(Color::Green), term(StepKind::QueryShape)}), g);
    CHECK(a.shape == Shape::Cone);

    a = exec_symbolic(prog({fshape(Shape::Sphere), term(StepKind::QueryLocation)}), g);
    CHECK(a.frame == 0);
    CHECK(a.px == doctest::Approx(32.0 - 8.0 * 0.4).epsilon(1e-12));

    // queries demand a unique referent; counts and exists do not
    CHECK_THROWS_AS(exec_symbolic(prog({term(StepKind::QueryColor)}), g),
                    AmbiguousReferentError);
    CHECK_THROWS_AS(
        exec_symbolic(prog({fcolor(Color::Gray), term(StepKind::QueryShape)}), g),
        AmbiguousReferentError);
    CHECK(exec_symbolic(prog({fcolor(Color::Gray), term(StepKind::Count)}), g).count == 0);
    CHECK_FALSE(exec_symbolic(prog({fcolor(Color::Gray), term(StepKind::Exist)}), g).truth);

    // a relate anchor must be unique too
    const TemporalSceneGraph two_cubes = hand_graph({
        {Shape::Cube, Color::Red, -1.0, 0.0},
        {Shape::Cube, Color::Blue, 1.0, 0.0},
    });
    CHECK_THROWS_AS(exec_symbolic(prog({fshape(Shape::Cube), relate(Relation::Near, 0),
                                        term(StepKind::Count)}),
                                  two_cubes),
                    AmbiguousReferentError);
}

TEST_CASE("symbolic executor handles visibility and time context") {
    // two frames: the sphere crosses from left of the cube to its right
    TemporalSceneGraph g = hand_graph(
        {
            {Shape::Cube, Color::Red, 0.0, 0.0},
            {Shape::Sphere, Color::Blue, -2.0, 0.5},
        },
        2);
    g.objects[1].frames[1].wx = 2.0;
    g.objects[1].frames[1].px = 32.0 + 16.0;

    const Program left_of_cube =
        prog({fshape(Shape::Cube), relate(Relation::Left, 0), term(StepKind::Count)});
    CHECK(exec_symbolic(left_of_cube, g).count == 1);  // frame 0 by default
    CHECK(exec_symbolic(prog({fshape(Shape::Cube), at_frame(1), relate(Relation::Left, 0),
                              term(StepKind::Count)}),
                        g)
              .count == 0);

    Answer loc = exec_symbolic(
        prog({fshape(Shape::Sphere), at_frame(1), term(StepKind::QueryLocation)}), g);
    CHECK(loc.frame == 1);
    CHECK(loc.px == doctest::Approx(48.0).epsilon(1e-12));

    CHECK_THROWS_AS(exec_symbolic(prog({fshape(Shape::Cube), at_frame(2),
                                        relate(Relation::Left, 0), term(StepKind::Count)}),
                                  g),
                    ContractError);

    // an invisible anchor leaves the relation undefined; an invisible
    // candidate is silently skipped
    TemporalSceneGraph hidden = hand_graph({
        {Shape::Cube, Color::Red, 0.0, 0.0, false},
        {Shape::Sphere, Color::Blue, 0.3, 0.0},
    });
    CHECK_THROWS_AS(exec_symbolic(prog({fshape(Shape::Cube), relate(Relation::Near, 0),
                                        term(StepKind::Count)}),
                                  hidden),
                    RelationUndefinedError);
    TemporalSceneGraph hidden2 = hand_graph({
        {Shape::Cube, Color::Red, 0.0, 0.0},
        {Shape::Sphere, Color::Blue, 0.3, 0.0, false},
    });
    CHECK(exec_symbolic(prog({fshape(Shape::Cube), relate(Relation::Near, 0),
                              term(StepKind::Count)}),
                        hidden2)
              .count == 0);

    // location is tracked analytically, so a hidden referent still has one
    Answer hidden_loc = exec_symbolic(
        prog({fshape(Shape::Sphere), term(StepKind::QueryLocation)}), hidden2);
    CHECK(hidden_loc.px == doctest::Approx(32.0 + 8.0 * 0.3).epsilon(1e-12));
}

TEST_CASE("symbolic executor reports distinct action kinds in a fixed order") {
    TemporalSceneGraph g = hand_graph({
        {Shape::Cube, Color::Red, 0.0, 0.0},
        {Shape::Sphere, Color::Blue, 1.0, 1.0},
    });
    GraphEvent rot;
    rot.kind = EventKind::Rotate;
    rot.subject = 0;
    rot.t0 = 4;
    rot.t1 = 8;
    GraphEvent tr;
    tr.kind = EventKind::Translate;
    tr.subject = 0;
    tr.t0 = 0;
    tr.t1 = 3;
    GraphEvent rot2 = rot;
    rot2.t0 = 9;
    rot2.t1 = 12;
    g.events = {rot, tr, rot2};

    Answer a = exec_symbolic(prog({fshape(Shape::Cube), term(StepKind::QueryAction)}), g);
    REQUIRE(a.actions.size() == 2);
    CHECK(a.actions[0] == EventKind::Translate);
    CHECK(a.actions[1] == EventKind::Rotate);
    CHECK(answer_to_string(a) == "translate, rotate");

    a = exec_symbolic(prog({fshape(Shape::Sphere), term(StepKind::QueryAction)}), g);
    CHECK(a.actions.empty());
    CHECK(answer_to_string(a) == "nothing");
}

TEST_CASE("symbolic executor agrees with a brute-force membership oracle") {
    Rng root(9001);
    int ok = 0, ambiguous = 0, undefined = 0;
    for (int it = 0; it < 10000; ++it) {
        Rng rng = root.fork(static_cast<uint64_t>(it));
        const TemporalSceneGraph g = random_graph(rng);
        const Program p = random_program(rng, g.F);
        auto [fate, got] = fate_of([&] { return exec_symbolic(p, g); });
        auto [want_fate, want] = fate_of([&] { return oracle_answer(p, g); });
        if (fate != want_fate) {
            std::string vis;
            for (const ObjectTrack& o : g.objects) {
                for (const FrameState& fr : o.frames) vis += fr.visible ? '1' : '0';
                vis += '|';
            }
            MESSAGE("it=" << it << " N=" << g.objects.size() << " F=" << g.F
                          << " vis=" << vis << " program=" << program_to_json(p));
        }
        REQUIRE(fate == want_fate);
        if (fate == Fate::Ok) {
            REQUIRE(got == want);
            ++ok;
        } else if (fate == Fate::Ambiguous) {
            ++ambiguous;
        } else if (fate == Fate::Undefined) {
            ++undefined;
        }
    }
    // the corpus must actually exercise all the interesting outcomes
    CHECK(ok > 3000);
    CHECK(ambiguous > 300);
    CHECK(undefined > 50);
}

// ---------------------------------------------------------------------------

TEST_CASE("soft modules match their closed forms") {
    CHECK(soft_filter({1.0, 1.0}, {1.0, 0.0}) == Attention{1.0, 0.0});
    CHECK(soft_filter({0.5, 0.25, 1.0}, {1.0, 0.5, 0.0}) == Attention{0.5, 0.125, 0.0});
    CHECK_THROWS_AS(soft_filter({1.0}, {1.0, 0.0}), ContractError);

    CHECK(soft_count({1.0, 1.0, 1.0, 1.0}) == 4.0);
    CHECK(soft_count({0.5, 0.5, 0.5, 0.5}) == 2.0);
    CHECK(soft_count({}) == 0.0);

    CHECK(soft_exist({0.0, 0.0, 0.0}) == 0.0);
    CHECK(soft_exist({1.0, 0.0}) == 1.0);
    CHECK(soft_exist({0.5, 0.5}) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(soft_exist({}) == 0.0);

    // mass from several anchors saturates at one
    const std::vector<double> all_pairs = {0, 1, 1, 1, 0, 1, 1, 1, 0};  // 3x3, x != a
    const Attention rel = soft_relate({1.0, 1.0, 1.0}, all_pairs, 3);
    CHECK(rel == Attention{1.0, 1.0, 1.0});
    const Attention rel2 = soft_relate({0.25, 0.5, 0.0}, all_pairs, 3);
    CHECK(rel2[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rel2[1] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(rel2[2] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK_THROWS_AS(soft_relate({1.0, 1.0}, all_pairs, 3), ContractError);

    bool degen = false;
    const std::vector<double> q = soft_query({0.5, 0.25, 0.25}, {2, 2, 0}, 3, &degen);
    CHECK_FALSE(degen);
    CHECK(q[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(q[1] == 0.0);
    CHECK(q[2] == doctest::Approx(0.75).epsilon(1e-12));

    const std::vector<double> uniform = soft_query({0.0, 0.0}, {0, 1}, 4, &degen);
    CHECK(degen);
    for (double v : uniform) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    CHECK_THROWS_AS(soft_query({1.0}, {7}, 3, nullptr), ContractError);
}

TEST_CASE("soft module outputs stay inside the unit interval") {
    Rng rng(77);
    for (int it = 0; it < 500; ++it) {
        const int n = rng.uniform_int(1, 8);
        Attention att(n), ind(n);
        std::vector<double> rel(static_cast<size_t>(n) * n);
        for (double& v : att) v = rng.uniform();
        for (double& v : ind) v = rng.chance(0.5) ? 1.0 : 0.0;
        for (double& v : rel) v = rng.chance(0.4) ? 1.0 : 0.0;
        for (double v : soft_filter(att, ind)) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (double v : soft_relate(att, rel, n)) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(soft_exist(att) >= 0.0);
        CHECK(soft_exist(att) <= 1.0);
    }
}

TEST_CASE("soft count is monotone in every attention entry") {
    Rng rng(78);
    for (int it = 0; it < 200; ++it) {
        const int n = rng.uniform_int(1, 8);
        Attention att(n);
        for (double& v : att) v = rng.uniform() * 0.9;
        const double before = soft_count(att);
        const int i = rng.uniform_int(0, n - 1);
        Attention bumped = att;
        bumped[i] += 0.1;
        CHECK(soft_count(bumped) > before);
        CHECK(soft_count(bumped) == doctest::Approx(before + 0.1).epsilon(1e-12));
    }
}

TEST_CASE("soft stack behaves as a stack and guards its pointer mass") {
    SoftStack st(2);
    CHECK(st.peek() == Attention{0.0, 0.0});  // empty marker reads zeros
    CHECK(st.pointer_sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_WITH_AS(st.pop(), "soft stack underflow", ContractError);

    st.push({0.25, 0.5});
    st.push({1.0, 0.0});
    CHECK(st.peek() == Attention{1.0, 0.0});
    CHECK(st.pop() == Attention{1.0, 0.0});
    CHECK(st.pop() == Attention{0.25, 0.5});
    CHECK_THROWS_AS(st.pop(), ContractError);

    // seven slots hold data beside the marker
    SoftStack cap(1);
    for (int i = 0; i < 7; ++i) cap.push({static_cast<double>(i)});
    CHECK_THROWS_WITH_AS(cap.push({7.0}), "soft stack overflow", ContractError);
    for (int i = 6; i >= 0; --i) CHECK(cap.pop() == Attention{static_cast<double>(i)});

    SoftStack shallow(1, 3);
    shallow.push({1.0});
    shallow.push({2.0});
    CHECK_THROWS_AS(shallow.push({3.0}), ContractError);

    CHECK_THROWS_AS(SoftStack(2, 1), ContractError);
    CHECK_THROWS_AS(SoftStack(-1, 8), ContractError);
    SoftStack wrong(2);
    CHECK_THROWS_AS(wrong.push({1.0}), ContractError);
}

TEST_CASE("soft stack pointer stays a distribution under random valid traffic") {
    Rng rng(31337);
    for (int run = 0; run < 20; ++run) {
        SoftStack st(3);
        std::vector<Attention> reference;
        for (int op = 0; op < 200; ++op) {
            const bool can_push = reference.size() < 7;
            const bool do_push = reference.empty() || (can_push && rng.chance(0.55));
            if (do_push) {
                Attention a(3);
                for (double& v : a) v = rng.uniform();
                st.push(a);
                reference.push_back(a);
            } else {
                const Attention got = st.pop();
                const Attention want = reference.back();
                reference.pop_back();
                for (int i = 0; i < 3; ++i)
                    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
            }
            CHECK(st.pointer_sum() == doctest::Approx(1.0).epsilon(1e-9));
            for (double v : st.pointer()) CHECK(v >= 0.0);
        }
    }
}

TEST_CASE("soft stack mixing is convex per slot and pointer") {
    SoftStack a(2), b(2);
    a.push({1.0, 0.0});
    b.push({0.0, 1.0});
    b.push({0.5, 0.5});
    const SoftStack m = SoftStack::mix({0.25, 0.75}, {a, b});
    CHECK(m.pointer_sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.pointer()[1] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(m.pointer()[2] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(m.slot(1)[0] == doctest::Approx(0.25 * 1.0 + 0.75 * 0.0).epsilon(1e-12));
    CHECK(m.slot(1)[1] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(m.slot(2)[0] == doctest::Approx(0.75 * 0.5).epsilon(1e-12));
    CHECK_THROWS_AS(SoftStack::mix({0.5, 0.5}, {SoftStack(2), SoftStack(3)}),
                    ContractError);  // width differs between the blended states
    CHECK_THROWS_AS(SoftStack::mix({0.5}, std::vector<SoftStack>{}), ContractError);
}

// ---------------------------------------------------------------------------

TEST_CASE("hard-module soft execution mirrors the worked examples") {
    const TemporalSceneGraph g = hand_graph({
        {Shape::Cube, Color::Red, -1.0, 0.0},
        {Shape::Sphere, Color::Blue, 1.0, 0.0},
    });
    const GraphEncoding e = encode_graph(g);

    SoftAnswer red = exec_soft(prog({fcolor(Color::Red), term(StepKind::Count)}), e);
    CHECK(red.count == 1.0);
    CHECK(red.unit == "red object");
    CHECK(red.kind == AnswerKind::Count);
    CHECK(red.terminal_weights[0] == 1.0);

    const TemporalSceneGraph four = hand_graph({
        {Shape::Cube, Color::Red, -2.0, 0.0},
        {Shape::Cube, Color::Green, -1.0, 0.0},
        {Shape::Sphere, Color::Blue, 1.0, 0.0},
        {Shape::Cone, Color::Gray, 2.0, 0.0},
    });
    CHECK(exec_soft(prog({term(StepKind::Count)}), encode_graph(four)).count == 4.0);

    // an empty filter result degrades queries to a flagged uniform guess
    SoftAnswer degen = exec_soft(
        prog({fcolor(Color::Yellow), term(StepKind::QueryColor)}), encode_graph(four));
    CHECK(degen.degenerate);
    for (double v : degen.color_dist)
        CHECK(v == doctest::Approx(1.0 / kNumColors).epsilon(1e-12));

    // ambiguity does not throw here; it shows up as split mass
    SoftAnswer split =
        exec_soft(prog({fshape(Shape::Cube), term(StepKind::QueryColor)}), encode_graph(four));
    CHECK_FALSE(split.degenerate);
    CHECK(split.color_dist[static_cast<int>(Color::Red)] ==
          doctest::Approx(0.5).epsilon(1e-12));
    CHECK(split.color_dist[static_cast<int>(Color::Green)] ==
          doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("soft execution enforces the frame range and stack capacity") {
    const TemporalSceneGraph g = hand_graph({{Shape::Cube, Color::Red, 0.0, 0.0}}, 4);
    const GraphEncoding e = encode_graph(g);
    CHECK_THROWS_AS(exec_soft(prog({at_frame(4), term(StepKind::Count)}), e), ContractError);
    CHECK_THROWS_AS(exec_soft(prog({at_frame(9), term(StepKind::Count)}), e), ContractError);

    // the universe seed occupies one slot, so six more steps fit in depth 8
    std::vector<ProgramStep> six(6, fshape(Shape::Cube));
    six.push_back(term(StepKind::Count));
    CHECK(exec_soft(prog(six), e).count == 1.0);
    std::vector<ProgramStep> seven(7, fshape(Shape::Cube));
    seven.push_back(term(StepKind::Count));
    CHECK_THROWS_WITH_AS(exec_soft(prog(seven), e), "soft stack overflow", ContractError);

    SoftExecOptions deep;
    deep.stack_depth = 16;
    CHECK(exec_soft(prog(seven), e, deep).count == 1.0);
    SoftExecOptions tight;
    tight.stack_depth = 3;
    CHECK(exec_soft(prog({fshape(Shape::Cube), term(StepKind::Count)}), e, tight).count == 1.0);
    CHECK_THROWS_AS(exec_soft(prog({fshape(Shape::Cube), fshape(Shape::Cube),
                                    term(StepKind::Count)}),
                              e, tight),
                    ContractError);
}

TEST_CASE("encode_graph bakes visibility into the relation matrices") {
    SimConfig cfg;
    cfg.F = 12;
    const Scene scene = generate_scene(512, cfg);
    const TemporalSceneGraph g = built(scene);
    const GraphEncoding e = encode_graph(g);
    REQUIRE(e.N == static_cast<int>(g.objects.size()));
    REQUIRE(e.F == g.F);
    for (int f = 0; f < g.F; ++f)
        for (int r = 0; r < kNumRelations; ++r)
            for (int x = 0; x < e.N; ++x)
                for (int a = 0; a < e.N; ++a) {
                    const double got = e.relation[f][r][static_cast<size_t>(x) * e.N + a];
                    const bool both = g.objects[x].frames[f].visible &&
                                      g.objects[a].frames[f].visible && x != a;
                    const bool want =
                        both && spatial_relation(g, x, a, f, static_cast<Relation>(r));
                    CHECK(got == (want ? 1.0 : 0.0));
                }

    TemporalSceneGraph bad = hand_graph({{Shape::Cube, Color::Red, 0.0, 0.0}}, 2);
    bad.objects[0].frames.pop_back();
    CHECK_THROWS_AS(encode_graph(bad), ContractError);
    TemporalSceneGraph bad_ev = hand_graph({{Shape::Cube, Color::Red, 0.0, 0.0}});
    GraphEvent ev;
    ev.subject = 3;
    bad_ev.events.push_back(ev);
    CHECK_THROWS_AS(encode_graph(bad_ev), ContractError);
    TemporalSceneGraph no_frames;
    CHECK_THROWS_AS(encode_graph(no_frames), ContractError);
}

TEST_CASE("one-hot soft execution reproduces the symbolic executor exactly") {
    int compared = 0;
    for (uint64_t seed = 400; seed < 412; ++seed) {
        SimConfig cfg;
        cfg.F = 12;
        const Scene scene = generate_scene(seed, cfg);
        const TemporalSceneGraph g = built(scene);
        const GraphEncoding e = encode_graph(g);
        for (const Program& p : program_battery(g.F)) {
            auto [fate, want] = fate_of([&] { return exec_symbolic(p, g); });
            if (fate != Fate::Ok) continue;
            const Answer got = harden_answer(exec_soft(p, e));
            REQUIRE(got == want);
            ++compared;
        }
    }
    CHECK(compared > 400);
}

TEST_CASE("one-hot equivalence holds on adversarial synthetic graphs too") {
    Rng root(5555);
    int compared = 0;
    for (int it = 0; it < 2000; ++it) {
        Rng rng = root.fork(static_cast<uint64_t>(it));
        const TemporalSceneGraph g = random_graph(rng);
        Program p = random_program(rng, g.F);
        // the stack machine reads anchors from their slots, so any valid
        // anchor is fair game here (unlike the blended schedule)
        auto [fate, want] = fate_of([&] { return exec_symbolic(p, g); });
        if (fate != Fate::Ok) continue;
        const Answer got = harden_answer(exec_soft(p, encode_graph(g)));
        REQUIRE(got == want);
        ++compared;
    }
    // random programs frequently fault on ambiguity, which is fine; ~36%
    // of draws survive to a comparison under this seed
    CHECK(compared > 600);
}

TEST_CASE("hardening rounds, thresholds, and argmaxes the soft fields") {
    SoftAnswer s;
    CHECK_THROWS_AS(harden_answer(s), ContractError);

    s.kind = AnswerKind::Count;
    s.count = 2.4;
    s.unit = "cube";
    CHECK(harden_answer(s).count == 2);
    s.count = 2.6;
    CHECK(harden_answer(s).count == 3);
    s.count = -0.4;
    CHECK(harden_answer(s).count == 0);
    CHECK(harden_answer(s).unit == "cube");

    SoftAnswer b;
    b.kind = AnswerKind::Bool;
    b.exist = 0.5;
    CHECK_FALSE(harden_answer(b).truth);
    b.exist = 0.51;
    CHECK(harden_answer(b).truth);

    SoftAnswer c;
    c.kind = AnswerKind::Color;
    CHECK_THROWS_AS(harden_answer(c), ContractError);
    c.color_dist = {0.2, 0.2, 0.3, 0.1, 0.1, 0.1};
    CHECK(harden_answer(c).color == Color::Blue);
    c.color_dist = {0.3, 0.3, 0.1, 0.1, 0.1, 0.1};  // tie -> first
    CHECK(harden_answer(c).color == Color::Red);

    SoftAnswer act;
    act.kind = AnswerKind::Actions;
    act.action_presence = {0.9, 0.5, 0.51, 0.0};
    const Answer ha = harden_answer(act);
    REQUIRE(ha.actions.size() == 2);
    CHECK(ha.actions[0] == EventKind::Translate);
    CHECK(ha.actions[1] == EventKind::Contain);
}

// ---------------------------------------------------------------------------

TEST_CASE("a delta-weight blended run equals hard-module execution") {
    int compared = 0;
    for (uint64_t seed = 420; seed < 428; ++seed) {
        SimConfig cfg;
        cfg.F = 10;
        const Scene scene = generate_scene(seed, cfg);
        const GraphEncoding e = encode_graph(built(scene));
        for (const Program& p : program_battery(e.F)) {
            int frame_ctx = 0;
            const BlendedWeights w = delta_weights_for(p, &frame_ctx);
            const SoftAnswer hard = exec_soft(p, e);
            const SoftAnswer blended = exec_soft_blended(w, e, frame_ctx);
            // the schedule carries no noun, so the unit is not compared
            REQUIRE(soft_answers_close(hard, blended, 1e-6));
            ++compared;
        }
    }
    CHECK(compared > 400);
}

TEST_CASE("delta schedules surface the frame context and refuse deep anchors") {
    const Program with_frame =
        prog({fshape(Shape::Cube), at_frame(5), relate(Relation::Near, 0),
              term(StepKind::Count)});
    int frame_ctx = -1;
    const BlendedWeights w = delta_weights_for(with_frame, &frame_ctx);
    CHECK(frame_ctx == 5);
    REQUIRE(w.rows.size() == 4);
    CHECK(w.rows[0][1 + static_cast<int>(Shape::Cube)] == 1.0);
    CHECK(w.rows[1][0] == 1.0);  // AtFrame rides on NoOp
    CHECK(w.rows[2][10 + static_cast<int>(Relation::Near)] == 1.0);
    CHECK(w.rows[3][15] == 1.0);
    for (const auto& row : w.rows) {
        double sum = 0.0;
        for (double v : row) sum += v;
        CHECK(sum == 1.0);
    }

    // anchor 0 is not the latest set step, so the stack top is the wrong set
    const Program deep = prog({fshape(Shape::Cube), fcolor(Color::Red),
                               relate(Relation::Near, 0), term(StepKind::Count)});
    CHECK_THROWS_AS(delta_weights_for(deep, nullptr), ContractError);
}

TEST_CASE("blended execution mixes module outcomes convexly") {
    const TemporalSceneGraph g = hand_graph({
        {Shape::Cube, Color::Red, -1.0, 0.0},
        {Shape::Cube, Color::Green, 0.0, 0.0},
        {Shape::Sphere, Color::Blue, 1.0, 0.0},
    });
    const GraphEncoding e = encode_graph(g);

    // half cube-filter, half red-filter, then count
    BlendedWeights w;
    std::array<double, kNumModules> row0{};
    row0[1 + static_cast<int>(Shape::Cube)] = 0.5;
    row0[4 + static_cast<int>(Color::Red)] = 0.5;
    std::array<double, kNumModules> row1{};
    row1[15] = 1.0;
    w.rows = {row0, row1};
    const SoftAnswer a = exec_soft_blended(w, e);
    CHECK(a.count == doctest::Approx(0.5 * 2 + 0.5 * 1).epsilon(1e-12));
    CHECK(a.kind == AnswerKind::Count);
    CHECK(a.unit == "object");

    // mixing a push with a NoOp spreads the pointer; the pop then reads a
    // blend of the universe seed and the half-written filter slot
    std::array<double, kNumModules> spread{};
    spread[0] = 0.5;
    spread[1 + static_cast<int>(Shape::Cube)] = 0.5;
    w.rows = {spread, row1};
    const SoftAnswer b = exec_soft_blended(w, e);
    CHECK(b.count == doctest::Approx(0.5 * 3 + 0.25 * 2).epsilon(1e-12));

    // splitting the final step between terminals renormalizes their weights
    std::array<double, kNumModules> both{};
    both[15] = 0.25;
    both[16] = 0.75;
    w.rows = {row0, both};
    const SoftAnswer c = exec_soft_blended(w, e);
    CHECK(c.kind == AnswerKind::Bool);  // exist carries more mass
    CHECK(c.terminal_weights[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(c.terminal_weights[1] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(c.count == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(c.exist == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("blended execution rejects malformed schedules") {
    const GraphEncoding e = encode_graph(hand_graph({{Shape::Cube, Color::Red, 0.0, 0.0}}));
    BlendedWeights w;
    CHECK_THROWS_AS(exec_soft_blended(w, e), ContractError);  // empty

    std::array<double, kNumModules> bad{};
    bad[0] = 0.7;  // sums to 0.7
    w.rows = {bad};
    CHECK_THROWS_AS(exec_soft_blended(w, e), ContractError);

    std::array<double, kNumModules> neg{};
    neg[0] = 1.5;
    neg[1] = -0.5;
    w.rows = {neg};
    CHECK_THROWS_AS(exec_soft_blended(w, e), ContractError);

    std::array<double, kNumModules> noop{};
    noop[0] = 1.0;
    w.rows = {noop};
    CHECK_THROWS_WITH_AS(exec_soft_blended(w, e),
                         "final blended step carries no terminal weight", ContractError);

    // popping past the universe seed underflows
    std::array<double, kNumModules> count_row{};
    count_row[15] = 1.0;
    w.rows = {count_row, count_row};
    CHECK_THROWS_WITH_AS(exec_soft_blended(w, e), "soft stack underflow", ContractError);

    w.rows = {count_row};
    CHECK_THROWS_AS(exec_soft_blended(w, e, 3), ContractError);  // frame out of range
}

// ---------------------------------------------------------------------------

namespace {

// A three-step layout mixing filters, relations, and two terminals; used by
// the graph-path tests below.
struct LayoutFixture {
    std::vector<BlendedStepLayout> layout;
    std::vector<Parameter> logits;
    std::vector<Parameter*> logit_ptrs;

    LayoutFixture(std::vector<std::vector<int>> mods,
                  std::vector<std::vector<float>> raw) {
        for (auto& m : mods) layout.push_back({std::move(m)});
        for (size_t i = 0; i < raw.size(); ++i)
            logits.emplace_back("logits" + std::to_string(i),
                                Tensor({1, static_cast<int>(raw[i].size())}, raw[i]));
        for (auto& p : logits) logit_ptrs.push_back(&p);
    }

    // the numeric executor wants full-width rows
    BlendedWeights numeric_rows() const {
        BlendedWeights w;
        for (size_t i = 0; i < layout.size(); ++i) {
            const auto& mods = layout[i].modules;
            std::vector<double> ex(mods.size());
            double denom = 0.0;
            double hi = -1e300;
            for (size_t j = 0; j < mods.size(); ++j)
                hi = std::max(hi, static_cast<double>(logits[i].value.data[j]));
            for (size_t j = 0; j < mods.size(); ++j) {
                ex[j] = std::exp(static_cast<double>(logits[i].value.data[j]) - hi);
                denom += ex[j];
            }
            std::array<double, kNumModules> row{};
            for (size_t j = 0; j < mods.size(); ++j) row[mods[j]] = ex[j] / denom;
            w.rows.push_back(row);
        }
        return w;
    }
};

}  // namespace

TEST_CASE("graph-routed blended execution matches the numeric executor") {
    SimConfig cfg;
    cfg.F = 8;
    const GraphEncoding e = encode_graph(built(generate_scene(4242, cfg)));
    LayoutFixture fx({{1, 2, 4}, {14, 10}, {15, 16}},
                     {{0.3f, -0.2f, 0.5f}, {0.1f, 0.4f}, {0.2f, -0.1f}});

    const SoftAnswer numeric = exec_soft_blended(fx.numeric_rows(), e, 2);

    Graph gr;
    const BlendedGraphReadout ro =
        exec_soft_blended_graph(gr, e, fx.layout, fx.logit_ptrs, 2);
    REQUIRE(ro.count.valid());
    REQUIRE(ro.exist.valid());
    REQUIRE_FALSE(ro.color_dist.valid());
    REQUIRE(ro.terminal_mass.valid());

    // final step is all-terminal, so the readouts carry the renormalized mass
    CHECK(gr.value(ro.terminal_mass).data[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(gr.value(ro.count).data[0] ==
          doctest::Approx(numeric.terminal_weights[0] * numeric.count).epsilon(1e-4));
    CHECK(gr.value(ro.exist).data[0] ==
          doctest::Approx(numeric.terminal_weights[1] * numeric.exist).epsilon(1e-4));
}

TEST_CASE("graph-routed delta layout reproduces hard-module values") {
    SimConfig cfg;
    cfg.F = 8;
    const GraphEncoding e = encode_graph(built(generate_scene(777, cfg)));
    const Program p =
        prog({fshape(Shape::Cube), relate(Relation::Near, 0), term(StepKind::Count)});
    const SoftAnswer hard = exec_soft(p, e);

    LayoutFixture fx({{1 + static_cast<int>(Shape::Cube)},
                      {10 + static_cast<int>(Relation::Near)},
                      {15}},
                     {{0.7f}, {-1.2f}, {3.0f}});
    Graph gr;
    const BlendedGraphReadout ro =
        exec_soft_blended_graph(gr, e, fx.layout, fx.logit_ptrs, 0);
    CHECK(gr.value(ro.count).data[0] == doctest::Approx(hard.count).epsilon(1e-4));

    // query terminals flow through the normalizing division; the graph path
    // has no zero-mass fallback, so pin a graph where the referent is unique
    const GraphEncoding eq = encode_graph(hand_graph({
        {Shape::Cube, Color::Red, 0.0, 0.0},
        {Shape::Sphere, Color::Green, 0.5, 0.0},
        {Shape::Cone, Color::Blue, 2.5, -2.0},
    }));
    const Program pq =
        prog({fshape(Shape::Cube), relate(Relation::Near, 0), term(StepKind::QueryColor)});
    const SoftAnswer hq = exec_soft(pq, eq);
    REQUIRE_FALSE(hq.degenerate);
    LayoutFixture fq({{1 + static_cast<int>(Shape::Cube)},
                      {10 + static_cast<int>(Relation::Near)},
                      {17}},
                     {{0.0f}, {0.0f}, {0.0f}});
    Graph g2;
    const BlendedGraphReadout rq =
        exec_soft_blended_graph(g2, eq, fq.layout, fq.logit_ptrs, 0);
    REQUIRE(rq.color_dist.valid());
    const Tensor& dist = g2.value(rq.color_dist);
    REQUIRE(dist.numel() == kNumColors);
    CHECK(hq.color_dist[static_cast<int>(Color::Green)] ==
          doctest::Approx(1.0).epsilon(1e-12));
    for (int k = 0; k < kNumColors; ++k)
        CHECK(dist.data[k] == doctest::Approx(hq.color_dist[k]).epsilon(2e-4));
}

TEST_CASE("gradients flow through the blended graph to the step weights") {
    SimConfig cfg;
    cfg.F = 8;
    const GraphEncoding e = encode_graph(built(generate_scene(4242, cfg)));

    SUBCASE("count and exist readouts") {
        LayoutFixture fx({{1, 2, 4}, {14, 10}, {15, 16}},
                         {{0.3f, -0.2f, 0.5f}, {0.1f, 0.4f}, {0.2f, -0.1f}});
        auto build = [&](Graph& gr) {
            const BlendedGraphReadout ro =
                exec_soft_blended_graph(gr, e, fx.layout, fx.logit_ptrs, 2);
            return gr.add(gr.reshape(ro.count, {1}), gr.reshape(ro.exist, {1}));
        };
        auto loss_of = [&]() -> double {
            Graph gr;
            return gr.value(build(gr)).data[0];
        };
        auto backward_pass = [&] {
            Graph gr;
            gr.backward(build(gr));
        };
        Rng rng(99);
        const auto rep =
            svqa::testing::fd_check(loss_of, backward_pass, fx.logit_ptrs, 8, rng);
        CHECK(rep.checked >= 4);
        CHECK(rep.worst_rel < 1e-2);
    }

    SUBCASE("query readouts exercise the normalizers") {
        LayoutFixture fx({{1, 2, 4, 9}, {14, 11}, {17, 18, 19}},
                         {{0.3f, -0.2f, 0.5f, 0.0f}, {0.6f, -0.3f}, {0.2f, -0.1f, 0.4f}});
        Tensor cw({1, kNumColors}, {0.3f, -0.2f, 0.9f, 0.1f, -0.5f, 0.4f});
        Tensor sw({1, kNumShapes}, {1.2f, -0.4f, 0.3f});
        Tensor lw({1, 2}, {0.01f, -0.02f});
        auto build = [&](Graph& gr) {
            const BlendedGraphReadout ro =
                exec_soft_blended_graph(gr, e, fx.layout, fx.logit_ptrs, 1);
            NodeRef l = gr.sum(gr.mul(ro.color_dist, gr.constant(cw)));
            l = gr.add(l, gr.sum(gr.mul(ro.shape_dist, gr.constant(sw))));
            l = gr.add(l, gr.sum(gr.mul(ro.loc, gr.constant(lw))));
            return l;
        };
        auto loss_of = [&]() -> double {
            Graph gr;
            return gr.value(build(gr)).data[0];
        };
        auto backward_pass = [&] {
            Graph gr;
            gr.backward(build(gr));
        };
        Rng rng(100);
        const auto rep =
            svqa::testing::fd_check(loss_of, backward_pass, fx.logit_ptrs, 9, rng);
        CHECK(rep.checked >= 5);
        CHECK(rep.worst_rel < 1e-2);
    }
}

TEST_CASE("the blended graph path validates its layout") {
    const GraphEncoding e = encode_graph(hand_graph({{Shape::Cube, Color::Red, 0.0, 0.0}}));
    Graph gr;
    std::vector<BlendedStepLayout> empty;
    std::vector<Parameter*> none;
    CHECK_THROWS_AS(exec_soft_blended_graph(gr, e, empty, none, 0), ContractError);

    Parameter lg("lg", Tensor({1, 1}, {0.0f}));
    std::vector<Parameter*> one{&lg};
    std::vector<BlendedStepLayout> no_term{{{1}}};
    CHECK_THROWS_AS(exec_soft_blended_graph(gr, e, no_term, one, 0), ContractError);

    std::vector<BlendedStepLayout> bad_idx{{{kNumModules}}};
    CHECK_THROWS_AS(exec_soft_blended_graph(gr, e, bad_idx, one, 0), ContractError);

    std::vector<BlendedStepLayout> ok{{{15}}};
    Parameter wide("wide", Tensor({1, 3}, {0.0f, 0.0f, 0.0f}));
    std::vector<Parameter*> wrong{&wide};
    CHECK_THROWS_AS(exec_soft_blended_graph(gr, e, ok, wrong, 0), ContractError);
    CHECK_THROWS_AS(exec_soft_blended_graph(gr, e, ok, one, 5), ContractError);
}
