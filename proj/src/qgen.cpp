#include "svqa/qgen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "svqa/softexec.hpp"

namespace svqa {

using nlohmann::json;

namespace {

std::string plural(const std::string& noun) { return noun + "s"; }

// Surface forms used when rendering; the parsers accept several synonyms,
// the generator always emits the canonical one.
std::string rel_surface(Relation r) {
    switch (r) {
        case Relation::Left: return "left of";
        case Relation::Right: return "right of";
        case Relation::Behind: return "behind";
        case Relation::Front: return "in front of";
        case Relation::Near: return "near";
    }
    throw ContractError("unknown relation");
}

std::string finish(std::string q) {
    q[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(q[0])));
    return q + "?";
}

struct Draft {
    std::string question;
    Program program;
};

Shape random_shape(Rng& rng) { return static_cast<Shape>(rng.uniform_int(0, kNumShapes - 1)); }
Color random_color(Rng& rng) { return static_cast<Color>(rng.uniform_int(0, kNumColors - 1)); }
Relation random_rel(Rng& rng) {
    return static_cast<Relation>(rng.uniform_int(0, kNumRelations - 1));
}

ProgramStep mk_fshape(Shape s) {
    ProgramStep st;
    st.kind = StepKind::FilterShape;
    st.shape = s;
    return st;
}
ProgramStep mk_fcolor(Color c) {
    ProgramStep st;
    st.kind = StepKind::FilterColor;
    st.color = c;
    return st;
}
ProgramStep mk_relate(Relation r) {
    ProgramStep st;
    st.kind = StepKind::Relate;
    st.rel = r;
    st.anchor = 0;
    return st;
}
ProgramStep mk_frame(int f) {
    ProgramStep st;
    st.kind = StepKind::AtFrame;
    st.frame = f;
    return st;
}
ProgramStep mk_term(StepKind k) {
    ProgramStep st;
    st.kind = k;
    return st;
}

Draft draft_count(Rng& rng, const TemporalSceneGraph& g) {
    (void)g;
    Draft d;
    switch (rng.uniform_int(0, 8)) {
        case 0: {
            const Shape s = random_shape(rng);
            d.question = "how many " + plural(to_string(s));
            d.program.steps = {mk_fshape(s), mk_term(StepKind::Count)};
            break;
        }
        case 1: {
            const Color c = random_color(rng);
            const Shape s = random_shape(rng);
            d.question = "how many " + to_string(c) + " " + plural(to_string(s));
            d.program.steps = {mk_fcolor(c), mk_fshape(s), mk_term(StepKind::Count)};
            break;
        }
        case 2: {
            const Color c = random_color(rng);
            d.question = "how many " + to_string(c) + " objects";
            d.program.steps = {mk_fcolor(c), mk_term(StepKind::Count)};
            break;
        }
        case 3:
            d.question = "how many objects";
            d.program.steps = {mk_term(StepKind::Count)};
            break;
        case 4: {
            const Relation r = random_rel(rng);
            const Shape s = random_shape(rng);
            d.question = "how many objects are " + rel_surface(r) + " the " + to_string(s);
            d.program.steps = {mk_fshape(s), mk_relate(r), mk_term(StepKind::Count)};
            break;
        }
        case 5: {
            const Shape s = random_shape(rng);
            d.question = "is there a " + to_string(s);
            d.program.steps = {mk_fshape(s), mk_term(StepKind::Exist)};
            break;
        }
        case 6: {
            const Shape s = random_shape(rng);
            d.question = "are there any " + plural(to_string(s));
            d.program.steps = {mk_fshape(s), mk_term(StepKind::Exist)};
            break;
        }
        case 7: {
            const Color c = random_color(rng);
            const Shape s = random_shape(rng);
            d.question = "is there a " + to_string(c) + " " + to_string(s);
            d.program.steps = {mk_fcolor(c), mk_fshape(s), mk_term(StepKind::Exist)};
            break;
        }
        default: {
            const Relation r = random_rel(rng);
            const Shape s = random_shape(rng);
            d.question = "is there anything " + rel_surface(r) + " the " + to_string(s);
            d.program.steps = {mk_fshape(s), mk_relate(r), mk_term(StepKind::Exist)};
            break;
        }
    }
    return d;
}

// Relate step anchored on a color+shape pair: [FilterColor, FilterShape,
// Relate(rel, anchor step 1), terminal]. Pairs are far likelier to name a
// unique anchor than a bare shape, which keeps query categories fillable on
// clips full of repeated shapes.
ProgramStep mk_relate_pair(Relation r) {
    ProgramStep st;
    st.kind = StepKind::Relate;
    st.rel = r;
    st.anchor = 1;
    return st;
}

// Query drafts bias their referent toward objects actually in the clip so a
// unique match is likely; the executor still has the final word.
Draft draft_color(Rng& rng, const TemporalSceneGraph& g) {
    Draft d;
    const ObjectTrack& pickobj = g.objects[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(g.objects.size()) - 1))];
    switch (rng.uniform_int(0, 2)) {
        case 0:
            d.question = "what color is the " + to_string(pickobj.shape);
            d.program.steps = {mk_fshape(pickobj.shape), mk_term(StepKind::QueryColor)};
            break;
        case 1: {
            const Relation r = random_rel(rng);
            d.question = "what color is the object " + rel_surface(r) + " the " +
                         to_string(pickobj.shape);
            d.program.steps = {mk_fshape(pickobj.shape), mk_relate(r),
                               mk_term(StepKind::QueryColor)};
            break;
        }
        default: {
            const Relation r = random_rel(rng);
            d.question = "what color is the object " + rel_surface(r) + " the " +
                         to_string(pickobj.color) + " " + to_string(pickobj.shape);
            d.program.steps = {mk_fcolor(pickobj.color), mk_fshape(pickobj.shape),
                               mk_relate_pair(r), mk_term(StepKind::QueryColor)};
            break;
        }
    }
    return d;
}

Draft draft_shape(Rng& rng, const TemporalSceneGraph& g) {
    Draft d;
    const ObjectTrack& pickobj = g.objects[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(g.objects.size()) - 1))];
    switch (rng.uniform_int(0, 2)) {
        case 0:
            d.question = "what shape is the " + to_string(pickobj.color) + " object";
            d.program.steps = {mk_fcolor(pickobj.color), mk_term(StepKind::QueryShape)};
            break;
        case 1: {
            const Relation r = random_rel(rng);
            d.question = "what shape is the object " + rel_surface(r) + " the " +
                         to_string(pickobj.shape);
            d.program.steps = {mk_fshape(pickobj.shape), mk_relate(r),
                               mk_term(StepKind::QueryShape)};
            break;
        }
        default: {
            const Relation r = random_rel(rng);
            d.question = "what shape is the object " + rel_surface(r) + " the " +
                         to_string(pickobj.color) + " " + to_string(pickobj.shape);
            d.program.steps = {mk_fcolor(pickobj.color), mk_fshape(pickobj.shape),
                               mk_relate_pair(r), mk_term(StepKind::QueryShape)};
            break;
        }
    }
    return d;
}

Draft draft_location(Rng& rng, const TemporalSceneGraph& g, int frame) {
    Draft d;
    const ObjectTrack& pickobj = g.objects[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(g.objects.size()) - 1))];
    const std::string at = " at frame " + std::to_string(frame);
    switch (rng.uniform_int(0, 2)) {
        case 0:
            d.question = "where is the " + to_string(pickobj.shape) + at;
            d.program.steps = {mk_fshape(pickobj.shape), mk_frame(frame),
                               mk_term(StepKind::QueryLocation)};
            break;
        case 1:
            d.question = "where is the " + to_string(pickobj.color) + " " +
                         to_string(pickobj.shape) + at;
            d.program.steps = {mk_fcolor(pickobj.color), mk_fshape(pickobj.shape),
                               mk_frame(frame), mk_term(StepKind::QueryLocation)};
            break;
        default:
            d.question = "where is the " + to_string(pickobj.color) + " object" + at;
            d.program.steps = {mk_fcolor(pickobj.color), mk_frame(frame),
                               mk_term(StepKind::QueryLocation)};
            break;
    }
    return d;
}

// A near question is only kept when every candidate distance to the anchor
// clears the threshold by 10% either way — threshold-straddling layouts make
// poor gold answers.
bool near_margins_ok(const Program& p, const TemporalSceneGraph& g) {
    int relate_at = -1;
    for (size_t i = 0; i < p.steps.size(); ++i)
        if (p.steps[i].kind == StepKind::Relate && p.steps[i].rel == Relation::Near)
            relate_at = static_cast<int>(i);
    if (relate_at < 0) return true;

    // resolve the anchor from the filter chain it points at
    const int anchor_step = p.steps[static_cast<size_t>(relate_at)].anchor;
    std::optional<Shape> want_shape;
    std::optional<Color> want_color;
    for (int i = 0; i <= anchor_step; ++i) {
        if (p.steps[static_cast<size_t>(i)].kind == StepKind::FilterShape)
            want_shape = p.steps[static_cast<size_t>(i)].shape;
        if (p.steps[static_cast<size_t>(i)].kind == StepKind::FilterColor)
            want_color = p.steps[static_cast<size_t>(i)].color;
    }
    int anchor = -1;
    for (const ObjectTrack& o : g.objects) {
        if (want_shape && o.shape != *want_shape) continue;
        if (want_color && o.color != *want_color) continue;
        if (anchor >= 0) return true;  // ambiguity is the executor's call
        anchor = o.id;
    }
    if (anchor < 0) return true;

    const double thr = kNearTau * (2.0 * kWorldHalf);
    const FrameState& fa = g.objects[static_cast<size_t>(anchor)].frames[0];
    for (const ObjectTrack& o : g.objects) {
        if (o.id == anchor) continue;
        const FrameState& fx = o.frames[0];
        const double d = std::hypot(fx.wx - fa.wx, fx.wy - fa.wy);
        if (std::abs(d - thr) < 0.1 * thr) return false;
    }
    return true;
}

}  // namespace

std::vector<QAItem> generate_questions(const TemporalSceneGraph& g, uint64_t seed,
                                       int n_per_category, const std::string& clip_ref) {
    if (g.objects.empty()) throw ContractError("question generation needs a non-empty graph");
    if (n_per_category < 0) throw ContractError("n_per_category must be non-negative");
    Rng root(seed);

    // five distinct frames for the location questions (fewer on short clips)
    Rng frame_rng = root.fork(100);
    std::vector<int> all_frames(static_cast<size_t>(g.F));
    for (int f = 0; f < g.F; ++f) all_frames[static_cast<size_t>(f)] = f;
    frame_rng.shuffle(all_frames);
    const int n_frames = std::min(5, g.F);
    std::vector<int> frame_pool(all_frames.begin(), all_frames.begin() + n_frames);

    std::vector<QAItem> out;
    const Category cats[4] = {Category::Count, Category::Color, Category::Shape,
                              Category::Location};
    for (int ci = 0; ci < 4; ++ci) {
        const Category cat = cats[ci];
        Rng rng = root.fork(static_cast<uint64_t>(ci + 1));
        std::set<std::string> used;
        int filled = 0;
        int attempts = 0;

        // every corpus leads with the bare per-shape counting questions, so
        // clips stay comparable; the random tail supplies the diversity
        std::vector<Draft> seeded;
        if (cat == Category::Count) {
            for (Shape s : {Shape::Cone, Shape::Sphere, Shape::Cube}) {
                Draft d;
                d.question = "how many " + plural(to_string(s));
                d.program.steps = {mk_fshape(s), mk_term(StepKind::Count)};
                seeded.push_back(std::move(d));
            }
        }

        while (filled < n_per_category) {
            if (++attempts > 1000)
                throw ContractError("question generation could not fill category '" +
                                    to_string(cat) + "' after 1000 attempts");
            Draft d;
            if (!seeded.empty()) {
                d = std::move(seeded.back());
                seeded.pop_back();
            } else {
                switch (cat) {
                    case Category::Count: d = draft_count(rng, g); break;
                    case Category::Color: d = draft_color(rng, g); break;
                    case Category::Shape: d = draft_shape(rng, g); break;
                    case Category::Location:
                        d = draft_location(rng, g,
                                           frame_pool[static_cast<size_t>(filled) %
                                                      frame_pool.size()]);
                        break;
                }
            }
            if (used.count(d.question)) continue;
            validate_program(d.program);
            if (!near_margins_ok(d.program, g)) continue;
            Answer gold;
            try {
                gold = exec_symbolic(d.program, g);
            } catch (const ExecError&) {
                continue;  // ambiguous or undefined draft; resample
            }
            QAItem item;
            item.question = finish(d.question);
            item.program = std::move(d.program);
            item.answer = std::move(gold);
            item.category = cat;
            item.clip = clip_ref;
            out.push_back(std::move(item));
            used.insert(d.question);
            ++filled;
        }
    }
    return out;
}

std::string qa_to_jsonl(const std::vector<QAItem>& items) {
    std::string out;
    for (const QAItem& it : items) {
        json row;
        row["question"] = it.question;
        row["program"] = json::parse(program_to_json(it.program));
        row["answer"] = json::parse(answer_to_json(it.answer));
        row["category"] = to_string(it.category);
        row["clip"] = it.clip;
        out += row.dump();
        out += '\n';
    }
    return out;
}

std::vector<QAItem> qa_from_jsonl(const std::string& text) {
    std::vector<QAItem> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json row;
        try {
            row = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError("corpus line " + std::to_string(lineno) + ": " + e.what());
        }
        try {
            QAItem it;
            it.question = row.at("question").get<std::string>();
            it.program = program_from_json(row.at("program").dump());
            it.answer = answer_from_json(row.at("answer").dump());
            it.category = category_from_string(row.at("category").get<std::string>());
            it.clip = row.value("clip", std::string());
            out.push_back(std::move(it));
        } catch (const json::exception& e) {
            throw IoError("corpus line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace svqa
