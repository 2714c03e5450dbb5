#include "svqa/parser.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <unordered_map>

#include <json.hpp>

#include "svqa/embedded_resources.hpp"
#include "svqa/scenegraph.hpp"

namespace svqa {

using nlohmann::json;

std::string to_string(ParserKind k) {
    return k == ParserKind::Template ? "template" : "statistical";
}

namespace {

// --- lexicon -----------------------------------------------------------------

enum class TokKind { Word, ShapeVal, ColorVal, RelVal, Number };

struct Tok {
    TokKind kind = TokKind::Word;
    std::string word;  // canonical form, Word tokens only
    Shape shape = Shape::Cube;
    Color color = Color::Red;
    Relation rel = Relation::Near;
    int number = 0;
};

struct Lexicon {
    std::unordered_map<std::string, Shape> shapes;
    std::unordered_map<std::string, Color> colors;
    std::unordered_map<std::string, std::string> words;  // alias -> canonical
    // relation phrases, longest first so "in front of" beats "front of"
    std::vector<std::pair<std::vector<std::string>, Relation>> rel_phrases;
};

Lexicon load_lexicon() {
    json doc;
    try {
        doc = json::parse(detail::kSynonymsJson);
    } catch (const json::exception& e) {
        throw ContractError(std::string("synonym table does not parse: ") + e.what());
    }
    if (!doc.contains("version") || doc["version"].get<int>() != 1)
        throw ContractError("synonym table version must be 1");
    Lexicon lx;
    for (const auto& [canon, aliases] : doc.at("shapes").items()) {
        const Shape s = shape_from_string(canon);
        for (const auto& a : aliases) lx.shapes[a.get<std::string>()] = s;
    }
    for (const auto& [canon, aliases] : doc.at("colors").items()) {
        const Color c = color_from_string(canon);
        for (const auto& a : aliases) lx.colors[a.get<std::string>()] = c;
    }
    for (const auto& [canon, aliases] : doc.at("words").items())
        for (const auto& a : aliases) lx.words[a.get<std::string>()] = canon;
    for (const auto& [canon, phrases] : doc.at("relations").items()) {
        const Relation r = relation_from_string(canon);
        for (const auto& ph : phrases) {
            std::vector<std::string> tokens;
            for (const auto& w : ph) tokens.push_back(w.get<std::string>());
            if (tokens.empty()) throw ContractError("empty relation phrase in synonym table");
            lx.rel_phrases.emplace_back(std::move(tokens), r);
        }
    }
    std::stable_sort(lx.rel_phrases.begin(), lx.rel_phrases.end(),
                     [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
    return lx;
}

const Lexicon& lexicon() {
    static const Lexicon lx = load_lexicon();
    return lx;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
            cur += c;
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

bool all_digits(const std::string& w) {
    return !w.empty() && w.size() <= 4 &&
           std::all_of(w.begin(), w.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Pattern strings keep their <slot> brackets, so split on whitespace only.
std::vector<std::string> split_ws(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n') {
            if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

// Raw words -> canonical tokens: relation phrases collapse to one token,
// attribute aliases normalize, digit runs become numbers.
std::vector<Tok> canonicalize(const std::string& question) {
    const Lexicon& lx = lexicon();
    const std::vector<std::string> words = split_words(question);
    std::vector<Tok> out;
    size_t i = 0;
    while (i < words.size()) {
        bool phrase = false;
        for (const auto& [ph, rel] : lx.rel_phrases) {
            if (i + ph.size() > words.size()) continue;
            if (!std::equal(ph.begin(), ph.end(), words.begin() + static_cast<long>(i))) continue;
            Tok t;
            t.kind = TokKind::RelVal;
            t.rel = rel;
            out.push_back(t);
            i += ph.size();
            phrase = true;
            break;
        }
        if (phrase) continue;
        const std::string& w = words[i++];
        Tok t;
        if (auto it = lx.shapes.find(w); it != lx.shapes.end()) {
            t.kind = TokKind::ShapeVal;
            t.shape = it->second;
        } else if (auto it2 = lx.colors.find(w); it2 != lx.colors.end()) {
            t.kind = TokKind::ColorVal;
            t.color = it2->second;
        } else if (all_digits(w)) {
            t.kind = TokKind::Number;
            t.number = std::stoi(w);
        } else if (auto it3 = lx.words.find(w); it3 != lx.words.end()) {
            t.kind = TokKind::Word;
            t.word = it3->second;
        } else {
            t.kind = TokKind::Word;
            t.word = w;
        }
        out.push_back(t);
    }
    return out;
}

// --- template table ------------------------------------------------------------

enum class PatKind { Literal, ShapeSlot, ColorSlot, RelSlot, FrameSlot };

struct PatTok {
    PatKind kind = PatKind::Literal;
    std::string word;
};

struct PlanStep {
    StepKind op = StepKind::Count;
    bool needs_shape = false, needs_color = false, needs_rel = false, needs_frame = false;
    int anchor = -1;
};

struct TemplateDef {
    std::string name;
    std::string category;
    std::string pattern_text;
    std::vector<PatTok> pattern;
    std::vector<PlanStep> plan;
    std::map<std::string, int> signature;  // bag-of-words keyword vector
    double signature_norm = 0.0;
};

struct SlotValues {
    std::optional<Shape> shape;
    std::optional<Color> color;
    std::optional<Relation> rel;
    std::optional<int> frame;
};

std::optional<Program> instantiate(const TemplateDef& t, const SlotValues& sv) {
    Program p;
    for (const PlanStep& ps : t.plan) {
        ProgramStep step;
        step.kind = ps.op;
        if (ps.needs_shape) {
            if (!sv.shape) return std::nullopt;
            step.shape = *sv.shape;
        }
        if (ps.needs_color) {
            if (!sv.color) return std::nullopt;
            step.color = *sv.color;
        }
        if (ps.needs_rel) {
            if (!sv.rel) return std::nullopt;
            step.rel = *sv.rel;
            step.anchor = ps.anchor;
        }
        if (ps.needs_frame) {
            if (!sv.frame) return std::nullopt;
            step.frame = *sv.frame;
        }
        p.steps.push_back(step);
    }
    return p;
}

std::string marker_of(PatKind k) {
    switch (k) {
        case PatKind::ShapeSlot: return "#shape";
        case PatKind::ColorSlot: return "#color";
        case PatKind::RelSlot: return "#relation";
        case PatKind::FrameSlot: return "#frame";
        default: return "";
    }
}

std::vector<TemplateDef> load_templates() {
    json doc;
    try {
        doc = json::parse(detail::kTemplatesJson);
    } catch (const json::exception& e) {
        throw ContractError(std::string("template table does not parse: ") + e.what());
    }
    if (!doc.contains("version") || doc["version"].get<int>() != 1)
        throw ContractError("template table version must be 1");
    std::vector<TemplateDef> out;
    for (const auto& entry : doc.at("templates")) {
        TemplateDef t;
        t.name = entry.at("name").get<std::string>();
        t.category = entry.at("category").get<std::string>();
        t.pattern_text = entry.at("pattern").get<std::string>();
        for (const std::string& w : split_ws(t.pattern_text)) {
            PatTok pt;
            if (w == "<shape>")
                pt.kind = PatKind::ShapeSlot;
            else if (w == "<color>")
                pt.kind = PatKind::ColorSlot;
            else if (w == "<relation>")
                pt.kind = PatKind::RelSlot;
            else if (w == "<frame>")
                pt.kind = PatKind::FrameSlot;
            else {
                pt.kind = PatKind::Literal;
                pt.word = w;
            }
            t.pattern.push_back(pt);
        }
        for (const auto& js : entry.at("plan")) {
            PlanStep ps;
            ps.op = step_kind_from_string(js.at("op").get<std::string>());
            if (js.contains("slot")) {
                const std::string slot = js["slot"].get<std::string>();
                if (slot == "shape")
                    ps.needs_shape = true;
                else if (slot == "color")
                    ps.needs_color = true;
                else if (slot == "relation")
                    ps.needs_rel = true;
                else if (slot == "frame")
                    ps.needs_frame = true;
                else
                    throw ContractError("unknown slot '" + slot + "' in template " + t.name);
            }
            if (js.contains("anchor")) ps.anchor = js["anchor"].get<int>();
            t.plan.push_back(ps);
        }
        // keyword signature: literals plus one marker per slot
        for (const PatTok& pt : t.pattern)
            t.signature[pt.kind == PatKind::Literal ? pt.word : marker_of(pt.kind)] += 1;
        double sq = 0.0;
        for (const auto& [_, n] : t.signature) sq += static_cast<double>(n) * n;
        t.signature_norm = std::sqrt(sq);

        // a malformed plan is a resource bug; surface it at load, not at parse
        SlotValues dummy;
        dummy.shape = Shape::Cube;
        dummy.color = Color::Red;
        dummy.rel = Relation::Near;
        dummy.frame = 0;
        const std::optional<Program> probe = instantiate(t, dummy);
        if (!probe) throw ContractError("template " + t.name + " has an unfillable plan");
        validate_program(*probe);
        out.push_back(std::move(t));
    }
    if (out.empty()) throw ContractError("template table is empty");
    for (const char* need : {"count", "color", "shape", "location"}) {
        const bool found = std::any_of(out.begin(), out.end(),
                                       [&](const TemplateDef& t) { return t.category == need; });
        if (!found)
            throw ContractError(std::string("template table covers no '") + need +
                                "' questions");
    }
    return out;
}

const std::vector<TemplateDef>& templates() {
    static const std::vector<TemplateDef> table = load_templates();
    return table;
}

// --- shared helpers ------------------------------------------------------------

ParseResult none_result(ParserKind k) {
    ParseResult r;
    r.parser = k;
    return r;
}

SlotValues first_attributes(const std::vector<Tok>& toks) {
    SlotValues sv;
    for (const Tok& t : toks) {
        if (t.kind == TokKind::ShapeVal && !sv.shape) sv.shape = t.shape;
        if (t.kind == TokKind::ColorVal && !sv.color) sv.color = t.color;
        if (t.kind == TokKind::RelVal && !sv.rel) sv.rel = t.rel;
        if (t.kind == TokKind::Number && !sv.frame) sv.frame = t.number;
    }
    return sv;
}

}  // namespace

ParseResult parse_template(const std::string& question) {
    const std::vector<Tok> toks = canonicalize(question);
    if (toks.empty()) return none_result(ParserKind::Template);

    const TemplateDef* best = nullptr;
    SlotValues best_slots;
    size_t best_consumed = 0;
    for (const TemplateDef& t : templates()) {
        if (t.pattern.size() > toks.size()) continue;
        SlotValues sv;
        bool ok = true;
        for (size_t i = 0; i < t.pattern.size() && ok; ++i) {
            const PatTok& pt = t.pattern[i];
            const Tok& q = toks[i];
            switch (pt.kind) {
                case PatKind::Literal:
                    ok = q.kind == TokKind::Word && q.word == pt.word;
                    break;
                case PatKind::ShapeSlot:
                    ok = q.kind == TokKind::ShapeVal;
                    if (ok) sv.shape = q.shape;
                    break;
                case PatKind::ColorSlot:
                    ok = q.kind == TokKind::ColorVal;
                    if (ok) sv.color = q.color;
                    break;
                case PatKind::RelSlot:
                    ok = q.kind == TokKind::RelVal;
                    if (ok) sv.rel = q.rel;
                    break;
                case PatKind::FrameSlot:
                    ok = q.kind == TokKind::Number;
                    if (ok) sv.frame = q.number;
                    break;
            }
        }
        // longest consumption wins; ties keep the earlier table entry
        if (ok && t.pattern.size() > best_consumed) {
            best = &t;
            best_slots = sv;
            best_consumed = t.pattern.size();
        }
    }
    if (!best) return none_result(ParserKind::Template);

    std::optional<Program> p = instantiate(*best, best_slots);
    if (!p) return none_result(ParserKind::Template);
    ParseResult r;
    r.program = std::move(p);
    r.confidence = static_cast<double>(best_consumed) / static_cast<double>(toks.size());
    r.parser = ParserKind::Template;
    return r;
}

ParseResult parse_statistical(const std::string& question) {
    constexpr double kMinSimilarity = 0.2;
    const std::vector<Tok> toks = canonicalize(question);
    if (toks.empty()) return none_result(ParserKind::Statistical);

    std::map<std::string, int> bag;
    for (const Tok& t : toks) {
        switch (t.kind) {
            case TokKind::Word: bag[t.word] += 1; break;
            case TokKind::ShapeVal: bag["#shape"] += 1; break;
            case TokKind::ColorVal: bag["#color"] += 1; break;
            case TokKind::RelVal: bag["#relation"] += 1; break;
            case TokKind::Number: bag["#frame"] += 1; break;
        }
    }
    double qsq = 0.0;
    for (const auto& [_, n] : bag) qsq += static_cast<double>(n) * n;
    const double qnorm = std::sqrt(qsq);
    if (qnorm == 0.0) return none_result(ParserKind::Statistical);

    const auto& table = templates();
    std::vector<std::pair<double, size_t>> ranked;  // (similarity, table index)
    for (size_t i = 0; i < table.size(); ++i) {
        double dot = 0.0;
        for (const auto& [word, n] : table[i].signature) {
            auto it = bag.find(word);
            if (it != bag.end()) dot += static_cast<double>(n) * it->second;
        }
        ranked.emplace_back(dot / (qnorm * table[i].signature_norm), i);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    const SlotValues sv = first_attributes(toks);
    for (const auto& [sim, idx] : ranked) {
        if (sim < kMinSimilarity) break;
        std::optional<Program> p = instantiate(table[idx], sv);
        if (!p) continue;  // missing attribute words; try the next signature
        ParseResult r;
        r.program = std::move(p);
        r.confidence = std::min(sim, 1.0);
        r.parser = ParserKind::Statistical;
        return r;
    }
    return none_result(ParserKind::Statistical);
}

ParseResult arbitrate(const ParseResult& a, const ParseResult& b) {
    if (a.confidence > b.confidence) return a;
    if (b.confidence > a.confidence) return b;
    if (a.parser == ParserKind::Template) return a;
    if (b.parser == ParserKind::Template) return b;
    return a;
}

const std::vector<TemplateInfo>& template_table() {
    static const std::vector<TemplateInfo> info = [] {
        std::vector<TemplateInfo> out;
        for (const TemplateDef& t : templates()) out.push_back({t.name, t.pattern_text, t.category});
        return out;
    }();
    return info;
}

}  // namespace svqa
