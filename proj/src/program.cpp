#include "svqa/program.hpp"

#include <cmath>

#include <json.hpp>

namespace svqa {

using nlohmann::json;

std::string to_string(StepKind k) {
    switch (k) {
        case StepKind::FilterShape: return "filter_shape";
        case StepKind::FilterColor: return "filter_color";
        case StepKind::Relate: return "relate";
        case StepKind::AtFrame: return "at_frame";
        case StepKind::Count: return "count";
        case StepKind::Exist: return "exist";
        case StepKind::QueryColor: return "query_color";
        case StepKind::QueryShape: return "query_shape";
        case StepKind::QueryLocation: return "query_location";
        case StepKind::QueryAction: return "query_action";
    }
    throw ContractError("bad step kind value");
}

StepKind step_kind_from_string(const std::string& s) {
    if (s == "filter_shape") return StepKind::FilterShape;
    if (s == "filter_color") return StepKind::FilterColor;
    if (s == "relate") return StepKind::Relate;
    if (s == "at_frame") return StepKind::AtFrame;
    if (s == "count") return StepKind::Count;
    if (s == "exist") return StepKind::Exist;
    if (s == "query_color") return StepKind::QueryColor;
    if (s == "query_shape") return StepKind::QueryShape;
    if (s == "query_location") return StepKind::QueryLocation;
    if (s == "query_action") return StepKind::QueryAction;
    throw ContractError("unknown step kind '" + s + "'");
}

bool is_terminal(StepKind k) {
    switch (k) {
        case StepKind::Count:
        case StepKind::Exist:
        case StepKind::QueryColor:
        case StepKind::QueryShape:
        case StepKind::QueryLocation:
        case StepKind::QueryAction: return true;
        default: return false;
    }
}

namespace {

bool produces_set(StepKind k) {
    return k == StepKind::FilterShape || k == StepKind::FilterColor || k == StepKind::Relate;
}

}  // namespace

void validate_program(const Program& p) {
    if (p.steps.empty()) throw ContractError("program has no steps");
    for (size_t i = 0; i + 1 < p.steps.size(); ++i)
        if (is_terminal(p.steps[i].kind))
            throw ContractError("terminal step not last (step " + std::to_string(i) + ")");
    if (!is_terminal(p.steps.back().kind))
        throw ContractError("program does not end in a terminal step");
    for (size_t i = 0; i < p.steps.size(); ++i) {
        const ProgramStep& s = p.steps[i];
        if (s.kind == StepKind::Relate) {
            if (s.anchor < 0 || s.anchor >= static_cast<int>(i))
                throw ContractError("relate anchor must reference an earlier step");
            if (!produces_set(p.steps[s.anchor].kind))
                throw ContractError("relate anchor must reference a set-producing step");
        }
        if (s.kind == StepKind::AtFrame && s.frame < 0)
            throw ContractError("at_frame requires a non-negative frame");
    }
}

std::string to_string(Category c) {
    switch (c) {
        case Category::Count: return "count";
        case Category::Color: return "color";
        case Category::Shape: return "shape";
        case Category::Location: return "location";
    }
    throw ContractError("bad category value");
}

Category category_from_string(const std::string& s) {
    if (s == "count") return Category::Count;
    if (s == "color") return Category::Color;
    if (s == "shape") return Category::Shape;
    if (s == "location") return Category::Location;
    throw ContractError("unknown category '" + s + "'");
}

Category category_of(const Program& p) {
    validate_program(p);
    switch (p.steps.back().kind) {
        case StepKind::Count:
        case StepKind::Exist: return Category::Count;
        case StepKind::QueryColor: return Category::Color;
        case StepKind::QueryShape: return Category::Shape;
        case StepKind::QueryLocation: return Category::Location;
        case StepKind::QueryAction:
            throw ContractError("action questions fall outside the reported categories");
        default: throw ContractError("program has no terminal step");
    }
}

std::string program_to_json(const Program& p) {
    json steps = json::array();
    for (const ProgramStep& s : p.steps) {
        json j{{"op", to_string(s.kind)}};
        switch (s.kind) {
            case StepKind::FilterShape: j["shape"] = to_string(s.shape); break;
            case StepKind::FilterColor: j["color"] = to_string(s.color); break;
            case StepKind::Relate:
                j["relation"] = to_string(s.rel);
                j["anchor"] = s.anchor;
                break;
            case StepKind::AtFrame: j["frame"] = s.frame; break;
            default: break;
        }
        steps.push_back(j);
    }
    return steps.dump();
}

Program program_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("program JSON parse failure: ") + e.what());
    }
    if (!j.is_array()) throw IoError("program JSON must be a step array");
    Program p;
    try {
        for (const auto& s : j) {
            ProgramStep step;
            step.kind = step_kind_from_string(s.at("op").get<std::string>());
            switch (step.kind) {
                case StepKind::FilterShape:
                    step.shape = shape_from_string(s.at("shape").get<std::string>());
                    break;
                case StepKind::FilterColor:
                    step.color = color_from_string(s.at("color").get<std::string>());
                    break;
                case StepKind::Relate:
                    step.rel = relation_from_string(s.at("relation").get<std::string>());
                    step.anchor = s.at("anchor").get<int>();
                    break;
                case StepKind::AtFrame: step.frame = s.at("frame").get<int>(); break;
                default: break;
            }
            p.steps.push_back(step);
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("program JSON missing or mistyped field: ") + e.what());
    }
    validate_program(p);
    return p;
}

bool operator==(const Answer& a, const Answer& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case AnswerKind::None: return true;
        case AnswerKind::Count: return a.count == b.count && a.unit == b.unit;
        case AnswerKind::Bool: return a.truth == b.truth;
        case AnswerKind::Color: return a.color == b.color;
        case AnswerKind::Shape: return a.shape == b.shape;
        case AnswerKind::Location:
            return a.frame == b.frame && a.px == b.px && a.py == b.py;
        case AnswerKind::Actions: return a.actions == b.actions;
    }
    return false;
}

std::string answer_to_string(const Answer& a) {
    switch (a.kind) {
        case AnswerKind::None: return "(no answer)";
        case AnswerKind::Count:
            return std::to_string(a.count) + " " + (a.unit.empty() ? "object" : a.unit) +
                   (a.count == 1 ? "" : "s");
        case AnswerKind::Bool: return a.truth ? "yes" : "no";
        case AnswerKind::Color: return to_string(a.color);
        case AnswerKind::Shape: return to_string(a.shape);
        case AnswerKind::Location: {
            char buf[64];
            std::snprintf(buf, sizeof buf, "(%.1f, %.1f) at frame %d", a.px, a.py, a.frame);
            return buf;
        }
        case AnswerKind::Actions: {
            if (a.actions.empty()) return "nothing";
            std::string out;
            for (size_t i = 0; i < a.actions.size(); ++i) {
                if (i) out += ", ";
                out += to_string(a.actions[i]);
            }
            return out;
        }
    }
    return "(no answer)";
}

std::string answer_to_json(const Answer& a) {
    json j;
    switch (a.kind) {
        case AnswerKind::None: j["kind"] = "none"; break;
        case AnswerKind::Count:
            j["kind"] = "count";
            j["count"] = a.count;
            j["unit"] = a.unit;
            break;
        case AnswerKind::Bool:
            j["kind"] = "bool";
            j["value"] = a.truth;
            break;
        case AnswerKind::Color:
            j["kind"] = "color";
            j["color"] = to_string(a.color);
            break;
        case AnswerKind::Shape:
            j["kind"] = "shape";
            j["shape"] = to_string(a.shape);
            break;
        case AnswerKind::Location:
            j["kind"] = "location";
            j["frame"] = a.frame;
            j["px"] = a.px;
            j["py"] = a.py;
            break;
        case AnswerKind::Actions: {
            j["kind"] = "actions";
            json arr = json::array();
            for (EventKind k : a.actions) arr.push_back(to_string(k));
            j["actions"] = arr;
            break;
        }
    }
    return j.dump();
}

Answer answer_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("answer JSON parse failure: ") + e.what());
    }
    Answer a;
    try {
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "none") {
            a.kind = AnswerKind::None;
        } else if (kind == "count") {
            a.kind = AnswerKind::Count;
            a.count = j.at("count").get<int>();
            a.unit = j.at("unit").get<std::string>();
        } else if (kind == "bool") {
            a.kind = AnswerKind::Bool;
            a.truth = j.at("value").get<bool>();
        } else if (kind == "color") {
            a.kind = AnswerKind::Color;
            a.color = color_from_string(j.at("color").get<std::string>());
        } else if (kind == "shape") {
            a.kind = AnswerKind::Shape;
            a.shape = shape_from_string(j.at("shape").get<std::string>());
        } else if (kind == "location") {
            a.kind = AnswerKind::Location;
            a.frame = j.at("frame").get<int>();
            a.px = j.at("px").get<double>();
            a.py = j.at("py").get<double>();
        } else if (kind == "actions") {
            a.kind = AnswerKind::Actions;
            for (const auto& k : j.at("actions"))
                a.actions.push_back(event_kind_from_string(k.get<std::string>()));
        } else {
            throw IoError("unknown answer kind '" + kind + "'");
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("answer JSON missing or mistyped field: ") + e.what());
    }
    return a;
}

}  // namespace svqa
