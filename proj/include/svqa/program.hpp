#pragma once

#include <string>
#include <vector>

#include "svqa/scenegraph.hpp"

namespace svqa {

// A question compiles to a short typed program over the scene graph.
// Filters narrow a candidate set, Relate re-anchors it through a spatial
// relation, AtFrame sets the time context, and exactly one terminal step
// (Count/Exist/Query*) reduces the set to an answer.
enum class StepKind {
    FilterShape,
    FilterColor,
    Relate,
    AtFrame,
    Count,
    Exist,
    QueryColor,
    QueryShape,
    QueryLocation,
    QueryAction,
};

std::string to_string(StepKind k);
StepKind step_kind_from_string(const std::string& s);
bool is_terminal(StepKind k);

struct ProgramStep {
    StepKind kind = StepKind::Count;
    Shape shape = Shape::Cube;      // FilterShape
    Color color = Color::Red;       // FilterColor
    Relation rel = Relation::Near;  // Relate
    int anchor = -1;                // Relate: index of the earlier step whose set anchors it
    int frame = 0;                  // AtFrame
};

struct Program {
    std::vector<ProgramStep> steps;
};

// Exactly one terminal and it is last; Relate anchors point at an earlier
// set-producing step. Throws ContractError otherwise.
void validate_program(const Program& p);

std::string program_to_json(const Program& p);
Program program_from_json(const std::string& text);

// The four reported question categories.
enum class Category { Count, Color, Shape, Location };
constexpr int kNumCategories = 4;
std::string to_string(Category c);
Category category_from_string(const std::string& s);
Category category_of(const Program& p);  // from the terminal step

enum class AnswerKind { None, Count, Bool, Color, Shape, Location, Actions };

// Tagged union of the answer domains. Count answers carry the canonical
// noun they counted (e.g. "red cube", "object") so graders can tell a wrong
// number from an answer to a different question.
struct Answer {
    AnswerKind kind = AnswerKind::None;
    int count = 0;
    std::string unit;  // Count only
    bool truth = false;
    Color color = Color::Red;
    Shape shape = Shape::Cube;
    int frame = 0;  // Location only
    double px = 0.0, py = 0.0;
    std::vector<EventKind> actions;  // distinct kinds, sorted
};

bool operator==(const Answer& a, const Answer& b);

std::string answer_to_string(const Answer& a);
std::string answer_to_json(const Answer& a);
Answer answer_from_json(const std::string& text);

}  // namespace svqa
