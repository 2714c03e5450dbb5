#pragma once

#include <optional>
#include <string>
#include <vector>

#include "svqa/program.hpp"

namespace svqa {

// Two independent question parsers over the same template grammar, plus the
// confidence arbitration that picks between them.
//
// The template parser anchors a pattern at the start of the question and
// scores by the fraction of tokens it consumed, so politeness prefixes make
// it fail outright while trailing filler only dilutes its confidence. The
// statistical parser scores bag-of-words cosine similarity between the
// question and each template's keyword signature, then instantiates the best
// template from attribute words found anywhere in the question — robust to
// reordering and filler, at the price of a softer confidence scale. Both
// scales live in [0, 1] so the arbiter can compare them directly.

enum class ParserKind { Template, Statistical };

std::string to_string(ParserKind k);

struct ParseResult {
    std::optional<Program> program;  // absent when the parser found nothing
    double confidence = 0.0;         // in [0,1]; 0 whenever program is absent
    ParserKind parser = ParserKind::Template;
};

// Exact grammar match anchored at the first token. Confidence = consumed
// tokens / total tokens; 1.0 means the pattern covered the whole question.
ParseResult parse_template(const std::string& question);

// Cosine similarity against every template signature; similarity below 0.2
// (or unfillable slots) yields none. Confidence = the winning similarity.
ParseResult parse_statistical(const std::string& question);

// Strictly higher confidence wins; exact ties go to the Template parser.
// Always returns one of its arguments.
ParseResult arbitrate(const ParseResult& a, const ParseResult& b);

// Introspection over the shipped grammar, for tooling and tests.
struct TemplateInfo {
    std::string name;
    std::string pattern;
    std::string category;  // count | color | shape | location | action
};

const std::vector<TemplateInfo>& template_table();

}  // namespace svqa
