#pragma once

#include <string>
#include <vector>

#include "svqa/program.hpp"
#include "svqa/scenegraph.hpp"

namespace svqa {

// One generated question with its gold program and gold answer.
struct QAItem {
    std::string question;
    Program program;
    Answer answer;
    Category category = Category::Count;
    std::string clip;  // reference to the source clip (id or file stem)
};

// Renders grammar-clean questions against a scene graph, n per category.
// Gold answers always come from the symbolic executor; drafts it rejects
// (non-unique referents, undefined relations) are resampled, as are near
// questions whose distances sit within 10% of the near threshold. Location
// questions draw their frames from five distinct randomly chosen frames
// whenever the clip has at least five.
//
// Throws if a category cannot be filled after 1000 attempts, naming it.
std::vector<QAItem> generate_questions(const TemporalSceneGraph& g, uint64_t seed,
                                       int n_per_category,
                                       const std::string& clip_ref = "");

// JSON-lines corpus: one item per line.
std::string qa_to_jsonl(const std::vector<QAItem>& items);
std::vector<QAItem> qa_from_jsonl(const std::string& text);

}  // namespace svqa
