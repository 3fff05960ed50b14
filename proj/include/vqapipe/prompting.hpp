#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqapipe/captioning.hpp"
#include "vqapipe/errors.hpp"
#include "vqapipe/exemplar.hpp"
#include "vqapipe/gateway.hpp"
#include "vqapipe/hash.hpp"

namespace vqapipe {

struct AnswerConfig {
    DecodeMode mode = DecodeMode::greedy;  // greedy or beam
    std::uint32_t max_new_tokens = 5;
    std::uint32_t beam_width = 5;      // beam only
    double length_penalty = -1.0;      // beam only

    DecodeParams to_decode_params() const {
        DecodeParams p;
        p.mode = mode;
        p.max_new_tokens = max_new_tokens;
        if (mode == DecodeMode::beam) {
            p.beam_width = beam_width;
            p.length_penalty = length_penalty;
        }
        return p;
    }
};

// Greedy and greedy-tags captions answer with plain greedy decoding; the
// stochastic variants use beam search, width 5, length penalty -1. Max new
// tokens is 5 throughout.
inline AnswerConfig pair_strategy_to_config(const CaptionStrategy& strategy) {
    AnswerConfig cfg;
    switch (strategy.kind) {
        case StrategyKind::greedy:
        case StrategyKind::greedy_tags:
            cfg.mode = DecodeMode::greedy;
            break;
        case StrategyKind::stochastic:
        case StrategyKind::stochastic_summarized:
            cfg.mode = DecodeMode::beam;
            cfg.beam_width = 5;
            cfg.length_penalty = -1.0;
            break;
    }
    cfg.max_new_tokens = 5;
    return cfg;
}

// Few-shot QA prompt. Exemplars are rendered in ascending similarity so the
// most similar one sits adjacent to the query block; the query block ends
// with "Short Answer: " (trailing space, no newline).
inline std::string build_qa_prompt(const ShotSelection& shots, const std::string& query_context,
                                   const std::string& query_question) {
    if (text::trim(query_context).empty()) throw ValidationError("empty query context");
    if (text::trim(query_question).empty()) throw ValidationError("empty query question");

    std::string out;
    for (auto it = shots.exemplars.rbegin(); it != shots.exemplars.rend(); ++it) {
        if (it->greedy_caption.empty() || it->question.empty() || it->answer.empty())
            throw ValidationError("exemplar " + it->question_id + " has empty fields");
        out += "Context: " + it->greedy_caption + "\n";
        out += "Question: " + it->question + "\n";
        out += "Short Answer: " + text::to_lower(it->answer) + "\n\n";
    }
    out += "Context: " + query_context + "\n";
    out += "Question: " + query_question + "\n";
    out += "Short Answer: ";
    return out;
}

struct Prediction {
    std::string question_id;
    std::string raw_answer;
    std::string answer;  // lowercase(raw), trimmed
    std::string prompt_hash;
    std::size_t shots = 0;
    DecodePath path = DecodePath::local;
    bool empty_generation = false;  // scored 0 downstream, never aborts a batch
};

inline Prediction answer(const GenerationBackend& answerer, const std::string& prompt,
                         const AnswerConfig& config) {
    if (prompt.empty()) throw ValidationError("empty prompt");
    GenerationSession session = answerer.open_session(prompt);
    DecodedText result = answerer.generate(session, config.to_decode_params());

    Prediction p;
    p.raw_answer = result.text;
    p.answer = text::to_lower(text::trim(result.text));
    p.prompt_hash = sha256_hex(prompt);
    p.path = result.path;
    p.empty_generation = p.answer.empty();
    return p;
}

}  // namespace vqapipe
