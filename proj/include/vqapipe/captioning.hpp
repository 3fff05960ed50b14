#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "vqapipe/errors.hpp"
#include "vqapipe/gateway.hpp"
#include "vqapipe/rng.hpp"

namespace vqapipe {

enum class StrategyKind { greedy, greedy_tags, stochastic, stochastic_summarized };

inline const char* to_string(StrategyKind k) {
    switch (k) {
        case StrategyKind::greedy: return "greedy";
        case StrategyKind::greedy_tags: return "greedy-tags";
        case StrategyKind::stochastic: return "stochastic";
        case StrategyKind::stochastic_summarized: return "stochastic-summarized";
    }
    return "?";
}

inline StrategyKind strategy_from_string(const std::string& s) {
    if (s == "greedy") return StrategyKind::greedy;
    if (s == "greedy-tags") return StrategyKind::greedy_tags;
    if (s == "stochastic") return StrategyKind::stochastic;
    if (s == "stochastic-summarized") return StrategyKind::stochastic_summarized;
    throw ConfigurationError("unknown captioning strategy: " + s);
}

struct CaptionStrategy {
    StrategyKind kind = StrategyKind::greedy;
    std::uint32_t k = 50;
    std::uint32_t n_samples = 20;
    double tag_threshold = 0.4;
    std::uint32_t max_caption_tokens = 16;

    void validate() const {
        if (k < 1) throw ValidationError("strategy k must be >= 1");
        if (n_samples < 1) throw ValidationError("strategy N must be >= 1");
        if (tag_threshold < 0.0 || tag_threshold > 1.0)
            throw ValidationError("tag threshold must be in [0,1]");
        if (max_caption_tokens < 1) throw ValidationError("max caption tokens must be >= 1");
    }

    // Stable identity string used in cache keys and output records.
    std::string fingerprint() const {
        std::ostringstream out;
        out << to_string(kind) << ";k=" << k << ";N=" << n_samples << ";tag=" << tag_threshold
            << ";maxtok=" << max_caption_tokens;
        return out.str();
    }
};

struct Caption {
    std::string text;
    CaptionStrategy strategy;
    std::vector<std::uint64_t> sample_seeds;  // one per sample for stochastic variants
    DecodePath source_path = DecodePath::local;
    std::vector<std::string> warnings;
};

struct CaptionSet {
    std::string image_id;
    std::vector<std::string> samples;
    std::string combined;
    std::vector<std::uint64_t> sample_seeds;
    DecodePath source_path = DecodePath::local;
};

enum class DetectorFailurePolicy { fail, fallback_greedy };

struct CaptioningContext {
    const GenerationBackend* captioner = nullptr;
    const DetectorBackend* detector = nullptr;
    const ChatBackend* chat = nullptr;
    std::vector<std::string> detector_vocabulary;
    DetectorFailurePolicy detector_policy = DetectorFailurePolicy::fail;
};

namespace text {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// Trim plus at most one trailing period; used before period-joining.
inline std::string strip_sentence(std::string_view s) {
    std::string t = trim(s);
    if (!t.empty() && t.back() == '.') t.pop_back();
    return trim(t);
}

}  // namespace text

// " <tag1>, <tag2>, <tag3>." with duplicates dropped in first-occurrence
// order; empty input gives the empty string.
inline std::string format_tag_suffix(const std::vector<DetectedTag>& tags) {
    std::vector<std::string> seen;
    for (const DetectedTag& t : tags)
        if (std::find(seen.begin(), seen.end(), t.category) == seen.end())
            seen.push_back(t.category);
    if (seen.empty()) return "";
    std::string out = " ";
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (i > 0) out += ", ";
        out += seen[i];
    }
    out += ".";
    return out;
}

// "<s1>. <s2>. ... <sN>." with each sample trimmed and normalized to a
// single trailing period.
inline std::string concat_captions(const std::vector<std::string>& samples) {
    if (samples.empty()) throw ValidationError("cannot concatenate an empty caption list");
    std::string out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::string s = text::strip_sentence(samples[i]);
        if (s.empty()) throw ValidationError("caption sample " + std::to_string(i) + " is empty");
        if (i > 0) out += ' ';
        out += s;
        out += '.';
    }
    return out;
}

inline Caption caption_greedy(const CaptioningContext& ctx, const std::string& image_id,
                              const CaptionStrategy& strategy) {
    if (!ctx.captioner) throw ConfigurationError("no captioner backend configured");
    GenerationSession session = ctx.captioner->open_session(image_id);
    DecodeParams params;
    params.mode = DecodeMode::greedy;
    params.max_new_tokens = strategy.max_caption_tokens;
    DecodedText result = ctx.captioner->generate(session, params);
    std::string trimmed = text::trim(result.text);
    if (trimmed.empty()) throw ValidationError("captioner produced an empty caption for " + image_id);
    Caption c;
    c.text = std::move(trimmed);
    c.strategy = strategy;
    c.strategy.kind = StrategyKind::greedy;
    c.source_path = result.path;
    return c;
}

inline Caption caption_with_tags(const CaptioningContext& ctx, const std::string& image_id,
                                 const CaptionStrategy& strategy) {
    Caption base = caption_greedy(ctx, image_id, strategy);
    base.strategy.kind = StrategyKind::greedy_tags;
    if (!ctx.detector) throw ConfigurationError("no detector backend configured");

    std::vector<DetectedTag> tags;
    try {
        tags = ctx.detector->detect(image_id, ctx.detector_vocabulary, strategy.tag_threshold);
    } catch (const Error& e) {
        if (ctx.detector_policy == DetectorFailurePolicy::fail) throw;
        base.warnings.push_back(std::string("detector failed, fell back to greedy: ") + e.what());
        return base;
    }

    if (base.text.back() != '.') base.text += '.';
    base.text += format_tag_suffix(tags);
    return base;
}

inline CaptionSet caption_stochastic(const CaptioningContext& ctx, const std::string& image_id,
                                     const CaptionStrategy& strategy, std::uint64_t run_seed) {
    if (!ctx.captioner) throw ConfigurationError("no captioner backend configured");
    strategy.validate();
    GenerationSession session = ctx.captioner->open_session(image_id);

    CaptionSet set;
    set.image_id = image_id;
    set.samples.reserve(strategy.n_samples);
    set.sample_seeds.reserve(strategy.n_samples);
    for (std::uint32_t i = 0; i < strategy.n_samples; ++i) {
        DecodeParams params;
        params.mode = DecodeMode::topk;
        params.k = strategy.k;
        params.max_new_tokens = strategy.max_caption_tokens;
        params.seed = sample_stream_seed(run_seed, image_id, i);
        DecodedText result = ctx.captioner->generate(session, params);
        std::string sample = text::trim(result.text);
        if (sample.empty())
            throw ValidationError("empty stochastic caption sample for " + image_id);
        set.samples.push_back(std::move(sample));
        set.sample_seeds.push_back(params.seed);
        set.source_path = result.path;
    }
    set.combined = concat_captions(set.samples);
    return set;
}

// Summarization prompt, byte-stable: numbered captions framed by the
// system and closing instructions.
inline std::string build_summarize_prompt(const std::vector<std::string>& samples) {
    if (samples.empty()) throw ValidationError("cannot summarize an empty caption list");
    std::string out =
        "<s>[INST] <<SYS>> Below contains some sentences that describes the same image. "
        "Write a response that summarizes all the sentences. "
        "Keep all details and descriptions as much as possible. <</SYS>>\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out += std::to_string(i + 1);
        out += ". ";
        out += text::strip_sentence(samples[i]);
        out += ".\n";
    }
    out +=
        "\nThe above sentences describe the same image. Summarize the sentences above. "
        "Keep all the details and descriptions as much as possible. "
        "Begin your answer after the word ``answer:\" [/INST]";
    return out;
}

struct SummaryExtraction {
    std::string text;
    bool marker_found = true;
};

// Takes everything after the first case-insensitive "answer:"; without a
// marker the whole output is used and the item is flagged.
inline SummaryExtraction extract_summary(const std::string& chat_output) {
    static const std::string marker = "answer:";
    std::string lowered = text::to_lower(chat_output);
    std::size_t pos = lowered.find(marker);
    SummaryExtraction out;
    if (pos == std::string::npos) {
        out.text = text::trim(chat_output);
        out.marker_found = false;
    } else {
        out.text = text::trim(chat_output.substr(pos + marker.size()));
    }
    if (out.text.empty()) throw ValidationError("summary extraction produced an empty context");
    return out;
}

inline Caption caption_summarized(const CaptioningContext& ctx, const std::string& image_id,
                                  const CaptionStrategy& strategy, std::uint64_t run_seed) {
    if (!ctx.chat) throw ConfigurationError("no chat backend configured");
    CaptionSet set = caption_stochastic(ctx, image_id, strategy, run_seed);
    std::string prompt = build_summarize_prompt(set.samples);
    std::string completion;
    try {
        completion = ctx.chat->chat_complete(prompt);
    } catch (const Error& e) {
        throw BackendError(std::string("stage summarize: ") + e.what());
    }
    SummaryExtraction extracted = extract_summary(completion);

    Caption c;
    c.text = extracted.text;
    c.strategy = strategy;
    c.strategy.kind = StrategyKind::stochastic_summarized;
    c.sample_seeds = set.sample_seeds;
    c.source_path = set.source_path;
    if (!extracted.marker_found) c.warnings.push_back("summary missing 'answer:' marker");
    return c;
}

// Strategy dispatch used by the pipeline; the caption text is the prompt
// "Context" for the query image.
inline Caption caption_for_strategy(const CaptioningContext& ctx, const std::string& image_id,
                                    const CaptionStrategy& strategy, std::uint64_t run_seed) {
    strategy.validate();
    switch (strategy.kind) {
        case StrategyKind::greedy:
            return caption_greedy(ctx, image_id, strategy);
        case StrategyKind::greedy_tags:
            return caption_with_tags(ctx, image_id, strategy);
        case StrategyKind::stochastic: {
            CaptionSet set = caption_stochastic(ctx, image_id, strategy, run_seed);
            Caption c;
            c.text = set.combined;
            c.strategy = strategy;
            c.sample_seeds = set.sample_seeds;
            c.source_path = set.source_path;
            return c;
        }
        case StrategyKind::stochastic_summarized:
            return caption_summarized(ctx, image_id, strategy, run_seed);
    }
    throw ConfigurationError("unknown strategy kind");
}

}  // namespace vqapipe
