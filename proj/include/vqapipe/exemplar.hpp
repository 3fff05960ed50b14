#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "vqapipe/captioning.hpp"
#include "vqapipe/errors.hpp"
#include "vqapipe/gateway.hpp"

namespace vqapipe {

enum class SelectionMode { question_only, image_question };

inline const char* to_string(SelectionMode m) {
    return m == SelectionMode::question_only ? "question-only" : "image+question";
}

inline SelectionMode selection_mode_from_string(const std::string& s) {
    if (s == "question-only") return SelectionMode::question_only;
    if (s == "image+question") return SelectionMode::image_question;
    throw ConfigurationError("unknown selection mode: " + s);
}

// A solved train-set example: question, ground-truth answer, greedy caption,
// unit-norm question and image embeddings.
struct Exemplar {
    std::string question_id;
    std::string image_id;
    std::string question;
    std::string answer;  // lowercased at ingestion
    std::string greedy_caption;
    EmbeddingVector q_emb;
    EmbeddingVector i_emb;
};

struct ExemplarIndex {
    std::vector<Exemplar> entries;
    std::size_t dim = 0;
    SelectionMode selection_mode = SelectionMode::image_question;
};

struct ShotSelection {
    std::vector<Exemplar> exemplars;  // most-similar first
    std::vector<double> scores;       // non-increasing
};

// Unit-norm inputs, so cosine is the dot product.
inline double cosine(const EmbeddingVector& u, const EmbeddingVector& v) { return u.dot(v); }

inline double combined_similarity(double sim_q, double sim_i, SelectionMode mode) {
    return mode == SelectionMode::image_question ? 0.5 * (sim_q + sim_i) : sim_q;
}

// Exact full-sort ranking: descending combined similarity, ties broken by
// ascending question_id. n larger than the index is an error, never a clamp.
inline ShotSelection select_shots(const ExemplarIndex& index, const EmbeddingVector& q_emb,
                                  const std::optional<EmbeddingVector>& i_emb, std::size_t n) {
    if (n > index.entries.size())
        throw ValidationError("requested " + std::to_string(n) + " shots from an index of " +
                              std::to_string(index.entries.size()));
    ShotSelection out;
    if (n == 0) return out;

    if (index.selection_mode == SelectionMode::image_question && !i_emb)
        throw ValidationError("image+question selection requires an image embedding");

    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(index.entries.size());
    for (std::size_t i = 0; i < index.entries.size(); ++i) {
        const Exemplar& e = index.entries[i];
        double sim_q = cosine(q_emb, e.q_emb);
        double sim_i = i_emb ? cosine(*i_emb, e.i_emb) : 0.0;
        ranked.emplace_back(combined_similarity(sim_q, sim_i, index.selection_mode), i);
    }
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return index.entries[a.second].question_id < index.entries[b.second].question_id;
    });

    out.exemplars.reserve(n);
    out.scores.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.exemplars.push_back(index.entries[ranked[i].second]);
        out.scores.push_back(ranked[i].first);
    }
    return out;
}

struct ExemplarSource {
    std::string question_id;
    std::string image_id;
    std::string question;
    std::string answer;
    std::string greedy_caption;
    std::optional<EmbeddingVector> q_emb;  // precomputed; else embedded at build
    std::optional<EmbeddingVector> i_emb;
};

inline ExemplarIndex build_index(const std::vector<ExemplarSource>& samples,
                                 const EmbedderBackend* embedder,
                                 SelectionMode mode = SelectionMode::image_question) {
    ExemplarIndex index;
    index.selection_mode = mode;
    std::unordered_set<std::string> seen_ids;
    for (const ExemplarSource& s : samples) {
        if (s.question.empty() || s.answer.empty() || s.greedy_caption.empty())
            throw ValidationError("exemplar " + s.question_id + " missing question/answer/caption");
        if (!seen_ids.insert(s.question_id).second)
            throw ValidationError("duplicate question_id in index build: " + s.question_id);

        Exemplar e;
        e.question_id = s.question_id;
        e.image_id = s.image_id;
        e.question = s.question;
        e.answer = text::to_lower(text::trim(s.answer));
        e.greedy_caption = s.greedy_caption;

        if (s.q_emb) {
            e.q_emb = *s.q_emb;
        } else if (embedder) {
            e.q_emb = embedder->embed_text(s.question);
        } else {
            throw ValidationError("exemplar " + s.question_id + " has no question embedding");
        }
        if (s.i_emb) {
            e.i_emb = *s.i_emb;
        } else if (embedder) {
            e.i_emb = embedder->embed_image(s.image_id);
        } else {
            throw ValidationError("exemplar " + s.question_id + " has no image embedding");
        }
        e.q_emb.normalize();
        e.i_emb.normalize();

        if (e.q_emb.dim() != e.i_emb.dim())
            throw ConfigurationError("embedding dimensions disagree for " + s.question_id);
        if (index.dim == 0)
            index.dim = e.q_emb.dim();
        else if (e.q_emb.dim() != index.dim)
            throw ConfigurationError("embedding dimension " + std::to_string(e.q_emb.dim()) +
                                     " does not match index dimension " + std::to_string(index.dim));
        index.entries.push_back(std::move(e));
    }
    return index;
}

// ---------------------------------------------------------------------------
// Persistence. One header record then one canonical JSON line per exemplar.
// ---------------------------------------------------------------------------

inline void save_index(const ExemplarIndex& index, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigurationError("cannot open index file for writing: " + path);
    nlohmann::json header = {{"count", index.entries.size()},
                             {"dim", index.dim},
                             {"selection_mode", to_string(index.selection_mode)}};
    out << header.dump() << '\n';
    for (const Exemplar& e : index.entries) {
        nlohmann::json line = {{"question_id", e.question_id}, {"image_id", e.image_id},
                               {"question", e.question},       {"answer", e.answer},
                               {"greedy_caption", e.greedy_caption},
                               {"q_emb", e.q_emb.values},      {"i_emb", e.i_emb.values}};
        out << line.dump() << '\n';
    }
    if (!out) throw ConfigurationError("failed writing index file: " + path);
}

inline ExemplarIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigurationError("cannot open index file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("index file is empty: " + path);

    nlohmann::json header = nlohmann::json::parse(line);
    ExemplarIndex index;
    index.dim = header.at("dim").get<std::size_t>();
    index.selection_mode = selection_mode_from_string(header.at("selection_mode").get<std::string>());
    std::size_t count = header.at("count").get<std::size_t>();

    std::unordered_set<std::string> seen_ids;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        Exemplar e;
        e.question_id = j.at("question_id").get<std::string>();
        e.image_id = j.at("image_id").get<std::string>();
        e.question = j.at("question").get<std::string>();
        e.answer = j.at("answer").get<std::string>();
        e.greedy_caption = j.at("greedy_caption").get<std::string>();
        e.q_emb.values = j.at("q_emb").get<std::vector<double>>();
        e.i_emb.values = j.at("i_emb").get<std::vector<double>>();
        if (e.q_emb.dim() != index.dim || e.i_emb.dim() != index.dim)
            throw ValidationError("embedding dimension mismatch in index entry " + e.question_id);
        if (std::abs(e.q_emb.norm() - 1.0) > 1e-6 || std::abs(e.i_emb.norm() - 1.0) > 1e-6)
            throw ValidationError("non-unit embedding in index entry " + e.question_id);
        if (!seen_ids.insert(e.question_id).second)
            throw ValidationError("duplicate question_id in index file: " + e.question_id);
        index.entries.push_back(std::move(e));
    }
    if (index.entries.size() != count)
        throw ValidationError("index header count " + std::to_string(count) + " does not match " +
                              std::to_string(index.entries.size()) + " entries");
    return index;
}

// Precomputed-embedding ingestion: JSON lines {question_id, q_emb, i_emb}.
inline std::unordered_map<std::string, std::pair<EmbeddingVector, EmbeddingVector>>
load_precomputed_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigurationError("cannot open embeddings file: " + path);
    std::unordered_map<std::string, std::pair<EmbeddingVector, EmbeddingVector>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("embeddings file line " + std::to_string(lineno) + ": " + e.what());
        }
        EmbeddingVector q, i;
        q.values = j.at("q_emb").get<std::vector<double>>();
        i.values = j.at("i_emb").get<std::vector<double>>();
        out[j.at("question_id").get<std::string>()] = {std::move(q), std::move(i)};
    }
    return out;
}

}  // namespace vqapipe
