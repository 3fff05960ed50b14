#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vqapipe/cache.hpp"
#include "vqapipe/captioning.hpp"
#include "vqapipe/errors.hpp"
#include "vqapipe/exemplar.hpp"
#include "vqapipe/manifest.hpp"
#include "vqapipe/prompting.hpp"
#include "vqapipe/vqa_eval.hpp"

namespace vqapipe {

struct ItemError {
    std::string question_id;
    std::string message;
};

struct RunRecord {
    std::string manifest_fingerprint;
    std::size_t n_items = 0;
    std::size_t n_failed = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t cache_misses = 0;
    double caption_seconds = 0.0;
    double answer_seconds = 0.0;
    double total_seconds = 0.0;
    std::string predictions_digest;
    std::vector<ItemError> errors;

    nlohmann::json to_json() const {
        nlohmann::json errs = nlohmann::json::array();
        for (const ItemError& e : errors)
            errs.push_back({{"question_id", e.question_id}, {"message", e.message}});
        return {{"manifest_fingerprint", manifest_fingerprint},
                {"n_items", n_items},
                {"n_failed", n_failed},
                {"cache_hits", cache_hits},
                {"cache_misses", cache_misses},
                {"caption_seconds", caption_seconds},
                {"answer_seconds", answer_seconds},
                {"total_seconds", total_seconds},
                {"predictions_digest", predictions_digest},
                {"errors", errs}};
    }
};

struct RunOptions {
    bool strict = false;                    // fail the whole batch on the first item error
    std::optional<std::size_t> workers;     // overrides the manifest worker count
};

struct RunResult {
    std::vector<Prediction> predictions;  // sorted by question_id
    RunRecord record;
};

namespace pipeline_detail {

inline std::string answer_fingerprint(const AnswerConfig& cfg) {
    std::ostringstream out;
    if (cfg.mode == DecodeMode::greedy) {
        out << "greedy;max=" << cfg.max_new_tokens;
    } else {
        out << "beam;w=" << cfg.beam_width << ";lp=" << cfg.length_penalty
            << ";max=" << cfg.max_new_tokens;
    }
    return out.str();
}

// Caption lookup with content-addressed caching; a warm cache answers
// without touching the captioner.
inline Caption cached_caption(const FileCache& cache, const CaptioningContext& ctx,
                              const std::string& captioner_model, const std::string& image_id,
                              const CaptionStrategy& strategy, std::uint64_t run_seed) {
    CacheKey key{"captioner", captioner_model, strategy.fingerprint(), run_seed,
                 sha256_hex(image_id)};
    if (auto hit = cache.get(key)) {
        Caption c;
        c.text = hit->at("text").get<std::string>();
        c.strategy = strategy;
        c.source_path = hit->at("path").get<std::string>() == "local" ? DecodePath::local
                                                                      : DecodePath::delegated;
        c.warnings = hit->value("warnings", std::vector<std::string>{});
        return c;
    }
    Caption c = caption_for_strategy(ctx, image_id, strategy, run_seed);
    cache.put(key, {{"text", c.text},
                    {"path", to_string(c.source_path)},
                    {"warnings", c.warnings}});
    return c;
}

inline Prediction cached_answer(const FileCache& cache, const GenerationBackend& answerer,
                                const std::string& prompt, const AnswerConfig& cfg) {
    CacheKey key{"answerer", answerer.descriptor().model_id, answer_fingerprint(cfg), 0,
                 sha256_hex(prompt)};
    if (auto hit = cache.get(key)) {
        Prediction p;
        p.raw_answer = hit->at("raw").get<std::string>();
        p.answer = hit->at("answer").get<std::string>();
        p.prompt_hash = sha256_hex(prompt);
        p.path = hit->at("path").get<std::string>() == "local" ? DecodePath::local
                                                               : DecodePath::delegated;
        p.empty_generation = p.answer.empty();
        return p;
    }
    Prediction p = answer(answerer, prompt, cfg);
    cache.put(key, {{"raw", p.raw_answer}, {"answer", p.answer}, {"path", to_string(p.path)}});
    return p;
}

}  // namespace pipeline_detail

// One question end to end: caption, select shots, build prompt, answer.
inline RunResult run_vqa(const RunManifest& manifest, const RunOptions& options = {}) {
    auto t_start = std::chrono::steady_clock::now();
    validate_manifest_for_run(manifest);

    BackendSet backends = build_backends(manifest);
    FileCache cache(manifest.cache_dir);

    CaptioningContext ctx;
    ctx.captioner = backends.captioner.get();
    ctx.detector = backends.detector.get();
    ctx.chat = backends.chat.get();
    if (!manifest.detector_vocabulary.empty())
        ctx.detector_vocabulary = load_detector_vocabulary(manifest.detector_vocabulary);

    std::vector<JoinedSample> samples = load_split(manifest.questions_path, manifest.annotations_path);
    if (manifest.fixture)
        samples = sample_fixture(samples, manifest.fixture->n, manifest.fixture->seed);

    ExemplarIndex index;
    if (manifest.n_shots > 0) {
        index = load_index(manifest.index_file);
        index.selection_mode = manifest.selection_mode;
        if (backends.embedder && backends.embedder->dim() != index.dim)
            throw ConfigurationError("embedder dim " + std::to_string(backends.embedder->dim()) +
                                     " does not match index dim " + std::to_string(index.dim));
        if (manifest.n_shots > index.entries.size())
            throw ConfigurationError("n_shots exceeds index size");
    }

    const AnswerConfig answer_cfg = manifest.answer_config();
    const std::size_t n_workers =
        std::max<std::size_t>(1, options.workers.value_or(manifest.workers));

    std::vector<std::optional<Prediction>> results(samples.size());
    std::vector<std::optional<ItemError>> errors(samples.size());
    std::atomic<std::size_t> next{0};
    std::atomic<double> caption_seconds{0.0};
    std::atomic<double> answer_seconds{0.0};

    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= samples.size()) return;
            const JoinedSample& sample = samples[i];
            try {
                auto t0 = std::chrono::steady_clock::now();
                Caption caption = pipeline_detail::cached_caption(
                    cache, ctx, backends.captioner->descriptor().model_id, sample.image_id,
                    manifest.strategy, manifest.run_seed);
                auto t1 = std::chrono::steady_clock::now();

                ShotSelection shots;
                if (manifest.n_shots > 0) {
                    EmbeddingVector q_emb = backends.embedder->embed_text(sample.question);
                    EmbeddingVector i_emb = backends.embedder->embed_image(sample.image_id);
                    shots = select_shots(index, q_emb, i_emb, manifest.n_shots);
                }

                std::string prompt = build_qa_prompt(shots, caption.text, sample.question);
                Prediction p =
                    pipeline_detail::cached_answer(cache, *backends.answerer, prompt, answer_cfg);
                auto t2 = std::chrono::steady_clock::now();

                p.question_id = sample.question_id;
                p.shots = manifest.n_shots;
                results[i] = std::move(p);

                auto add = [](std::atomic<double>& acc, double v) {
                    double cur = acc.load();
                    while (!acc.compare_exchange_weak(cur, cur + v)) {}
                };
                add(caption_seconds, std::chrono::duration<double>(t1 - t0).count());
                add(answer_seconds, std::chrono::duration<double>(t2 - t1).count());
            } catch (const std::exception& e) {
                errors[i] = ItemError{sample.question_id, e.what()};
            }
        }
    };

    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();

    RunResult out;
    out.record.manifest_fingerprint = manifest.fingerprint();
    out.record.n_items = samples.size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (errors[i]) {
            out.record.errors.push_back(*errors[i]);
            ++out.record.n_failed;
        } else if (results[i]) {
            out.predictions.push_back(std::move(*results[i]));
        }
    }
    if (options.strict && out.record.n_failed > 0)
        throw BackendError("strict run failed on " + std::to_string(out.record.n_failed) +
                           " item(s); first: " + out.record.errors.front().question_id + ": " +
                           out.record.errors.front().message);

    std::sort(out.predictions.begin(), out.predictions.end(),
              [](const Prediction& a, const Prediction& b) { return a.question_id < b.question_id; });

    out.record.cache_hits = cache.hits();
    out.record.cache_misses = cache.misses();
    out.record.caption_seconds = caption_seconds.load();
    out.record.answer_seconds = answer_seconds.load();
    out.record.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
}

// ---------------------------------------------------------------------------
// Predictions file: a header record carrying the manifest fingerprint, then
// one canonical JSON line per prediction, sorted by question_id.
// ---------------------------------------------------------------------------

inline std::string predictions_to_string(const RunResult& result, const RunManifest& manifest) {
    std::ostringstream out;
    nlohmann::json header = {{"manifest_fingerprint", result.record.manifest_fingerprint},
                             {"strategy", manifest.strategy.fingerprint()},
                             {"n_shots", manifest.n_shots},
                             {"run_seed", manifest.run_seed}};
    out << header.dump() << '\n';
    for (const Prediction& p : result.predictions) {
        nlohmann::json line = {{"question_id", p.question_id},
                               {"answer", p.answer},
                               {"raw_answer", p.raw_answer},
                               {"shots", p.shots},
                               {"strategy", manifest.strategy.fingerprint()},
                               {"prompt_hash", p.prompt_hash},
                               {"path", to_string(p.path)}};
        out << line.dump() << '\n';
    }
    return out.str();
}

inline void write_predictions(RunResult& result, const RunManifest& manifest,
                              const std::string& path) {
    std::string content = predictions_to_string(result, manifest);
    result.record.predictions_digest = sha256_hex(content);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigurationError("cannot write predictions file: " + path);
    out << content;
}

struct PredictionsFile {
    nlohmann::json header;
    std::vector<std::pair<std::string, std::string>> predictions;  // (question_id, answer)
};

inline PredictionsFile load_predictions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigurationError("cannot open predictions file: " + path);
    PredictionsFile out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("predictions file line " + std::to_string(lineno) + ": " + e.what());
        }
        if (lineno == 1 && j.contains("manifest_fingerprint")) {
            out.header = j;
            continue;
        }
        out.predictions.emplace_back(eval_detail::id_to_string(j.at("question_id")),
                                     j.at("answer").get<std::string>());
    }
    return out;
}

// Official-submission shape: a JSON array of {question_id, answer}.
inline void export_submission(const std::vector<Prediction>& predictions, const std::string& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Prediction& p : predictions) {
        nlohmann::json entry;
        try {
            entry["question_id"] = std::stoll(p.question_id);
        } catch (const std::exception&) {
            entry["question_id"] = p.question_id;
        }
        entry["answer"] = p.answer;
        arr.push_back(std::move(entry));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigurationError("cannot write submission file: " + path);
    out << arr.dump() << '\n';
}

}  // namespace vqapipe
