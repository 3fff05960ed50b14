// Command-line surface for the VQA pipeline: captioning, index building,
// batch runs, evaluation, and report export.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vqapipe/vqapipe.hpp"

namespace {

using namespace vqapipe;

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigurationError("cannot open file: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        std::string t = text::trim(line);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigurationError("cannot write file: " + path);
    out << content;
}

CaptioningContext make_captioning_context(const RunManifest& manifest, const BackendSet& backends) {
    CaptioningContext ctx;
    ctx.captioner = backends.captioner.get();
    ctx.detector = backends.detector.get();
    ctx.chat = backends.chat.get();
    if (!manifest.detector_vocabulary.empty())
        ctx.detector_vocabulary = load_detector_vocabulary(manifest.detector_vocabulary);
    return ctx;
}

// The most frequent of the ten human answers, ties broken lexicographically.
std::string consensus_answer(const std::vector<std::string>& answers) {
    std::map<std::string, int> counts;
    for (const std::string& a : answers) ++counts[text::to_lower(text::trim(a))];
    std::string best;
    int best_count = -1;
    for (const auto& [answer, count] : counts)
        if (count > best_count) {
            best = answer;
            best_count = count;
        }
    return best;
}

int cmd_caption(const std::string& manifest_path, const std::string& images_path) {
    RunManifest manifest = load_manifest(manifest_path);
    if (!manifest.backends.count(Role::captioner))
        throw ConfigurationError("manifest has no captioner backend");
    BackendSet backends = build_backends(manifest);
    CaptioningContext ctx = make_captioning_context(manifest, backends);
    FileCache cache(manifest.cache_dir);

    for (const std::string& image_id : read_lines(images_path)) {
        Caption c = pipeline_detail::cached_caption(cache, ctx,
                                                    backends.captioner->descriptor().model_id,
                                                    image_id, manifest.strategy, manifest.run_seed);
        nlohmann::json line = {{"image_id", image_id},
                               {"caption", c.text},
                               {"strategy", manifest.strategy.fingerprint()}};
        std::cout << line.dump() << '\n';
    }
    return 0;
}

int cmd_build_index(const std::string& manifest_path, const std::string& output_path,
                    std::size_t limit) {
    RunManifest manifest = load_manifest(manifest_path);
    manifest_detail::require_file(manifest.questions_path, "dataset.questions");
    manifest_detail::require_file(manifest.annotations_path, "dataset.annotations");
    if (!manifest.backends.count(Role::captioner))
        throw ConfigurationError("manifest has no captioner backend");
    if (!manifest.backends.count(Role::embedder))
        throw ConfigurationError("index building needs an embedder backend");

    BackendSet backends = build_backends(manifest);
    CaptioningContext ctx = make_captioning_context(manifest, backends);
    FileCache cache(manifest.cache_dir);

    // Exemplar contexts are always greedy captions regardless of the run
    // strategy: the solved examples in the prompt use the plain caption.
    CaptionStrategy greedy;
    greedy.kind = StrategyKind::greedy;
    greedy.max_caption_tokens = manifest.strategy.max_caption_tokens;

    std::vector<JoinedSample> samples =
        load_split(manifest.questions_path, manifest.annotations_path);
    if (limit > 0 && limit < samples.size()) samples.resize(limit);

    std::vector<ExemplarSource> sources;
    sources.reserve(samples.size());
    for (const JoinedSample& s : samples) {
        ExemplarSource src;
        src.question_id = s.question_id;
        src.image_id = s.image_id;
        src.question = s.question;
        src.answer = consensus_answer(s.answers);
        src.greedy_caption =
            pipeline_detail::cached_caption(cache, ctx,
                                            backends.captioner->descriptor().model_id, s.image_id,
                                            greedy, manifest.run_seed)
                .text;
        sources.push_back(std::move(src));
    }

    ExemplarIndex index = build_index(sources, backends.embedder.get());
    index.selection_mode = manifest.selection_mode;
    save_index(index, output_path);
    std::cerr << "wrote " << index.entries.size() << " exemplars (dim " << index.dim << ") to "
              << output_path << '\n';
    return 0;
}

int cmd_run(const std::string& manifest_path, const std::string& output_path,
            const std::string& record_path, const std::string& submission_path, bool strict,
            std::size_t workers) {
    RunManifest manifest = load_manifest(manifest_path);
    RunOptions options;
    options.strict = strict;
    if (workers > 0) options.workers = workers;

    RunResult result = run_vqa(manifest, options);
    write_predictions(result, manifest, output_path);
    if (!submission_path.empty()) export_submission(result.predictions, submission_path);
    if (!record_path.empty()) write_text(record_path, result.record.to_json().dump(2) + "\n");

    std::cerr << result.predictions.size() << " predictions";
    if (result.record.n_failed > 0) std::cerr << ", " << result.record.n_failed << " failed";
    std::cerr << "; digest " << result.record.predictions_digest << '\n';
    for (const ItemError& e : result.record.errors)
        std::cerr << "item " << e.question_id << ": " << e.message << '\n';
    return result.record.n_failed == 0 ? 0 : 1;
}

int cmd_evaluate(const std::string& predictions_path, const std::string& questions_path,
                 const std::string& annotations_path, const std::string& output_path,
                 bool allow_partial) {
    PredictionsFile preds = load_predictions(predictions_path);
    std::vector<JoinedSample> annotations = load_split(questions_path, annotations_path);
    EvalOptions options;
    options.allow_partial = allow_partial;
    EvalReport report = evaluate_run(preds.predictions, annotations, options);

    nlohmann::json j = report.to_json();
    if (!preds.header.is_null()) j["manifest_fingerprint"] = preds.header.value("manifest_fingerprint", "");
    std::cout << j.dump(2) << '\n';
    if (!output_path.empty()) write_text(output_path, j.dump(2) + "\n");
    return 0;
}

int cmd_report(const std::string& report_path, const std::string& by,
               const std::string& output_path) {
    std::ifstream in(report_path, std::ios::binary);
    if (!in) throw ConfigurationError("cannot open report: " + report_path);
    EvalReport report = EvalReport::from_json(nlohmann::json::parse(in));

    const std::map<std::string, TypeAccuracy>* per_type = nullptr;
    if (by == "question_type") per_type = &report.per_question_type;
    else if (by == "answer_type") per_type = &report.per_answer_type;
    else throw ConfigurationError("--by must be question_type or answer_type");

    std::string csv = report_csv(*per_type);
    std::cout << csv;
    if (!output_path.empty()) write_text(output_path, csv);
    return 0;
}

// Quick built-in oracle checks, independent of the test binaries.
int cmd_selftest() {
    struct Check {
        std::string name;
        bool ok;
    };
    std::vector<Check> checks;
    auto run = [&](const std::string& name, auto&& fn) {
        bool ok = false;
        try {
            ok = fn();
        } catch (const std::exception& e) {
            std::cerr << name << " raised: " << e.what() << '\n';
        }
        checks.push_back({name, ok});
    };

    run("soft-accuracy closed form vs leave-one-out", [] {
        for (int m = 0; m <= 10; ++m) {
            double brute = 0.0;
            for (int leave = 0; leave < 10; ++leave) {
                int kept = m - (leave < m ? 1 : 0);
                brute += std::min(kept / 3.0, 1.0);
            }
            brute /= 10.0;
            if (std::abs(brute - soft_accuracy_from_matches(m)) > 1e-15) return false;
        }
        return true;
    });

    run("greedy decode equals stepwise argmax", [] {
        MockGenerationBackend backend({Role::captioner, "selftest", "mock", Capability::both});
        GenerationSession s = backend.open_session("selftest-image");
        DecodeParams params;
        params.mode = DecodeMode::greedy;
        params.max_new_tokens = 8;
        TokenSequence got = decode(backend.oracle(s), s, params);
        TokenSequence expect;
        while (expect.size() < 8) {
            TokenId t = backend.next_token(s, expect).argmax();
            expect.push_back(t);
            if (t == s.eos) break;
        }
        return got == expect;
    });

    run("top-k renormalization example", [] {
        Distribution d;
        d.probs = {0.5, 0.3, 0.2};
        Distribution r = renormalize_topk(d, 2);
        return std::abs(r.probs[0] - 0.625) < 1e-12 && std::abs(r.probs[1] - 0.375) < 1e-12 &&
               r.probs[2] == 0.0;
    });

    run("shot selection matches full sort", [] {
        MockEmbedderBackend embedder({Role::embedder, "selftest", "mock", Capability::both}, 8);
        std::vector<ExemplarSource> sources;
        for (int i = 0; i < 64; ++i) {
            ExemplarSource s;
            s.question_id = "q" + std::to_string(i);
            s.image_id = "img" + std::to_string(i);
            s.question = "question " + std::to_string(i);
            s.answer = "a";
            s.greedy_caption = "caption " + std::to_string(i);
            sources.push_back(std::move(s));
        }
        ExemplarIndex index = build_index(sources, &embedder);
        EmbeddingVector q = embedder.embed_text("probe question");
        EmbeddingVector i = embedder.embed_image("probe image");
        ShotSelection sel = select_shots(index, q, i, 8);
        for (std::size_t j = 1; j < sel.scores.size(); ++j)
            if (sel.scores[j] > sel.scores[j - 1]) return false;
        for (const Exemplar& e : index.entries) {
            double score = combined_similarity(cosine(q, e.q_emb), cosine(i, e.i_emb),
                                               SelectionMode::image_question);
            if (score > sel.scores.back() + 1e-12) {
                bool selected = false;
                for (const Exemplar& chosen : sel.exemplars)
                    selected = selected || chosen.question_id == e.question_id;
                if (!selected) return false;
            }
        }
        return true;
    });

    run("answer normalization idempotence", [] {
        CounterRng rng(42);
        const std::string alphabet = "abc 'd.,:2?!";
        for (int i = 0; i < 2000; ++i) {
            std::string s;
            std::size_t len = rng.next_below(12);
            for (std::size_t j = 0; j < len; ++j)
                s.push_back(alphabet[rng.next_below(alphabet.size())]);
            std::string once = normalize_answer(s);
            if (normalize_answer(once) != once) return false;
        }
        return true;
    });

    run("cache round-trip", [] {
        std::filesystem::path dir =
            std::filesystem::temp_directory_path() / "vqapipe_selftest_cache";
        std::filesystem::remove_all(dir);
        FileCache cache(dir);
        CacheKey key{"captioner", "selftest", "greedy", 1, sha256_hex("img")};
        nlohmann::json value = {{"text", "a dog"}};
        cache.put(key, value);
        bool ok = cache.get(key) == value;
        std::filesystem::remove_all(dir);
        return ok;
    });

    bool all_ok = true;
    for (const Check& c : checks) {
        std::cout << (c.ok ? "pass" : "FAIL") << "  " << c.name << '\n';
        all_ok = all_ok && c.ok;
    }
    return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Training-free VQA pipeline: captioning, exemplar retrieval, answering, scoring"};
    app.require_subcommand(1);

    std::string manifest_path, images_path, output_path, record_path, submission_path;
    std::string predictions_path, questions_path, annotations_path, report_path;
    std::string by = "question_type";
    bool strict = false, allow_partial = false;
    std::size_t workers = 0, limit = 0;

    CLI::App* caption = app.add_subcommand("caption", "Caption images into the cache");
    caption->add_option("--manifest", manifest_path, "Run manifest JSON")->required();
    caption->add_option("--images", images_path, "File with one image id per line")->required();

    CLI::App* build_index =
        app.add_subcommand("build-index", "Build an exemplar index from a train split");
    build_index->add_option("--manifest", manifest_path, "Run manifest JSON")->required();
    build_index->add_option("--output", output_path, "Index file to write")->required();
    build_index->add_option("--limit", limit, "Use only the first N samples");

    CLI::App* run = app.add_subcommand("run", "Run the pipeline over a question split");
    run->add_option("--manifest", manifest_path, "Run manifest JSON")->required();
    run->add_option("--output", output_path, "Predictions file to write")->required();
    run->add_option("--record", record_path, "Run record JSON to write");
    run->add_option("--submission", submission_path, "Official-format submission JSON to write");
    run->add_option("--workers", workers, "Worker threads (overrides the manifest)");
    run->add_flag("--strict", strict, "Fail the whole batch on the first item error");

    CLI::App* evaluate = app.add_subcommand("evaluate", "Score predictions against annotations");
    evaluate->add_option("--predictions", predictions_path, "Predictions file")->required();
    evaluate->add_option("--questions", questions_path, "VQA question file")->required();
    evaluate->add_option("--annotations", annotations_path, "VQA annotation file")->required();
    evaluate->add_option("--output", output_path, "Also write the report JSON here");
    evaluate->add_flag("--allow-partial", allow_partial, "Score a subset of the annotations");

    CLI::App* report = app.add_subcommand("report", "Export a per-type CSV from a report");
    report->add_option("--input", report_path, "Report JSON from 'evaluate'")->required();
    report->add_option("--by", by, "question_type or answer_type");
    report->add_option("--output", output_path, "Also write the CSV here");

    app.add_subcommand("selftest", "Run built-in oracle checks");

    CLI11_PARSE(app, argc, argv);

    try {
        if (caption->parsed()) return cmd_caption(manifest_path, images_path);
        if (build_index->parsed()) return cmd_build_index(manifest_path, output_path, limit);
        if (run->parsed())
            return cmd_run(manifest_path, output_path, record_path, submission_path, strict,
                           workers);
        if (evaluate->parsed())
            return cmd_evaluate(predictions_path, questions_path, annotations_path, output_path,
                                allow_partial);
        if (report->parsed()) return cmd_report(report_path, by, output_path);
        return cmd_selftest();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
