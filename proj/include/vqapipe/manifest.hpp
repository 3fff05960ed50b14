#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqapipe/captioning.hpp"
#include "vqapipe/errors.hpp"
#include "vqapipe/exemplar.hpp"
#include "vqapipe/gateway.hpp"
#include "vqapipe/http_gateway.hpp"
#include "vqapipe/prompting.hpp"

namespace vqapipe {

struct BackendConfig {
    BackendDescriptor desc;
    nlohmann::json extra;  // vocab, dim, endpoint profile

    bool is_mock() const { return desc.endpoint == "mock"; }
};

struct FixtureSpec {
    std::size_t n = 0;
    std::uint64_t seed = 0;
};

struct RunManifest {
    std::map<Role, BackendConfig> backends;
    CaptionStrategy strategy;
    SelectionMode selection_mode = SelectionMode::image_question;
    std::size_t n_shots = 0;
    std::optional<AnswerConfig> answer_override;
    std::uint64_t run_seed = 0;
    std::string questions_path;
    std::string annotations_path;
    std::optional<FixtureSpec> fixture;
    std::string index_file;
    std::string detector_vocabulary;
    std::string cache_dir = "cache";
    std::size_t workers = 1;
    nlohmann::json raw;

    // Identifies the exact settings of a run in every output file.
    std::string fingerprint() const { return sha256_hex(raw.dump()); }

    AnswerConfig answer_config() const {
        return answer_override ? *answer_override : pair_strategy_to_config(strategy);
    }
};

namespace manifest_detail {

inline Role role_from_string(const std::string& s) {
    if (s == "captioner") return Role::captioner;
    if (s == "answerer") return Role::answerer;
    if (s == "chat") return Role::chat;
    if (s == "embedder") return Role::embedder;
    if (s == "detector") return Role::detector;
    throw ConfigurationError("unknown backend role: " + s);
}

inline Capability capability_from_string(const std::string& s) {
    if (s == "token-stepping") return Capability::token_stepping;
    if (s == "server-side-decoding") return Capability::server_side_decoding;
    if (s == "both") return Capability::both;
    throw ConfigurationError("unknown capability: " + s);
}

inline void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw ConfigurationError("manifest is missing " + what);
    if (!std::filesystem::exists(path))
        throw ConfigurationError(what + " does not exist: " + path);
}

}  // namespace manifest_detail

inline RunManifest parse_manifest(const nlohmann::json& j) {
    RunManifest m;
    m.raw = j;

    if (!j.contains("backends") || !j.at("backends").is_object())
        throw ConfigurationError("manifest needs a 'backends' object");
    for (auto it = j.at("backends").begin(); it != j.at("backends").end(); ++it) {
        Role role = manifest_detail::role_from_string(it.key());
        const nlohmann::json& b = it.value();
        BackendConfig cfg;
        cfg.desc.role = role;
        cfg.desc.model_id = b.at("model_id").get<std::string>();
        cfg.desc.endpoint = b.value("endpoint", std::string("mock"));
        cfg.desc.capability =
            manifest_detail::capability_from_string(b.value("capability", std::string("both")));
        cfg.extra = b;
        m.backends[role] = std::move(cfg);
    }

    if (j.contains("strategy")) {
        const nlohmann::json& s = j.at("strategy");
        m.strategy.kind = strategy_from_string(s.value("kind", std::string("greedy")));
        m.strategy.k = s.value("k", m.strategy.k);
        m.strategy.n_samples = s.value("n_samples", m.strategy.n_samples);
        m.strategy.tag_threshold = s.value("tag_threshold", m.strategy.tag_threshold);
        m.strategy.max_caption_tokens = s.value("max_caption_tokens", m.strategy.max_caption_tokens);
        m.strategy.validate();
    }

    m.selection_mode =
        selection_mode_from_string(j.value("selection_mode", std::string("image+question")));
    m.n_shots = j.value("n_shots", std::size_t{0});
    m.run_seed = j.value("run_seed", std::uint64_t{0});
    m.workers = std::max<std::size_t>(1, j.value("workers", std::size_t{1}));

    if (j.contains("answer_config")) {
        const nlohmann::json& a = j.at("answer_config");
        AnswerConfig cfg;
        std::string mode = a.value("mode", std::string("greedy"));
        if (mode == "greedy") cfg.mode = DecodeMode::greedy;
        else if (mode == "beam") cfg.mode = DecodeMode::beam;
        else throw ConfigurationError("answer_config mode must be greedy or beam");
        cfg.max_new_tokens = a.value("max_new_tokens", cfg.max_new_tokens);
        cfg.beam_width = a.value("beam_width", cfg.beam_width);
        cfg.length_penalty = a.value("length_penalty", cfg.length_penalty);
        m.answer_override = cfg;
    }

    if (j.contains("dataset")) {
        m.questions_path = j.at("dataset").value("questions", std::string());
        m.annotations_path = j.at("dataset").value("annotations", std::string());
    }
    if (j.contains("fixture")) {
        FixtureSpec f;
        f.n = j.at("fixture").at("n").get<std::size_t>();
        f.seed = j.at("fixture").value("seed", std::uint64_t{0});
        m.fixture = f;
    }
    m.index_file = j.value("index_file", std::string());
    m.detector_vocabulary = j.value("detector_vocabulary", std::string());
    m.cache_dir = j.value("cache_dir", std::string("cache"));
    if (const char* env = std::getenv("VQAPIPE_CACHE_DIR")) m.cache_dir = env;
    return m;
}

inline RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigurationError("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigurationError("manifest parse error in " + path + ": " + e.what());
    }
    return parse_manifest(j);
}

// Validation that runs before any work: referenced paths must exist and the
// shot count must be backed by an index.
inline void validate_manifest_for_run(const RunManifest& m) {
    manifest_detail::require_file(m.questions_path, "dataset.questions");
    manifest_detail::require_file(m.annotations_path, "dataset.annotations");
    if (m.n_shots > 0) manifest_detail::require_file(m.index_file, "index_file");
    if (m.strategy.kind == StrategyKind::greedy_tags)
        manifest_detail::require_file(m.detector_vocabulary, "detector_vocabulary");
    if (!m.backends.count(Role::captioner))
        throw ConfigurationError("manifest has no captioner backend");
    if (!m.backends.count(Role::answerer))
        throw ConfigurationError("manifest has no answerer backend");
    if (m.strategy.kind == StrategyKind::stochastic_summarized && !m.backends.count(Role::chat))
        throw ConfigurationError("stochastic-summarized needs a chat backend");
    if (m.strategy.kind == StrategyKind::greedy_tags && !m.backends.count(Role::detector))
        throw ConfigurationError("greedy-tags needs a detector backend");
    if (m.n_shots > 0 && !m.backends.count(Role::embedder))
        throw ConfigurationError("shot selection needs an embedder backend");
}

// Owns the concrete backend instances built from a manifest.
struct BackendSet {
    std::unique_ptr<GenerationBackend> captioner;
    std::unique_ptr<GenerationBackend> answerer;
    std::unique_ptr<ChatBackend> chat;
    std::unique_ptr<EmbedderBackend> embedder;
    std::unique_ptr<DetectorBackend> detector;
};

namespace manifest_detail {

inline MockVocabulary vocab_from_config(const nlohmann::json& extra) {
    if (extra.contains("vocab"))
        return MockVocabulary{extra.at("vocab").get<std::vector<std::string>>()};
    return MockVocabulary::standard();
}

inline EndpointProfile profile_from_config(const nlohmann::json& extra) {
    return extra.contains("profile") ? EndpointProfile::from_json(extra.at("profile"))
                                     : EndpointProfile{};
}

}  // namespace manifest_detail

inline BackendSet build_backends(const RunManifest& m, PayloadLogger logger = nullptr) {
    BackendSet set;
    for (const auto& [role, cfg] : m.backends) {
        switch (role) {
            case Role::captioner:
            case Role::answerer: {
                std::unique_ptr<GenerationBackend> backend;
                if (cfg.is_mock())
                    backend = std::make_unique<MockGenerationBackend>(
                        cfg.desc, manifest_detail::vocab_from_config(cfg.extra));
                else
                    backend = std::make_unique<RemoteGenerationBackend>(
                        cfg.desc, manifest_detail::profile_from_config(cfg.extra), logger);
                (role == Role::captioner ? set.captioner : set.answerer) = std::move(backend);
                break;
            }
            case Role::chat:
                if (cfg.is_mock())
                    set.chat = std::make_unique<MockChatBackend>(cfg.desc);
                else
                    set.chat = std::make_unique<RemoteChatBackend>(
                        cfg.desc, manifest_detail::profile_from_config(cfg.extra), logger);
                break;
            case Role::embedder: {
                std::size_t dim = cfg.extra.value("dim", std::size_t{512});
                if (cfg.is_mock())
                    set.embedder = std::make_unique<MockEmbedderBackend>(cfg.desc, dim);
                else
                    set.embedder = std::make_unique<RemoteEmbedderBackend>(
                        cfg.desc, dim, manifest_detail::profile_from_config(cfg.extra), logger);
                break;
            }
            case Role::detector:
                if (cfg.is_mock())
                    set.detector = std::make_unique<MockDetectorBackend>(cfg.desc);
                else
                    set.detector = std::make_unique<RemoteDetectorBackend>(
                        cfg.desc, manifest_detail::profile_from_config(cfg.extra), logger);
                break;
        }
    }
    return set;
}

// Detector vocabulary file: UTF-8, one category name per line.
inline std::vector<std::string> load_detector_vocabulary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigurationError("cannot open detector vocabulary: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        std::string t = text::trim(line);
        if (!t.empty()) out.push_back(std::move(t));
    }
    if (out.empty()) throw ValidationError("detector vocabulary is empty: " + path);
    return out;
}

}  // namespace vqapipe
