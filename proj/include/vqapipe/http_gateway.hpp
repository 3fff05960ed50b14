#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "vqapipe/cache.hpp"
#include "vqapipe/errors.hpp"
#include "vqapipe/gateway.hpp"

namespace vqapipe {

// Request shape for one inference server; field names vary between servers
// and are configured per endpoint profile in the run manifest.
struct EndpointProfile {
    std::string completion_path = "/v1/completions";
    std::string embedding_path = "/v1/embeddings";
    std::string detection_path = "/v1/detect";
    std::string prompt_field = "prompt";
    std::string image_field = "image_id";
    std::string text_field = "text";
    std::string output_field = "text";
    std::string embedding_field = "embedding";
    std::string categories_field = "categories";
    std::string detections_field = "detections";
    std::string category_field = "category";
    std::string confidence_field = "confidence";
    bool supports_seed = false;
    bool supports_length_penalty = true;
    int timeout_ms = 30000;
    int max_retries = 3;

    static EndpointProfile from_json(const nlohmann::json& j) {
        EndpointProfile p;
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("completion_path", p.completion_path);
        get("embedding_path", p.embedding_path);
        get("detection_path", p.detection_path);
        get("prompt_field", p.prompt_field);
        get("image_field", p.image_field);
        get("text_field", p.text_field);
        get("output_field", p.output_field);
        get("embedding_field", p.embedding_field);
        get("categories_field", p.categories_field);
        get("detections_field", p.detections_field);
        get("category_field", p.category_field);
        get("confidence_field", p.confidence_field);
        get("supports_seed", p.supports_seed);
        get("supports_length_penalty", p.supports_length_penalty);
        get("timeout_ms", p.timeout_ms);
        get("max_retries", p.max_retries);
        return p;
    }
};

using PayloadLogger = std::function<void(const std::string& path, const std::string& payload)>;

namespace http_detail {

class Transport {
public:
    Transport(std::string endpoint, EndpointProfile profile, PayloadLogger logger)
        : endpoint_(std::move(endpoint)), profile_(std::move(profile)), logger_(std::move(logger)) {}

    // POSTs canonical JSON with bounded retries and exponential backoff;
    // callers only retry idempotent requests.
    nlohmann::json post(const std::string& path, const nlohmann::json& payload,
                        bool idempotent) const {
        std::string body = canonical_dump(payload);
        if (logger_) logger_(path, body);

        int attempts = idempotent ? std::max(1, profile_.max_retries) : 1;
        std::string last_error;
        for (int attempt = 0; attempt < attempts; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(std::chrono::milliseconds(50 << (attempt - 1)));
            httplib::Client client(endpoint_);
            client.set_connection_timeout(0, profile_.timeout_ms * 1000);
            client.set_read_timeout(profile_.timeout_ms / 1000, (profile_.timeout_ms % 1000) * 1000);
            auto res = client.Post(path, body, "application/json");
            if (!res) {
                last_error = httplib::to_string(res.error());
                continue;
            }
            if (res->status == 408 || res->status == 504)
                throw TimeoutError("timeout from " + endpoint_ + path +
                                   " (payload sha256 " + sha256_hex(body) + ")");
            if (res->status != 200) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::exception& e) {
                throw BackendError("unparseable response from " + endpoint_ + path + ": " + e.what());
            }
        }
        throw BackendError("request to " + endpoint_ + path + " failed after " +
                           std::to_string(attempts) + " attempt(s): " + last_error);
    }

    const EndpointProfile& profile() const { return profile_; }
    const std::string& endpoint() const { return endpoint_; }

private:
    std::string endpoint_;
    EndpointProfile profile_;
    PayloadLogger logger_;
};

}  // namespace http_detail

// Completion-only adapter: public inference APIs rarely expose per-step
// distributions, so decoding parameters are delegated server-side.
class RemoteGenerationBackend : public GenerationBackend {
public:
    RemoteGenerationBackend(BackendDescriptor desc, EndpointProfile profile,
                            PayloadLogger logger = nullptr)
        : desc_(std::move(desc)),
          transport_(desc_.endpoint, std::move(profile), std::move(logger)) {
        desc_.capability = Capability::server_side_decoding;
    }

    const BackendDescriptor& descriptor() const override { return desc_; }

    GenerationSession open_session(const std::string& conditioning) const override {
        if (conditioning.empty()) throw ValidationError("empty conditioning input");
        GenerationSession s;
        s.conditioning = conditioning;
        s.conditioning_hash = fnv1a64(conditioning);
        return s;
    }

    Distribution next_token(const GenerationSession&, std::span<const TokenId>) const override {
        throw CapabilityError("remote backend '" + desc_.model_id +
                              "' exposes server-side decoding only");
    }

    std::string detokenize(const GenerationSession&, std::span<const TokenId>) const override {
        throw CapabilityError("remote backend '" + desc_.model_id + "' has no local tokenizer");
    }

    std::string server_decode(const GenerationSession& session,
                              const DecodeParams& params) const override {
        const EndpointProfile& profile = transport_.profile();
        params.validate();

        nlohmann::json payload;
        payload["model"] = desc_.model_id;
        payload[profile.prompt_field] = session.conditioning;
        payload["max_new_tokens"] = params.max_new_tokens;
        switch (params.mode) {
            case DecodeMode::greedy:
                payload["mode"] = "greedy";
                break;
            case DecodeMode::topk:
                if (!profile.supports_seed)
                    throw CapabilityError("endpoint " + desc_.endpoint +
                                          " cannot run seeded sampling");
                payload["mode"] = "topk";
                payload["k"] = params.k;
                payload["seed"] = params.seed;
                break;
            case DecodeMode::beam:
                payload["mode"] = "beam";
                payload["beam_width"] = params.beam_width;
                if (params.length_penalty != 0.0 && !profile.supports_length_penalty)
                    throw CapabilityError("endpoint " + desc_.endpoint +
                                          " does not accept length_penalty");
                payload["length_penalty"] = params.length_penalty;
                break;
        }

        // Greedy, beam and seeded sampling are all deterministic, hence retryable.
        nlohmann::json res = transport_.post(profile.completion_path, payload, true);
        return res.at(profile.output_field).get<std::string>();
    }

private:
    BackendDescriptor desc_;
    http_detail::Transport transport_;
};

class RemoteEmbedderBackend : public EmbedderBackend {
public:
    RemoteEmbedderBackend(BackendDescriptor desc, std::size_t dim, EndpointProfile profile,
                          PayloadLogger logger = nullptr)
        : desc_(std::move(desc)),
          dim_(dim),
          transport_(desc_.endpoint, std::move(profile), std::move(logger)) {}

    const BackendDescriptor& descriptor() const override { return desc_; }
    std::size_t dim() const override { return dim_; }

    EmbeddingVector embed_text(const std::string& text) const override {
        return embed(transport_.profile().text_field, text);
    }
    EmbeddingVector embed_image(const std::string& image_ref) const override {
        return embed(transport_.profile().image_field, image_ref);
    }

private:
    EmbeddingVector embed(const std::string& field, const std::string& input) const {
        if (input.empty()) throw ValidationError("cannot embed empty input");
        nlohmann::json payload = {{"model", desc_.model_id}, {field, input}};
        nlohmann::json res = transport_.post(transport_.profile().embedding_path, payload, true);
        EmbeddingVector v;
        v.values = res.at(transport_.profile().embedding_field).get<std::vector<double>>();
        if (v.dim() != dim_)
            throw ConfigurationError("endpoint returned dim " + std::to_string(v.dim()) +
                                     ", configured index dim is " + std::to_string(dim_));
        v.normalize();
        return v;
    }

    BackendDescriptor desc_;
    std::size_t dim_;
    http_detail::Transport transport_;
};

class RemoteDetectorBackend : public DetectorBackend {
public:
    RemoteDetectorBackend(BackendDescriptor desc, EndpointProfile profile,
                          PayloadLogger logger = nullptr)
        : desc_(std::move(desc)),
          transport_(desc_.endpoint, std::move(profile), std::move(logger)) {}

    const BackendDescriptor& descriptor() const override { return desc_; }

    std::vector<DetectedTag> detect(const std::string& image_ref,
                                    const std::vector<std::string>& vocabulary,
                                    double threshold) const override {
        if (vocabulary.empty()) throw ValidationError("detector vocabulary is empty");
        const EndpointProfile& profile = transport_.profile();
        nlohmann::json payload = {{"model", desc_.model_id},
                                  {profile.image_field, image_ref},
                                  {profile.categories_field, vocabulary}};
        nlohmann::json res = transport_.post(profile.detection_path, payload, true);
        std::vector<DetectedTag> out;
        for (const nlohmann::json& d : res.at(profile.detections_field)) {
            DetectedTag tag{d.at(profile.category_field).get<std::string>(),
                            d.at(profile.confidence_field).get<double>()};
            if (tag.confidence >= threshold) out.push_back(std::move(tag));
        }
        return out;
    }

private:
    BackendDescriptor desc_;
    http_detail::Transport transport_;
};

class RemoteChatBackend : public ChatBackend {
public:
    RemoteChatBackend(BackendDescriptor desc, EndpointProfile profile,
                      PayloadLogger logger = nullptr)
        : desc_(std::move(desc)),
          transport_(desc_.endpoint, std::move(profile), std::move(logger)) {}

    const BackendDescriptor& descriptor() const override { return desc_; }

    std::string chat_complete(const std::string& prompt) const override {
        if (prompt.empty()) throw ValidationError("empty chat prompt");
        const EndpointProfile& profile = transport_.profile();
        nlohmann::json payload = {{"model", desc_.model_id}, {profile.prompt_field, prompt}};
        // Chat summarization is unseeded, so transport failures are not retried.
        nlohmann::json res = transport_.post(profile.completion_path, payload, false);
        return res.at(profile.output_field).get<std::string>();
    }

private:
    BackendDescriptor desc_;
    http_detail::Transport transport_;
};

}  // namespace vqapipe
