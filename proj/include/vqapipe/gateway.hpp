#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vqapipe/decoding.hpp"
#include "vqapipe/errors.hpp"
#include "vqapipe/hash.hpp"
#include "vqapipe/rng.hpp"

namespace vqapipe {

enum class Role { captioner, answerer, chat, embedder, detector };

// token-stepping: exposes per-step distributions, enabling local decoding.
// server-side-decoding: the backend decodes; parameters are delegated.
enum class Capability { token_stepping, server_side_decoding, both };

inline bool supports_token_stepping(Capability c) {
    return c == Capability::token_stepping || c == Capability::both;
}
inline bool supports_server_decoding(Capability c) {
    return c == Capability::server_side_decoding || c == Capability::both;
}

struct BackendDescriptor {
    Role role;
    std::string model_id;
    std::string endpoint;  // URL, or "mock"
    Capability capability = Capability::both;
};

struct DetectedTag {
    std::string category;
    double confidence = 0.0;  // in [0,1]
};

struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }

    double norm() const {
        double s = 0.0;
        for (double v : values) s += v * v;
        return std::sqrt(s);
    }

    // Unit-normalizes in place; all vectors are normalized at ingestion.
    void normalize() {
        double n = norm();
        if (n == 0.0) throw ValidationError("cannot normalize zero embedding");
        for (double& v : values) v /= n;
    }

    double dot(const EmbeddingVector& other) const {
        if (dim() != other.dim())
            throw ConfigurationError("embedding dimension mismatch: " + std::to_string(dim()) +
                                     " vs " + std::to_string(other.dim()));
        double s = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) s += values[i] * other.values[i];
        return s;
    }
};

// Which decode path produced a piece of text.
enum class DecodePath { local, delegated };

inline const char* to_string(DecodePath p) { return p == DecodePath::local ? "local" : "delegated"; }

struct DecodedText {
    std::string text;
    DecodePath path = DecodePath::local;
    TokenSequence tokens;  // empty when delegated
};

// Captioner / answerer surface. Conditioning is the image reference for
// captioning and the full prompt for answering.
class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;

    virtual const BackendDescriptor& descriptor() const = 0;

    virtual GenerationSession open_session(const std::string& conditioning) const = 0;

    // token-stepping capability only.
    virtual Distribution next_token(const GenerationSession& session,
                                    std::span<const TokenId> prefix) const = 0;
    virtual std::string detokenize(const GenerationSession& session,
                                   std::span<const TokenId> tokens) const = 0;

    // server-side-decoding capability only.
    virtual std::string server_decode(const GenerationSession& session,
                                      const DecodeParams& params) const = 0;

    NextTokenOracle oracle(const GenerationSession& session) const {
        if (!supports_token_stepping(descriptor().capability))
            throw CapabilityError("backend '" + descriptor().model_id +
                                  "' does not support token-stepping");
        return [this, session](std::span<const TokenId> prefix) {
            return next_token(session, prefix);
        };
    }

    // Prefers local decoding when the backend steps tokens, otherwise delegates.
    DecodedText generate(const GenerationSession& session, const DecodeParams& params) const {
        if (supports_token_stepping(descriptor().capability)) {
            TokenSequence tokens = decode(oracle(session), session, params);
            return {detokenize(session, tokens), DecodePath::local, std::move(tokens)};
        }
        return {server_decode(session, params), DecodePath::delegated, {}};
    }
};

class EmbedderBackend {
public:
    virtual ~EmbedderBackend() = default;
    virtual const BackendDescriptor& descriptor() const = 0;
    virtual std::size_t dim() const = 0;
    virtual EmbeddingVector embed_text(const std::string& text) const = 0;
    virtual EmbeddingVector embed_image(const std::string& image_ref) const = 0;
};

class DetectorBackend {
public:
    virtual ~DetectorBackend() = default;
    virtual const BackendDescriptor& descriptor() const = 0;

    // Returns tags with confidence >= threshold in detection order. Multiple
    // instances of one category may appear; dedup happens in captioning.
    virtual std::vector<DetectedTag> detect(const std::string& image_ref,
                                            const std::vector<std::string>& vocabulary,
                                            double threshold) const = 0;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual const BackendDescriptor& descriptor() const = 0;
    virtual std::string chat_complete(const std::string& prompt) const = 0;
};

// ---------------------------------------------------------------------------
// Deterministic mocks. Pure functions of (model_id, input, seed): full
// pipeline runs on mocks are bit-reproducible.
// ---------------------------------------------------------------------------

struct MockVocabulary {
    std::vector<std::string> words;  // eos is the last id

    static MockVocabulary standard() {
        return {{"a", "dog", "cat", "man", "woman", "red", "ball", "park",
                 "street", "tree", "sky", "bird", "<eos>"}};
    }

    std::uint32_t size() const { return static_cast<std::uint32_t>(words.size()); }
    TokenId eos() const { return size() - 1; }
};

// Oracle distributions come from a counter PRNG keyed by (model_id,
// conditioning hash, step), dense over a small vocabulary so brute-force
// test oracles stay tractable.
class MockGenerationBackend : public GenerationBackend {
public:
    MockGenerationBackend(BackendDescriptor desc, MockVocabulary vocab = MockVocabulary::standard())
        : desc_(std::move(desc)), vocab_(std::move(vocab)) {
        if (desc_.endpoint.empty()) desc_.endpoint = "mock";
    }

    const BackendDescriptor& descriptor() const override { return desc_; }
    const MockVocabulary& vocabulary() const { return vocab_; }

    GenerationSession open_session(const std::string& conditioning) const override {
        if (conditioning.empty()) throw ValidationError("empty conditioning input");
        GenerationSession s;
        s.conditioning = conditioning;
        s.conditioning_hash = fnv1a64(conditioning);
        s.vocabulary_size = vocab_.size();
        s.eos = vocab_.eos();
        return s;
    }

    Distribution next_token(const GenerationSession& session,
                            std::span<const TokenId> prefix) const override {
        if (!supports_token_stepping(desc_.capability))
            throw CapabilityError("backend '" + desc_.model_id + "' refuses token-stepping");
        return step_distribution(session, prefix.size());
    }

    std::string detokenize(const GenerationSession&, std::span<const TokenId> tokens) const override {
        std::string out;
        for (TokenId t : tokens) {
            if (t >= vocab_.size()) throw ValidationError("token id out of vocabulary");
            if (t == vocab_.eos()) continue;
            if (!out.empty()) out.push_back(' ');
            out += vocab_.words[t];
        }
        return out;
    }

    std::string server_decode(const GenerationSession& session,
                              const DecodeParams& params) const override {
        if (!supports_server_decoding(desc_.capability))
            throw CapabilityError("backend '" + desc_.model_id + "' has no server-side decoding");
        // Same oracle as the token-stepping path, so both paths agree.
        auto oracle = [this, session](std::span<const TokenId> prefix) {
            return step_distribution(session, prefix.size());
        };
        return detokenize(session, decode(oracle, session, params));
    }

private:
    Distribution step_distribution(const GenerationSession& session, std::size_t step) const {
        std::uint64_t key =
            hash_combine(stable_hash(session.conditioning_hash, desc_.model_id), step);
        CounterRng rng(key);
        Distribution d;
        d.probs.resize(vocab_.size());
        double sum = 0.0;
        for (std::uint32_t t = 0; t + 1 < vocab_.size(); ++t) {
            d.probs[t] = 0.05 + rng.next_unit();
            sum += d.probs[t];
        }
        // eos mass grows with step so generations terminate; zero at step 0
        // so no backend ever emits an empty text.
        double eos_raw = step == 0 ? 0.0 : 0.15 * static_cast<double>(step) * (0.5 + rng.next_unit());
        d.probs[vocab_.eos()] = eos_raw;
        sum += eos_raw;
        for (double& p : d.probs) p /= sum;
        return d;
    }

    BackendDescriptor desc_;
    MockVocabulary vocab_;
};

// Seeded hash-projection embedder; text and image inputs live in keyed
// subspaces so embed_text("x") != embed_image("x").
class MockEmbedderBackend : public EmbedderBackend {
public:
    MockEmbedderBackend(BackendDescriptor desc, std::size_t dim = 512)
        : desc_(std::move(desc)), dim_(dim) {
        if (dim_ == 0) throw ConfigurationError("embedder dimension must be positive");
    }

    const BackendDescriptor& descriptor() const override { return desc_; }
    std::size_t dim() const override { return dim_; }

    EmbeddingVector embed_text(const std::string& text) const override { return embed("text", text); }
    EmbeddingVector embed_image(const std::string& image_ref) const override {
        return embed("image", image_ref);
    }

private:
    EmbeddingVector embed(std::string_view kind, const std::string& input) const {
        if (input.empty()) throw ValidationError("cannot embed empty input");
        CounterRng rng(stable_hash(fnv1a64(desc_.model_id), kind, fnv1a64(input)));
        EmbeddingVector v;
        v.values.resize(dim_);
        for (double& x : v.values) x = 2.0 * rng.next_unit() - 1.0;
        v.normalize();
        return v;
    }

    BackendDescriptor desc_;
    std::size_t dim_;
};

// Deterministic pseudo-detections per (model_id, image, category).
class MockDetectorBackend : public DetectorBackend {
public:
    explicit MockDetectorBackend(BackendDescriptor desc) : desc_(std::move(desc)) {}

    const BackendDescriptor& descriptor() const override { return desc_; }

    std::vector<DetectedTag> detect(const std::string& image_ref,
                                    const std::vector<std::string>& vocabulary,
                                    double threshold) const override {
        if (vocabulary.empty()) throw ValidationError("detector vocabulary is empty");
        if (threshold < 0.0 || threshold > 1.0)
            throw ValidationError("detection threshold must be in [0,1]");
        std::vector<DetectedTag> out;
        for (const std::string& category : vocabulary) {
            if (category.empty()) throw ValidationError("empty category name in vocabulary");
            CounterRng rng(stable_hash(fnv1a64(desc_.model_id), image_ref, fnv1a64(category)));
            double conf = rng.next_unit();
            if (conf >= threshold) out.push_back({category, conf});
            // Occasional second instance of the same category.
            if (conf > 0.85) {
                double conf2 = conf - 0.25 * rng.next_unit();
                if (conf2 >= threshold) out.push_back({category, conf2});
            }
        }
        return out;
    }

private:
    BackendDescriptor desc_;
};

// Scripted detector for tests that need exact tags.
class ScriptedDetectorBackend : public DetectorBackend {
public:
    ScriptedDetectorBackend(BackendDescriptor desc, std::vector<DetectedTag> detections)
        : desc_(std::move(desc)), detections_(std::move(detections)) {}

    const BackendDescriptor& descriptor() const override { return desc_; }

    std::vector<DetectedTag> detect(const std::string&, const std::vector<std::string>& vocabulary,
                                    double threshold) const override {
        if (vocabulary.empty()) throw ValidationError("detector vocabulary is empty");
        std::vector<DetectedTag> out;
        for (const DetectedTag& t : detections_)
            if (t.confidence >= threshold) out.push_back(t);
        return out;
    }

private:
    BackendDescriptor desc_;
    std::vector<DetectedTag> detections_;
};

// Canned completion keyed by the prompt hash; an optional handler overrides
// it for scripted tests.
class MockChatBackend : public ChatBackend {
public:
    using Handler = std::function<std::string(const std::string& prompt)>;

    explicit MockChatBackend(BackendDescriptor desc, Handler handler = nullptr)
        : desc_(std::move(desc)), handler_(std::move(handler)) {}

    const BackendDescriptor& descriptor() const override { return desc_; }

    std::string chat_complete(const std::string& prompt) const override {
        if (prompt.empty()) throw ValidationError("empty chat prompt");
        if (handler_) return handler_(prompt);
        std::ostringstream out;
        out << "answer: a scene combining " << std::hex << stable_hash(fnv1a64(desc_.model_id),
                                                                       prompt);
        return out.str();
    }

private:
    BackendDescriptor desc_;
    Handler handler_;
};

}  // namespace vqapipe
