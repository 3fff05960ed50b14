#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vqapipe/errors.hpp"
#include "vqapipe/rng.hpp"

namespace vqapipe {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

// Next-token probabilities for one generation step, dense over the vocabulary.
// Support is the set of tokens with nonzero probability.
struct Distribution {
    std::vector<double> probs;

    std::size_t vocab_size() const { return probs.size(); }

    std::size_t support_size() const {
        return static_cast<std::size_t>(
            std::count_if(probs.begin(), probs.end(), [](double p) { return p > 0.0; }));
    }

    // Invariants: non-empty, non-negative, sums to 1 within tol.
    void validate(double tol = 1e-6) const {
        if (probs.empty()) throw ValidationError("distribution is empty");
        double sum = 0.0;
        for (double p : probs) {
            if (!(p >= 0.0)) throw ValidationError("distribution has negative or NaN mass");
            sum += p;
        }
        if (std::abs(sum - 1.0) > tol)
            throw ValidationError("distribution sums to " + std::to_string(sum) + ", expected 1");
    }

    // Argmax with ties broken by ascending token id.
    TokenId argmax() const {
        TokenId best = 0;
        for (TokenId t = 1; t < probs.size(); ++t)
            if (probs[t] > probs[best]) best = t;
        return best;
    }
};

// Binds a decode to its conditioning input: the image for captioning, the
// full prompt for answering. Immutable once opened.
struct GenerationSession {
    std::string conditioning;      // image id or prompt text, as the backend resolved it
    std::uint64_t conditioning_hash = 0;
    std::uint32_t vocabulary_size = 0;
    TokenId eos = 0;
};

enum class DecodeMode { greedy, topk, beam };

struct DecodeParams {
    DecodeMode mode = DecodeMode::greedy;
    std::uint32_t k = 1;               // topk only
    std::uint32_t beam_width = 1;      // beam only
    double length_penalty = 0.0;       // beam only
    std::uint32_t max_new_tokens = 1;
    std::uint64_t seed = 0;            // topk only

    void validate() const {
        if (k < 1) throw ValidationError("k must be >= 1");
        if (beam_width < 1) throw ValidationError("beam_width must be >= 1");
        if (max_new_tokens < 1) throw ValidationError("max_new_tokens must be >= 1");
    }
};

// Yields the next-token distribution given the generated prefix.
using NextTokenOracle = std::function<Distribution(std::span<const TokenId> prefix)>;

// Keeps the k most probable tokens and rescales their mass to sum to 1.
// Ties at the k-th rank are broken by ascending token id.
inline Distribution renormalize_topk(const Distribution& dist, std::uint32_t k) {
    dist.validate();
    if (k < 1) throw ValidationError("k must be >= 1");

    std::vector<TokenId> support;
    support.reserve(dist.probs.size());
    for (TokenId t = 0; t < dist.probs.size(); ++t)
        if (dist.probs[t] > 0.0) support.push_back(t);

    if (k >= support.size()) return dist;

    std::stable_sort(support.begin(), support.end(), [&](TokenId a, TokenId b) {
        if (dist.probs[a] != dist.probs[b]) return dist.probs[a] > dist.probs[b];
        return a < b;
    });
    support.resize(k);

    double kept = 0.0;
    for (TokenId t : support) kept += dist.probs[t];

    Distribution out;
    out.probs.assign(dist.probs.size(), 0.0);
    for (TokenId t : support) out.probs[t] = dist.probs[t] / kept;
    return out;
}

namespace detail {

inline Distribution step(const NextTokenOracle& oracle, std::span<const TokenId> prefix) {
    Distribution d = oracle(prefix);
    d.validate();
    return d;
}

}  // namespace detail

// Repeatedly appends the most probable token until eos or the budget.
inline TokenSequence greedy_decode(const NextTokenOracle& oracle, const GenerationSession& session,
                                   std::uint32_t max_new_tokens) {
    TokenSequence out;
    out.reserve(max_new_tokens);
    for (std::uint32_t t = 0; t < max_new_tokens; ++t) {
        Distribution d = detail::step(oracle, out);
        TokenId next = d.argmax();
        out.push_back(next);
        if (next == session.eos) break;
    }
    return out;
}

// Draws each step from the top-k renormalized distribution using a counter
// stream derived from seed. Identical (seed, oracle, params) gives identical
// output on every platform.
inline TokenSequence topk_sample(const NextTokenOracle& oracle, const GenerationSession& session,
                                 std::uint32_t k, std::uint32_t max_new_tokens, std::uint64_t seed) {
    if (k < 1) throw ValidationError("k must be >= 1");
    CounterRng rng(seed);
    TokenSequence out;
    out.reserve(max_new_tokens);
    for (std::uint32_t t = 0; t < max_new_tokens; ++t) {
        Distribution d = renormalize_topk(detail::step(oracle, out), k);
        double u = rng.next_unit();
        double acc = 0.0;
        TokenId next = d.argmax();  // fallback for u landing past accumulated rounding
        for (TokenId tok = 0; tok < d.probs.size(); ++tok) {
            if (d.probs[tok] <= 0.0) continue;
            acc += d.probs[tok];
            if (u < acc) {
                next = tok;
                break;
            }
        }
        out.push_back(next);
        if (next == session.eos) break;
    }
    return out;
}

// score = cum_logprob / length^alpha; length counts generated tokens
// including eos. Negative alpha favors shorter hypotheses.
inline double beam_score(double cum_logprob, std::uint32_t length, double length_penalty) {
    if (length < 1) throw ValidationError("length must be >= 1");
    return cum_logprob / std::pow(static_cast<double>(length), length_penalty);
}

// Breadth-limited search over cumulative log probability; the winner is the
// finished (or, failing that, live) hypothesis with maximal beam_score, ties
// broken by lexicographically smallest token sequence.
inline TokenSequence beam_search(const NextTokenOracle& oracle, const GenerationSession& session,
                                 std::uint32_t beam_width, double length_penalty,
                                 std::uint32_t max_new_tokens) {
    if (beam_width < 1) throw ValidationError("beam_width must be >= 1");

    struct Hypothesis {
        TokenSequence tokens;
        double cum_logprob = 0.0;
    };

    std::vector<Hypothesis> live{{{}, 0.0}};
    std::vector<Hypothesis> finished;

    for (std::uint32_t t = 0; t < max_new_tokens && !live.empty(); ++t) {
        std::vector<Hypothesis> candidates;
        candidates.reserve(live.size() * 4);
        for (const Hypothesis& h : live) {
            Distribution d = detail::step(oracle, h.tokens);
            for (TokenId tok = 0; tok < d.probs.size(); ++tok) {
                if (d.probs[tok] <= 0.0) continue;
                Hypothesis next{h.tokens, h.cum_logprob + std::log(d.probs[tok])};
                next.tokens.push_back(tok);
                candidates.push_back(std::move(next));
            }
        }
        std::sort(candidates.begin(), candidates.end(), [](const Hypothesis& a, const Hypothesis& b) {
            if (a.cum_logprob != b.cum_logprob) return a.cum_logprob > b.cum_logprob;
            return a.tokens < b.tokens;
        });
        if (candidates.size() > beam_width) candidates.resize(beam_width);

        live.clear();
        for (Hypothesis& h : candidates) {
            if (h.tokens.back() == session.eos)
                finished.push_back(std::move(h));
            else
                live.push_back(std::move(h));
        }
    }

    const std::vector<Hypothesis>& pool = finished.empty() ? live : finished;
    if (pool.empty()) throw ValidationError("beam search produced no hypotheses");

    const Hypothesis* best = &pool.front();
    double best_score =
        beam_score(best->cum_logprob, static_cast<std::uint32_t>(best->tokens.size()), length_penalty);
    for (const Hypothesis& h : pool) {
        double s = beam_score(h.cum_logprob, static_cast<std::uint32_t>(h.tokens.size()), length_penalty);
        if (s > best_score || (s == best_score && h.tokens < best->tokens)) {
            best = &h;
            best_score = s;
        }
    }
    return best->tokens;
}

// Single dispatch point used by backends that decode locally.
inline TokenSequence decode(const NextTokenOracle& oracle, const GenerationSession& session,
                            const DecodeParams& params) {
    params.validate();
    switch (params.mode) {
        case DecodeMode::greedy:
            return greedy_decode(oracle, session, params.max_new_tokens);
        case DecodeMode::topk:
            return topk_sample(oracle, session, params.k, params.max_new_tokens, params.seed);
        case DecodeMode::beam:
            return beam_search(oracle, session, params.beam_width, params.length_penalty,
                               params.max_new_tokens);
    }
    throw ValidationError("unknown decode mode");
}

}  // namespace vqapipe
