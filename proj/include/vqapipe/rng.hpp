#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include "vqapipe/hash.hpp"

namespace vqapipe {

// Counter-based generator: output i of stream s is mix64(s ^ mix64(i)).
// No hidden state beyond the counter, so streams are reproducible across
// platforms and safe to evaluate out of order.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t stream_seed) : stream_(stream_seed) {}

    std::uint64_t next_u64() { return at(counter_++); }

    // Uniform double in [0, 1) with 53 bits of precision.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, bound) via rejection; bound >= 1.
    std::uint64_t next_below(std::uint64_t bound) {
        const std::uint64_t limit = bound * (UINT64_MAX / bound);
        for (;;) {
            std::uint64_t v = next_u64();
            if (v < limit) return v % bound;
        }
    }

    std::uint64_t at(std::uint64_t counter) const { return mix64(stream_ ^ mix64(counter)); }

private:
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

// Stream seed for sample i of an image under a run seed; independent of
// evaluation order and worker layout.
inline std::uint64_t sample_stream_seed(std::uint64_t run_seed, std::string_view image_id,
                                        std::uint64_t sample_index) {
    return stable_hash(run_seed, image_id, sample_index);
}

}  // namespace vqapipe
