#pragma once

#include <cstdint>
#include <vector>

namespace lr {

// Deterministic 64-bit generator (SplitMix64, Steele/Lea/Flood 2014).
// The state is a plain counter advanced by the golden-ratio increment and
// the output is a fixed bit-mix of it, so identical seeds give identical
// sequences on every platform. See docs/formats.md for the exact constants.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix64(state_);
    }

    // Uniform float in [0, 1) built from the top 24 bits; exact on any
    // IEEE-754 platform.
    float uniform() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased-enough integer in [0, n) via multiply-shift. Fixed mapping,
    // no rejection loop, so the draw count per call is constant.
    uint64_t below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent stream for (seed, index) pairs; used to give
    // every sample its own generator so results do not depend on batch
    // partitioning.
    static uint64_t substream(uint64_t seed, uint64_t index) {
        return mix64(seed + 0x9E3779B97F4A7C15ull * (index + 1));
    }

    static uint64_t mix64(uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

  private:
    uint64_t state_;
};

}  // namespace lr
