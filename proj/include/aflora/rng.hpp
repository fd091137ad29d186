#pragma once

#include <cstdint>
#include <vector>

namespace aflora {

// Counter-based deterministic RNG (splitmix64 core). std::mt19937 plus the
// standard distributions would not give bit-identical streams across standard
// library implementations, so the uniform mappings are spelled out here.
class SeededRng {
  public:
    explicit SeededRng(uint64_t seed) : seed_(seed), state_(seed) {}

    uint64_t seed() const { return seed_; }

    // Next raw 64-bit word.
    uint64_t next_u64();

    // Uniform double in [0, 1) with 53 random mantissa bits.
    double next_unit();

    // Uniform double in [lo, hi).
    double uniform(double lo, double hi);

    // Uniform integer in [0, n). n must be > 0.
    uint64_t next_below(uint64_t n);

    // Deterministic Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        if (items.size() < 2) return;
        for (size_t i = items.size() - 1; i > 0; --i) {
            size_t j = static_cast<size_t>(next_below(i + 1));
            std::swap(items[i], items[j]);
        }
    }

    // Independent stream derived from this seed and a stream id. Used to give
    // model init, batch shuffling and task generation unrelated sequences.
    SeededRng fork(uint64_t stream_id) const;

  private:
    uint64_t seed_;
    uint64_t state_;
};

}  // namespace aflora
