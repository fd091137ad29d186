#include "aflora/rng.hpp"

#include "aflora/errors.hpp"

namespace aflora {

namespace {

uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

uint64_t SeededRng::next_u64() { return splitmix64(state_); }

double SeededRng::next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
}

uint64_t SeededRng::next_below(uint64_t n) {
    if (n == 0) throw ContractError("SeededRng::next_below: n must be positive");
    // Rejection sampling keeps the distribution exactly uniform.
    uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
}

SeededRng SeededRng::fork(uint64_t stream_id) const {
    uint64_t s = seed_;
    uint64_t mixed = splitmix64(s) ^ (0x6a09e667f3bcc909ULL + stream_id * 0x9e3779b97f4a7c15ULL);
    return SeededRng(mixed);
}

}  // namespace aflora
