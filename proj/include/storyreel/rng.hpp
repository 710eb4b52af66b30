#pragma once

#include <cstdint>
#include <string_view>

namespace storyreel {

/// Platform-exact pseudo random streams.
///
/// Every value produced here is a function of integer arithmetic only, so a
/// stream seeded with the same key yields bit-identical doubles on every
/// platform. Transcendental functions (log, cos) are avoided on purpose
/// because their last-ulp behaviour differs between libm implementations.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30u)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27u)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31u);
}

inline std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6u) + (a >> 2u));
    return splitmix64(s);
}

template <typename... Rest>
std::uint64_t mix_key(std::uint64_t a, std::uint64_t b, Rest... rest) {
    return mix_key(mix_key(a, b), static_cast<std::uint64_t>(rest)...);
}

/// FNV-1a, used to fold string identifiers into stream keys.
inline std::uint64_t hash_text(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

class Stream {
public:
    explicit Stream(std::uint64_t key) : state_(key) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11u) * 0x1.0p-53; }

    /// Approximately standard normal: Irwin-Hall sum of twelve uniforms.
    /// Mean 0, variance 1, support [-6, 6].
    double normal() {
        double sum = 0.0;
        for (int i = 0; i < 12; ++i) {
            sum += uniform();
        }
        return sum - 6.0;
    }

    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) { return bound == 0 ? 0 : next_u64() % bound; }

private:
    std::uint64_t state_;
};

}  // namespace storyreel
