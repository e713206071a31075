#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace taet {

/// Engine keyed by a tuple of 64-bit values, e.g. (seed, epoch, batch). Every
/// random stream in the library is derived this way so results depend only on
/// the keys, never on call order.
inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> keys) {
    std::vector<std::uint32_t> words;
    words.reserve(keys.size() * 2);
    for (std::uint64_t k : keys) {
        words.push_back(static_cast<std::uint32_t>(k & 0xffffffffu));
        words.push_back(static_cast<std::uint32_t>(k >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

// Stream tags.
inline constexpr std::uint64_t kShuffleStream = 0x5348554646ull;
inline constexpr std::uint64_t kSubsampleStream = 0x53554253ull;
inline constexpr std::uint64_t kMixtureStream = 0x4d4958ull;
inline constexpr std::uint64_t kAttackStream = 0x41544bull;
inline constexpr std::uint64_t kProbeStream = 0x50524f4245ull;

}  // namespace taet
