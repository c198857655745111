#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <utility>

namespace conceptevo {

/// Bit-exact, platform-independent random stream.
///
/// The standard distributions (`std::uniform_int_distribution`, `std::shuffle`)
/// are implementation-defined, so every sampling step in the engine goes through
/// this generator instead. The generator is SplitMix64; it is small enough that
/// creating one substream per (round, item) is cheap.
class Rng {
public:
    using result_type = std::uint64_t;

    explicit constexpr Rng(std::uint64_t seed) noexcept : state_(seed) {}

    /// Derives an independent substream. The rule is fixed: the child state is
    /// mix(mix(mix(seed) ^ a) ^ b), so the same (seed, a, b) always yields the
    /// same stream regardless of which worker asks for it.
    static constexpr Rng substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept {
        return Rng(mix(mix(mix(seed) ^ a) ^ b));
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    /// Uniform integer in [0, n). Lemire's multiply-and-reject, unbiased.
    constexpr std::uint64_t uniform_index(std::uint64_t n) noexcept {
        if (n <= 1) return 0;
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const auto product = static_cast<unsigned __int128>((*this)()) * n;
            if (static_cast<std::uint64_t>(product) >= threshold) {
                return static_cast<std::uint64_t>(product >> 64);
            }
        }
    }

    /// Uniform double in [0, 1) with 53 random bits.
    constexpr double uniform01() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    constexpr double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform01(); }

    /// Fisher-Yates, walking from the back.
    template <class T>
    constexpr void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

}  // namespace conceptevo
