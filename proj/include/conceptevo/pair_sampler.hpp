#pragma once

#include "conceptevo/stimuli.hpp"

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace conceptevo {

inline constexpr std::size_t kDefaultRounds = 100;

enum class PairKind { neuron, image };

/// Multiset of unordered id pairs. Each pair is stored as (smaller, larger);
/// duplicates are kept. Order: by round, then by the shared item that produced
/// the pair, then by window position.
struct PairMultiset {
    PairKind kind = PairKind::neuron;
    std::size_t rounds = 0;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;

    std::size_t size() const noexcept { return pairs.size(); }
    bool operator==(const PairMultiset&) const = default;
};

/// Builds the co-activated neuron pair multiset from stimuli.
///
/// For every round and every image, the neurons whose stimuli contain that
/// image are shuffled and every consecutive pair of the shuffled list is
/// appended. The shuffle for (round r, image x) draws from
/// `Rng::substream(seed, r, x)`, so results do not depend on `workers`.
/// Throws ConfigError when rounds == 0.
PairMultiset sample_coactivated_neuron_pairs(const StimuliTable& stimuli, std::size_t rounds, std::uint64_t seed,
                                             std::size_t workers = 1);

/// Dual of the neuron sampler: for every neuron, the images having it among
/// their top-k neurons are shuffled and windowed. Substream is (seed, r, n).
PairMultiset sample_costimulating_image_pairs(const TopNeuronsPerImage& top_neurons, std::size_t rounds,
                                              std::uint64_t seed, std::size_t workers = 1);

/// Shared core of both samplers: `groups[i]` lists the items sharing the i-th
/// context (an image for neuron pairs, a neuron for image pairs).
PairMultiset sample_window_pairs(const std::vector<std::vector<std::uint32_t>>& groups, PairKind kind,
                                 std::size_t rounds, std::uint64_t seed, std::size_t workers = 1);

/// Raw little-endian u32 pairs (a0 b0 a1 b1 ...), no header. Metadata (kind,
/// rounds, seed, count) goes to the `<path>.json` sidecar.
void write_pairs(const std::filesystem::path& path, const PairMultiset& pairs);
PairMultiset read_pairs(const std::filesystem::path& path);

}  // namespace conceptevo
