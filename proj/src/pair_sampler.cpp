#include "conceptevo/pair_sampler.hpp"

#include "conceptevo/error.hpp"
#include "conceptevo/rng.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

namespace conceptevo {

namespace fs = std::filesystem;

namespace {

using Pair = std::pair<std::uint32_t, std::uint32_t>;

void sample_round(const std::vector<std::vector<std::uint32_t>>& groups, std::size_t round, std::uint64_t seed,
                  std::vector<Pair>& out) {
    std::vector<std::uint32_t> scratch;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].size() < 2) continue;
        scratch = groups[g];
        Rng rng = Rng::substream(seed, round, g);
        rng.shuffle(std::span{scratch});
        for (std::size_t i = 0; i + 1 < scratch.size(); ++i) {
            out.emplace_back(std::min(scratch[i], scratch[i + 1]), std::max(scratch[i], scratch[i + 1]));
        }
    }
}

}  // namespace

PairMultiset sample_window_pairs(const std::vector<std::vector<std::uint32_t>>& groups, PairKind kind,
                                 std::size_t rounds, std::uint64_t seed, std::size_t workers) {
    if (rounds == 0) throw ConfigError("rounds must be at least 1");
    PairMultiset result{kind, rounds, seed, {}};

    std::size_t per_round = 0;
    for (const auto& g : groups) per_round += g.empty() ? 0 : g.size() - 1;
    result.pairs.reserve(per_round * rounds);

    workers = std::clamp<std::size_t>(workers, 1, rounds);
    if (workers == 1) {
        for (std::size_t r = 0; r < rounds; ++r) sample_round(groups, r, seed, result.pairs);
        return result;
    }
    // Rounds are split into contiguous blocks and concatenated in round order.
    std::vector<std::vector<Pair>> blocks(workers);
    {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (rounds + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t r = w * chunk; r < std::min(rounds, (w + 1) * chunk); ++r) {
                    sample_round(groups, r, seed, blocks[w]);
                }
            });
        }
    }
    for (auto& block : blocks) result.pairs.insert(result.pairs.end(), block.begin(), block.end());
    return result;
}

PairMultiset sample_coactivated_neuron_pairs(const StimuliTable& stimuli, std::size_t rounds, std::uint64_t seed,
                                             std::size_t workers) {
    return sample_window_pairs(stimuli.neurons_per_image(), PairKind::neuron, rounds, seed, workers);
}

PairMultiset sample_costimulating_image_pairs(const TopNeuronsPerImage& top_neurons, std::size_t rounds,
                                              std::uint64_t seed, std::size_t workers) {
    return sample_window_pairs(top_neurons.images_per_neuron(), PairKind::image, rounds, seed, workers);
}

void write_pairs(const fs::path& path, const PairMultiset& pairs) {
    std::vector<std::uint32_t> flat;
    flat.reserve(pairs.size() * 2);
    for (const auto& [a, b] : pairs.pairs) {
        flat.push_back(a);
        flat.push_back(b);
    }
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& v : flat) v = __builtin_bswap32(v);
    }
    std::vector<char> bytes(flat.size() * sizeof(std::uint32_t));
    if (!bytes.empty()) std::memcpy(bytes.data(), flat.data(), bytes.size());
    write_file_atomically(path, bytes);

    const nlohmann::json meta = {{"kind", pairs.kind == PairKind::neuron ? "neuron" : "image"},
                                 {"rounds", pairs.rounds},
                                 {"seed", pairs.seed},
                                 {"count", pairs.size()}};
    const std::string text = meta.dump() + "\n";
    fs::path sidecar = path;
    sidecar += ".json";
    write_file_atomically(sidecar, std::span<const char>(text.data(), text.size()));
}

PairMultiset read_pairs(const fs::path& path) {
    fs::path sidecar = path;
    sidecar += ".json";
    if (!fs::exists(path)) throw DependencyError(path.string());
    if (!fs::exists(sidecar)) throw DependencyError(sidecar.string());

    PairMultiset result;
    std::size_t count = 0;
    try {
        const auto meta = nlohmann::json::parse(read_text_file(sidecar));
        result.kind = meta.at("kind").get<std::string>() == "image" ? PairKind::image : PairKind::neuron;
        result.rounds = meta.at("rounds").get<std::size_t>();
        result.seed = meta.at("seed").get<std::uint64_t>();
        count = meta.at("count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(fmt::format("malformed pairs sidecar {}: {}", sidecar.string(), e.what()));
    }
    const std::string bytes = read_text_file(path);
    const std::size_t expected = count * 2 * sizeof(std::uint32_t);
    if (bytes.size() != expected) throw CorruptFileError(path.string(), expected, bytes.size());

    std::vector<std::uint32_t> flat(count * 2);
    if (!flat.empty()) std::memcpy(flat.data(), bytes.data(), bytes.size());
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& v : flat) v = __builtin_bswap32(v);
    }
    result.pairs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) result.pairs.emplace_back(flat[2 * i], flat[2 * i + 1]);
    return result;
}

}  // namespace conceptevo
