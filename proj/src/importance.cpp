#include "conceptevo/importance.hpp"

#include "conceptevo/error.hpp"
#include "conceptevo/hashing.hpp"
#include "conceptevo/rng.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>

#include <fmt/format.h>
#include <json.hpp>

namespace conceptevo {

using nlohmann::json;

EvolutionDelta EvolutionDelta::between(const PlaneView& from, const PlaneView& to) {
    if (from.height != to.height || from.width != to.width) {
        throw ConfigError(fmt::format("delta planes differ in shape: {}x{} vs {}x{}", from.height, from.width,
                                      to.height, to.width));
    }
    EvolutionDelta delta{from.height, from.width, std::vector<double>(from.size())};
    for (std::size_t i = 0; i < from.size(); ++i) {
        delta.plane[i] = static_cast<double>(to[i]) - static_cast<double>(from[i]);
    }
    return delta;
}

double sensitivity(const PlaneView& gradient, const EvolutionDelta& delta) {
    if (gradient.height != delta.height || gradient.width != delta.width) {
        throw ConfigError(fmt::format("gradient plane {}x{} does not match delta plane {}x{}", gradient.height,
                                      gradient.width, delta.height, delta.width));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < delta.plane.size(); ++i) s += static_cast<double>(gradient[i]) * delta.plane[i];
    return s;
}

double importance_score(std::span<const double> sensitivities) {
    if (sensitivities.empty()) throw ConfigError("importance needs at least one class image");
    const auto positive = std::count_if(sensitivities.begin(), sensitivities.end(), [](double s) { return s > 0.0; });
    return static_cast<double>(positive) / static_cast<double>(sensitivities.size());
}

std::array<std::size_t, 4> quartile_sizes(std::size_t n) {
    std::array<std::size_t, 4> sizes{};
    for (std::size_t i = 0; i < 4; ++i) sizes[i] = n / 4 + (i < n % 4 ? 1 : 0);
    return sizes;
}

LayerBins rank_and_bin(std::span<const EvolutionImportance> layer_scores, std::uint64_t seed) {
    std::vector<const EvolutionImportance*> ranked;
    ranked.reserve(layer_scores.size());
    for (const auto& s : layer_scores) ranked.push_back(&s);
    std::sort(ranked.begin(), ranked.end(), [](const auto* a, const auto* b) {
        return a->score > b->score || (a->score == b->score && a->neuron < b->neuron);
    });

    LayerBins out;
    const auto sizes = quartile_sizes(ranked.size());
    std::size_t pos = 0;
    for (std::size_t bin = 0; bin < 4; ++bin) {
        for (std::size_t i = 0; i < sizes[bin]; ++i) out.bins[bin].push_back(ranked[pos++]->neuron);
    }

    std::vector<NeuronId> ids;
    ids.reserve(layer_scores.size());
    for (const auto& s : layer_scores) ids.push_back(s.neuron);
    std::sort(ids.begin(), ids.end());
    const std::size_t take = (ids.size() + 3) / 4;
    Rng rng = Rng::substream(seed, 0x72616e64);  // "rand"
    for (std::size_t i = 0; i < take; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.uniform_index(ids.size() - i));
        std::swap(ids[i], ids[j]);
    }
    out.random.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(out.random.begin(), out.random.end());
    return out;
}

RevertPlan make_revert_plan(std::span<const EvolutionImportance> scores, std::uint64_t seed) {
    std::map<std::string, std::vector<EvolutionImportance>> by_layer;
    for (const auto& s : scores) by_layer[s.layer_id].push_back(s);
    RevertPlan plan;
    plan.seed = seed;
    for (const auto& [layer, list] : by_layer) {
        std::vector<NeuronId> ids;
        for (const auto& s : list) ids.push_back(s.neuron);
        std::sort(ids.begin(), ids.end());
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
            throw ConfigError(fmt::format("layer '{}' has more than one score for a neuron", layer));
        }
        plan.layers[layer] = rank_and_bin(list, Rng::mix(seed ^ fnv1a64(layer)));
    }
    return plan;
}

std::vector<ImageId> sample_class_images(std::span<const ImageId> available, std::size_t sample_size,
                                         std::uint64_t seed) {
    std::vector<ImageId> ids(available.begin(), available.end());
    std::sort(ids.begin(), ids.end());
    if (ids.size() > sample_size) {
        Rng rng = Rng::substream(seed, 0x73616d70);  // "samp"
        for (std::size_t i = 0; i < sample_size; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.uniform_index(ids.size() - i));
            std::swap(ids[i], ids[j]);
        }
        ids.resize(sample_size);
        std::sort(ids.begin(), ids.end());
    }
    return ids;
}

std::vector<EvolutionImportance> class_importance_pipeline(const DatasetReader& dataset, std::string_view model,
                                                           int from, int to, std::string_view layer, ClassId class_id,
                                                           std::size_t sample_size, std::uint64_t seed) {
    if (sample_size == 0) throw ConfigError("sample size must be at least 1");
    const LayerMeta& meta = dataset.manifest().layer(model, from, layer);
    dataset.manifest().layer(model, to, layer);

    const LayerTensor maps_from = dataset.read_activation_maps(model, from, layer, class_id);
    const LayerTensor maps_to = dataset.read_activation_maps(model, to, layer, class_id);
    const LayerTensor grads = dataset.read_logit_gradients(model, from, layer, class_id);

    for (ImageId x : maps_from.image_ids()) {
        const auto it = dataset.manifest().image_labels.find(x);
        if (it == dataset.manifest().image_labels.end() || it->second != class_id) {
            throw DataError(fmt::format("image {} in maps of class {} is labelled differently", x, class_id));
        }
    }
    const auto sampled = sample_class_images(maps_from.image_ids(), sample_size, seed);
    if (sampled.empty()) throw ConfigError(fmt::format("class {} has no exported images", class_id));

    struct Slots {
        std::size_t from, to, grad;
    };
    std::vector<Slots> slots;
    for (ImageId x : sampled) {
        const auto a = maps_from.index_of(x);
        const auto b = maps_to.index_of(x);
        const auto g = grads.index_of(x);
        if (!b || !g) {
            throw DataError(fmt::format("image {} missing from {} of epoch {}", x, !b ? "maps" : "gradients",
                                        !b ? to : from));
        }
        slots.push_back({*a, *b, *g});
    }

    std::vector<EvolutionImportance> out;
    out.reserve(meta.neuron_count);
    std::vector<double> sens(slots.size());
    for (std::size_t n = 0; n < meta.neuron_count; ++n) {
        for (std::size_t i = 0; i < slots.size(); ++i) {
            const auto delta = EvolutionDelta::between(maps_from.plane(slots[i].from, n), maps_to.plane(slots[i].to, n));
            sens[i] = sensitivity(grads.plane(slots[i].grad, n), delta);
        }
        out.push_back({std::string(model), std::string(layer), static_cast<NeuronId>(n), class_id, from, to,
                       importance_score(sens)});
    }
    return out;
}

void write_importance_jsonl(std::ostream& out, std::span<const EvolutionImportance> scores) {
    for (const auto& s : scores) {
        const json line = {{"model", s.model_id},   {"layer", s.layer_id},       {"neuron", s.neuron},
                           {"class", s.class_id},   {"from_epoch", s.from_epoch}, {"to_epoch", s.to_epoch},
                           {"score", s.score}};
        out << line.dump() << '\n';
    }
}

std::vector<EvolutionImportance> read_importance_jsonl(std::istream& in) {
    std::vector<EvolutionImportance> out;
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (text.empty()) continue;
        try {
            const json line = json::parse(text);
            out.push_back({line.at("model").get<std::string>(), line.at("layer").get<std::string>(),
                           line.at("neuron").get<NeuronId>(), line.at("class").get<ClassId>(),
                           line.at("from_epoch").get<int>(), line.at("to_epoch").get<int>(),
                           line.at("score").get<double>()});
        } catch (const json::exception& e) {
            throw DataError(fmt::format("importance line {}: {}", line_no, e.what()));
        }
    }
    return out;
}

std::string revert_plan_to_json(const RevertPlan& plan) {
    json j;
    j["seed"] = plan.seed;
    j["bins"] = {"0-25", "25-50", "50-75", "75-100"};
    j["layers"] = json::object();
    for (const auto& [layer, bins] : plan.layers) {
        json jl;
        jl["bins"] = json::array();
        for (const auto& bin : bins.bins) jl["bins"].push_back(bin);
        jl["random"] = bins.random;
        j["layers"][layer] = std::move(jl);
    }
    return j.dump(2) + "\n";
}

RevertPlan revert_plan_from_json(const std::string& text) {
    RevertPlan plan;
    try {
        const json j = json::parse(text);
        plan.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& [layer, jl] : j.at("layers").items()) {
            LayerBins bins;
            const auto& jb = jl.at("bins");
            if (jb.size() != 4) throw DataError(fmt::format("layer '{}' must have 4 bins", layer));
            for (std::size_t i = 0; i < 4; ++i) bins.bins[i] = jb.at(i).get<std::vector<NeuronId>>();
            bins.random = jl.at("random").get<std::vector<NeuronId>>();
            plan.layers[layer] = std::move(bins);
        }
    } catch (const json::exception& e) {
        throw DataError(fmt::format("malformed revert plan: {}", e.what()));
    }
    return plan;
}

}  // namespace conceptevo
