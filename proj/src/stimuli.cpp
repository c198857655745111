#include "conceptevo/stimuli.hpp"

#include "conceptevo/error.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <string>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

namespace conceptevo {

namespace {

/// Sorted list of at most k (id, value) entries. Inserting scans for the slot
/// in O(k); k is small (10 by default), so this beats a heap in practice and
/// keeps the output already in ranking order.
template <class Id>
class BoundedTopK {
public:
    explicit BoundedTopK(std::size_t k) : k_(k) { entries_.reserve(k + 1); }

    void offer(Id id, float value) {
        if (entries_.size() == k_) {
            const auto& worst = entries_.back();
            if (!ranks_before(value, id, worst.second, worst.first)) return;
        }
        auto pos = std::find_if(entries_.begin(), entries_.end(),
                                [&](const auto& e) { return ranks_before(value, id, e.second, e.first); });
        entries_.insert(pos, {id, value});
        if (entries_.size() > k_) entries_.pop_back();
    }

    const std::vector<std::pair<Id, float>>& entries() const noexcept { return entries_; }

private:
    std::size_t k_;
    std::vector<std::pair<Id, float>> entries_;
};

template <class Fn>
void parallel_ranges(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
        fn(0, n);
        return;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        pool.emplace_back([&fn, begin, end = std::min(n, begin + chunk)] { fn(begin, end); });
    }
}

}  // namespace

std::vector<ImageId> StimuliTable::images_of(std::size_t neuron) const {
    std::vector<ImageId> ids;
    ids.reserve(neurons[neuron].size());
    for (const auto& s : neurons[neuron]) ids.push_back(s.image);
    return ids;
}

std::vector<std::vector<NeuronId>> StimuliTable::neurons_per_image() const {
    std::vector<std::vector<NeuronId>> out(image_count);
    for (std::size_t n = 0; n < neurons.size(); ++n) {
        for (const auto& s : neurons[n]) out[s.image].push_back(static_cast<NeuronId>(n));
    }
    return out;
}

std::vector<std::vector<ImageId>> TopNeuronsPerImage::images_per_neuron() const {
    std::vector<std::vector<ImageId>> out(neuron_count);
    for (std::size_t x = 0; x < images.size(); ++x) {
        for (NeuronId n : images[x]) out[n].push_back(static_cast<ImageId>(x));
    }
    return out;
}

StimuliTable compute_stimuli(const MaxActivationMatrix& acts, std::size_t k, std::size_t workers) {
    if (k == 0) throw ConfigError("k must be at least 1");
    StimuliTable table;
    table.k = k;
    table.image_count = acts.image_count();
    table.neurons.resize(acts.neuron_count());

    parallel_ranges(acts.neuron_count(), workers, [&](std::size_t begin, std::size_t end) {
        std::vector<BoundedTopK<ImageId>> heaps(end - begin, BoundedTopK<ImageId>(k));
        for (std::size_t x = 0; x < acts.image_count(); ++x) {
            const auto row = acts.row(x);
            for (std::size_t n = begin; n < end; ++n) heaps[n - begin].offer(static_cast<ImageId>(x), row[n]);
        }
        for (std::size_t n = begin; n < end; ++n) {
            auto& out = table.neurons[n];
            for (const auto& [id, value] : heaps[n - begin].entries()) out.push_back({id, value});
        }
    });
    return table;
}

TopNeuronsPerImage compute_top_neurons_per_image(const MaxActivationMatrix& acts, std::size_t k, std::size_t workers) {
    if (k == 0) throw ConfigError("k must be at least 1");
    TopNeuronsPerImage top;
    top.k = k;
    top.neuron_count = acts.neuron_count();
    top.images.resize(acts.image_count());

    parallel_ranges(acts.image_count(), workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t x = begin; x < end; ++x) {
            BoundedTopK<NeuronId> heap(k);
            const auto row = acts.row(x);
            for (std::size_t n = 0; n < row.size(); ++n) heap.offer(static_cast<NeuronId>(n), row[n]);
            for (const auto& entry : heap.entries()) top.images[x].push_back(entry.first);
        }
    });
    return top;
}

MaxActivationMatrix concatenate_layers(std::span<const MaxActivationMatrix> layers, std::vector<std::size_t>* offsets) {
    if (layers.empty()) return {};
    const std::size_t images = layers.front().image_count();
    std::size_t total = 0;
    std::vector<std::size_t> starts;
    for (const auto& layer : layers) {
        if (layer.image_count() != images) throw ConfigError("layers disagree on image count");
        starts.push_back(total);
        total += layer.neuron_count();
    }
    MaxActivationMatrix out(images, total);
    for (std::size_t x = 0; x < images; ++x) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto row = layers[l].row(x);
            std::copy(row.begin(), row.end(), out.values().begin() + static_cast<std::ptrdiff_t>(x * total + starts[l]));
        }
    }
    if (offsets != nullptr) *offsets = std::move(starts);
    return out;
}

void write_stimuli_jsonl(std::ostream& out, const StimuliTable& table) {
    for (std::size_t n = 0; n < table.neurons.size(); ++n) {
        nlohmann::json line;
        line["neuron"] = n;
        line["k"] = table.k;
        auto& images = line["images"] = nlohmann::json::array();
        auto& values = line["activations"] = nlohmann::json::array();
        for (const auto& s : table.neurons[n]) {
            images.push_back(s.image);
            values.push_back(s.activation);
        }
        out << line.dump() << '\n';
    }
}

StimuliTable read_stimuli_jsonl(std::istream& in, std::size_t image_count) {
    StimuliTable table;
    table.image_count = image_count;
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (text.empty()) continue;
        try {
            const auto line = nlohmann::json::parse(text);
            const auto neuron = line.at("neuron").get<std::size_t>();
            if (neuron != table.neurons.size()) {
                throw DataError(fmt::format("stimuli line {}: expected neuron {}, found {}", line_no,
                                            table.neurons.size(), neuron));
            }
            table.k = line.at("k").get<std::size_t>();
            const auto images = line.at("images").get<std::vector<ImageId>>();
            const auto values = line.at("activations").get<std::vector<float>>();
            if (images.size() != values.size()) throw DataError(fmt::format("stimuli line {}: length mismatch", line_no));
            auto& list = table.neurons.emplace_back();
            for (std::size_t i = 0; i < images.size(); ++i) {
                if (images[i] >= image_count) {
                    throw DataError(fmt::format("stimuli line {}: image {} out of range", line_no, images[i]));
                }
                list.push_back({images[i], values[i]});
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError(fmt::format("stimuli line {}: {}", line_no, e.what()));
        }
    }
    return table;
}

}  // namespace conceptevo
