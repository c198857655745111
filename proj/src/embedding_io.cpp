#include "conceptevo/embedding.hpp"
#include "conceptevo/error.hpp"

#include <istream>
#include <ostream>

#include <fmt/format.h>
#include <json.hpp>

namespace conceptevo {

using nlohmann::json;

void write_embeddings_jsonl(std::ostream& out, const EmbeddingSpace& space) {
    for (const auto& [key, vec] : space.neurons) {
        json line = {{"kind", "neuron"},
                     {"model", key.model_id},
                     {"epoch", key.epoch},
                     {"layer", key.layer_id},
                     {"neuron", key.neuron},
                     {"provenance", to_string(vec.provenance)},
                     {"vector", vec.values}};
        out << line.dump() << '\n';
    }
    for (const auto& [id, vec] : space.images) {
        json line = {{"kind", "image"}, {"image", id}, {"provenance", to_string(vec.provenance)}, {"vector", vec.values}};
        out << line.dump() << '\n';
    }
}

EmbeddingSpace read_embeddings_jsonl(std::istream& in) {
    EmbeddingSpace space;
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (text.empty()) continue;
        try {
            const json line = json::parse(text);
            auto values = line.at("vector").get<std::vector<double>>();
            if (space.dim == 0) space.dim = values.size();
            const auto provenance = provenance_from_string(line.at("provenance").get<std::string>());
            const auto kind = line.at("kind").get<std::string>();
            if (kind == "neuron") {
                space.add_neuron({line.at("model").get<std::string>(), line.at("epoch").get<int>(),
                                  line.at("layer").get<std::string>(), line.at("neuron").get<NeuronId>()},
                                 std::move(values), provenance);
            } else if (kind == "image") {
                space.add_image(line.at("image").get<ImageId>(), std::move(values), provenance);
            } else {
                throw DataError(fmt::format("embeddings line {}: unknown kind '{}'", line_no, kind));
            }
        } catch (const json::exception& e) {
            throw DataError(fmt::format("embeddings line {}: {}", line_no, e.what()));
        } catch (const ConfigError& e) {
            throw DataError(fmt::format("embeddings line {}: {}", line_no, e.what()));
        }
    }
    return space;
}

ImageVectors image_vectors_of(const EmbeddingSpace& space, std::size_t image_count) {
    ImageVectors out(image_count, space.dim);
    for (const auto& [id, vec] : space.images) {
        if (id >= image_count) throw DataError(fmt::format("image {} outside dataset of {} images", id, image_count));
        std::copy(vec.values.begin(), vec.values.end(), out.table.row(id).begin());
        out.source[id] = vec.provenance;
    }
    return out;
}

}  // namespace conceptevo
