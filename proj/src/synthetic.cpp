#include "conceptevo/synthetic.hpp"

#include "conceptevo/error.hpp"
#include "conceptevo/hashing.hpp"
#include "conceptevo/rng.hpp"

#include <fmt/format.h>

namespace conceptevo {

namespace {

constexpr double kEpochJitter = 0.02;

std::uint64_t layer_seed(const SyntheticSpec& spec, std::string_view model, std::string_view layer) {
    return Rng::mix(spec.seed ^ fnv1a64(layer, fnv1a64(model)));
}

ClassId concept_class(const SyntheticSpec& spec, std::size_t concept_id) {
    return static_cast<ClassId>(concept_id % spec.classes);
}

// Spatial maximum of neuron n on image x at epoch index e (of `epochs`).
double max_value(const SyntheticSpec& spec, std::uint64_t seed, std::size_t x, std::size_t n, std::size_t e,
                 std::size_t epochs) {
    Rng stable = Rng::substream(seed, x, n);
    const double base = spec.noise * stable.uniform01();
    const double strength = 0.5 + 0.5 * stable.uniform01();
    Rng jitter = Rng::substream(seed ^ 0x6a697474, x * 1000003 + n, e);  // "jitt"
    const bool match = x % spec.groups == n % spec.groups;
    const double sharp = static_cast<double>(e + 1) / static_cast<double>(epochs);
    return base + kEpochJitter * jitter.uniform01() + (match ? sharp * strength : 0.0);
}

}  // namespace

SyntheticSpec SyntheticSpec::standard() {
    SyntheticSpec spec;
    spec.models.push_back({"toy", {1, 2, 3}, {{"conv1", 24, 3, 3}, {"conv2", 36, 2, 2}}});
    return spec;
}

float synthetic_head_weight(const SyntheticSpec& spec, std::size_t n, std::size_t pos, ClassId cls) {
    const auto magnitude = static_cast<float>(1 + Rng::mix(spec.seed ^ (n * 131 + pos)) % 4) / 8.0F;
    return concept_class(spec, n % spec.groups) == cls ? magnitude : -magnitude;
}

SyntheticDataset make_synthetic(const SyntheticSpec& spec) {
    if (spec.groups == 0 || spec.classes == 0) throw ConfigError("synthetic data needs groups and classes");
    if (spec.images == 0) throw ConfigError("synthetic data needs images");

    SyntheticDataset out;
    DatasetManifest& manifest = out.manifest;
    manifest.image_count = spec.images;
    for (std::size_t x = 0; x < spec.images; ++x) {
        manifest.image_labels[static_cast<ImageId>(x)] = concept_class(spec, x % spec.groups);
    }
    for (std::size_t c = 0; c < spec.classes; ++c) manifest.class_names[static_cast<ClassId>(c)] = fmt::format("c{}", c);
    for (const auto& model : spec.models) {
        ModelEntry entry{model.model_id, model.epochs, {}};
        for (const auto& layer : model.layers) {
            entry.layers.push_back({layer.layer_id, layer.neurons, layer.height, layer.width});
        }
        manifest.models.push_back(std::move(entry));
    }
    manifest.validate();

    for (const auto& model : spec.models) {
        for (const auto& layer : model.layers) {
            const std::uint64_t seed = layer_seed(spec, model.model_id, layer.layer_id);
            const std::size_t plane = layer.height * layer.width;
            for (std::size_t e = 0; e < model.epochs.size(); ++e) {
                const int epoch = model.epochs[e];
                MaxActivationMatrix acts(spec.images, layer.neurons);
                for (std::size_t x = 0; x < spec.images; ++x) {
                    for (std::size_t n = 0; n < layer.neurons; ++n) {
                        acts(x, n) = static_cast<float>(max_value(spec, seed, x, n, e, model.epochs.size()));
                    }
                }
                if (spec.with_maps) {
                    for (std::size_t c = 0; c < spec.classes; ++c) {
                        const auto cls = static_cast<ClassId>(c);
                        const auto ids = manifest.images_of_class(cls);
                        LayerTensor maps(ids, layer.height, layer.width, layer.neurons);
                        LayerTensor grads(ids, layer.height, layer.width, layer.neurons);
                        for (std::size_t i = 0; i < ids.size(); ++i) {
                            for (std::size_t n = 0; n < layer.neurons; ++n) {
                                const float peak = acts(ids[i], n);
                                Rng shape = Rng::substream(seed ^ 0x6d617073, ids[i], n);  // "maps"
                                const std::size_t argmax = shape.uniform_index(plane);
                                for (std::size_t p = 0; p < plane; ++p) {
                                    const float u = static_cast<float>(shape.uniform01());
                                    const float v = p == argmax ? peak : peak * u;
                                    maps.at(i, p / layer.width, p % layer.width, n) = v;
                                    grads.at(i, p / layer.width, p % layer.width, n) =
                                        synthetic_head_weight(spec, n, p, cls);
                                }
                            }
                        }
                        out.tensors.push_back({TensorKind::activation_maps, model.model_id, epoch, layer.layer_id, cls,
                                               {}, std::move(maps)});
                        out.tensors.push_back({TensorKind::logit_gradients, model.model_id, epoch, layer.layer_id, cls,
                                               {}, std::move(grads)});
                    }
                }
                out.tensors.push_back(
                    {TensorKind::max_activations, model.model_id, epoch, layer.layer_id, 0, std::move(acts), {}});
            }
        }
    }
    return out;
}

void write_synthetic(const std::filesystem::path& root, const SyntheticSpec& spec) {
    const SyntheticDataset data = make_synthetic(spec);
    write_dataset(root, data.manifest, data.tensors);
}

}  // namespace conceptevo
