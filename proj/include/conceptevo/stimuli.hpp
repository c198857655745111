#pragma once

#include "conceptevo/dataset.hpp"

#include <cstddef>
#include <iosfwd>
#include <vector>

namespace conceptevo {

inline constexpr std::size_t kDefaultTopK = 10;

struct Stimulus {
    ImageId image = 0;
    float activation = 0.0F;
    bool operator==(const Stimulus&) const = default;
};

/// Ordering used by every top-k selection in the engine: higher activation
/// first, ties broken by the smaller id.
template <class Id>
constexpr bool ranks_before(float lhs_value, Id lhs_id, float rhs_value, Id rhs_id) noexcept {
    return lhs_value > rhs_value || (lhs_value == rhs_value && lhs_id < rhs_id);
}

/// Per neuron, its top-k images by max activation in ranking order.
struct StimuliTable {
    std::size_t k = 0;
    std::size_t image_count = 0;
    std::vector<std::vector<Stimulus>> neurons;

    std::size_t neuron_count() const noexcept { return neurons.size(); }
    /// Image ids only, in ranking order.
    std::vector<ImageId> images_of(std::size_t neuron) const;
    /// For every image, the neurons whose stimuli contain it (ascending neuron id).
    std::vector<std::vector<NeuronId>> neurons_per_image() const;

    bool operator==(const StimuliTable&) const = default;
};

/// Per image, its top-k neurons by activation in ranking order.
struct TopNeuronsPerImage {
    std::size_t k = 0;
    std::size_t neuron_count = 0;
    std::vector<std::vector<NeuronId>> images;

    /// For every neuron, the images having it in their top-k (ascending image id).
    std::vector<std::vector<ImageId>> images_per_neuron() const;

    bool operator==(const TopNeuronsPerImage&) const = default;
};

/// Streams each neuron's column through a bounded heap of size k.
/// `workers` splits neurons into contiguous ranges; the output is independent
/// of the worker count. Throws ConfigError when k == 0.
StimuliTable compute_stimuli(const MaxActivationMatrix& acts, std::size_t k, std::size_t workers = 1);

/// Transpose analogue of compute_stimuli.
TopNeuronsPerImage compute_top_neurons_per_image(const MaxActivationMatrix& acts, std::size_t k,
                                                 std::size_t workers = 1);

/// Column-concatenates layer matrices that share an image count, so neurons of
/// several layers can be handled as one universe. Neuron j of layer i lands at
/// column offsets[i] + j.
MaxActivationMatrix concatenate_layers(std::span<const MaxActivationMatrix> layers,
                                       std::vector<std::size_t>* offsets = nullptr);

/// JSONL, one object per neuron: {"neuron", "k", "images", "activations"}.
void write_stimuli_jsonl(std::ostream& out, const StimuliTable& table);
StimuliTable read_stimuli_jsonl(std::istream& in, std::size_t image_count);

}  // namespace conceptevo
