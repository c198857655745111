#pragma once

#include "conceptevo/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace conceptevo {

struct SyntheticLayer {
    std::string layer_id;
    std::size_t neurons = 0;
    std::size_t height = 2;
    std::size_t width = 2;
};

struct SyntheticModel {
    std::string model_id;
    std::vector<int> epochs;
    std::vector<SyntheticLayer> layers;
};

/// A planted-concept dataset. Image x shows concept x % groups and carries
/// class (x % groups) % classes; neuron n of every layer detects concept
/// n % groups. A neuron's response to its own concept grows with the epoch
/// index, so later epochs are sharper. Maps peak at the recorded maximum and
/// gradients come from a linear head over the layer, so they are the same
/// for every image of a class.
struct SyntheticSpec {
    std::vector<SyntheticModel> models;
    std::size_t images = 240;
    std::size_t groups = 6;
    std::size_t classes = 3;
    double noise = 0.3;
    bool with_maps = true;
    std::uint64_t seed = 7;

    /// One model "toy", epochs 1..3, layers conv1 (24 neurons, 3x3) and conv2 (36, 2x2).
    static SyntheticSpec standard();
};

struct SyntheticDataset {
    DatasetManifest manifest;
    std::vector<NamedTensor> tensors;
};

SyntheticDataset make_synthetic(const SyntheticSpec& spec);

/// Generates and writes the dataset under `root`.
void write_synthetic(const std::filesystem::path& root, const SyntheticSpec& spec);

/// Weight of neuron `n` at plane position `pos` in the synthetic linear head
/// for class `cls`: a multiple of 1/8, positive when the neuron's concept maps
/// to `cls`.
float synthetic_head_weight(const SyntheticSpec& spec, std::size_t n, std::size_t pos, ClassId cls);

}  // namespace conceptevo
