#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace conceptevo {

inline constexpr int kSchemaVersion = 1;

using ImageId = std::uint32_t;
using NeuronId = std::uint32_t;
using ClassId = std::int32_t;

struct LayerMeta {
    std::string layer_id;
    std::size_t neuron_count = 0;
    std::size_t map_height = 0;
    std::size_t map_width = 0;

    std::size_t plane_size() const noexcept { return map_height * map_width; }
    bool operator==(const LayerMeta&) const = default;
};

struct ModelEntry {
    std::string model_id;
    std::vector<int> epochs;
    std::vector<LayerMeta> layers;

    const LayerMeta* find_layer(std::string_view layer_id) const noexcept;
    bool has_epoch(int epoch) const noexcept;
    bool operator==(const ModelEntry&) const = default;
};

struct DatasetManifest {
    int schema_version = kSchemaVersion;
    std::vector<ModelEntry> models;
    std::size_t image_count = 0;
    std::map<ImageId, ClassId> image_labels;
    std::map<ClassId, std::string> class_names;

    /// Throws DataError describing the first violated invariant.
    void validate() const;

    const ModelEntry* find_model(std::string_view model_id) const noexcept;
    /// Throws ConfigError when the (model, epoch, layer) triple is not declared.
    const LayerMeta& layer(std::string_view model_id, int epoch, std::string_view layer_id) const;
    /// Images labelled `cls`, ascending.
    std::vector<ImageId> images_of_class(ClassId cls) const;

    bool operator==(const DatasetManifest&) const = default;
};

DatasetManifest manifest_from_json(const std::string& text);
std::string manifest_to_json(const DatasetManifest& manifest);

/// Row-major [image_count x neuron_count] matrix of per-image spatial maxima.
class MaxActivationMatrix {
public:
    MaxActivationMatrix() = default;
    MaxActivationMatrix(std::size_t images, std::size_t neurons);
    MaxActivationMatrix(std::size_t images, std::size_t neurons, std::vector<float> values);

    std::size_t image_count() const noexcept { return images_; }
    std::size_t neuron_count() const noexcept { return neurons_; }

    float operator()(std::size_t image, std::size_t neuron) const noexcept { return values_[image * neurons_ + neuron]; }
    float& operator()(std::size_t image, std::size_t neuron) noexcept { return values_[image * neurons_ + neuron]; }

    std::span<const float> row(std::size_t image) const noexcept { return {values_.data() + image * neurons_, neurons_}; }
    std::span<const float> values() const noexcept { return values_; }
    std::span<float> values() noexcept { return values_; }

    bool operator==(const MaxActivationMatrix&) const = default;

private:
    std::size_t images_ = 0;
    std::size_t neurons_ = 0;
    std::vector<float> values_;
};

/// One neuron's [h x w] plane inside a [images x h x w x s] tensor.
/// Consecutive plane elements are `stride` floats apart.
struct PlaneView {
    const float* base = nullptr;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t stride = 1;

    std::size_t size() const noexcept { return height * width; }
    float operator[](std::size_t i) const noexcept { return base[i * stride]; }
    float at(std::size_t row, std::size_t col) const noexcept { return base[(row * width + col) * stride]; }
};

/// Activation maps or logit gradients for one (model, epoch, layer, class).
/// Layout is row-major [images x h x w x s]; `image_ids` is the sidecar index.
class LayerTensor {
public:
    LayerTensor() = default;
    LayerTensor(std::vector<ImageId> image_ids, std::size_t height, std::size_t width, std::size_t neurons);
    LayerTensor(std::vector<ImageId> image_ids, std::size_t height, std::size_t width, std::size_t neurons,
                std::vector<float> values);

    std::size_t image_count() const noexcept { return image_ids_.size(); }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t neuron_count() const noexcept { return neurons_; }
    const std::vector<ImageId>& image_ids() const noexcept { return image_ids_; }

    float& at(std::size_t image_index, std::size_t row, std::size_t col, std::size_t neuron) noexcept {
        return values_[((image_index * height_ + row) * width_ + col) * neurons_ + neuron];
    }
    float at(std::size_t image_index, std::size_t row, std::size_t col, std::size_t neuron) const noexcept {
        return values_[((image_index * height_ + row) * width_ + col) * neurons_ + neuron];
    }

    PlaneView plane(std::size_t image_index, std::size_t neuron) const noexcept {
        return {values_.data() + image_index * height_ * width_ * neurons_ + neuron, height_, width_, neurons_};
    }

    /// Position of `image` within the sidecar index, if present.
    std::optional<std::size_t> index_of(ImageId image) const noexcept;

    std::span<const float> values() const noexcept { return values_; }
    std::span<float> values() noexcept { return values_; }

    bool operator==(const LayerTensor&) const = default;

private:
    std::vector<ImageId> image_ids_;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::size_t neurons_ = 0;
    std::vector<float> values_;
};

enum class TensorKind { max_activations, activation_maps, logit_gradients };

/// A tensor addressed by its place in the dataset layout. `class_id` is unused
/// for max activations.
struct NamedTensor {
    TensorKind kind = TensorKind::max_activations;
    std::string model_id;
    int epoch = 0;
    std::string layer_id;
    ClassId class_id = 0;
    MaxActivationMatrix max_activations;
    LayerTensor layer_tensor;
};

/// Path helpers for the on-disk layout:
///   manifest.json
///   activations/<model>/<epoch>/<layer>.f32
///   maps/<model>/<epoch>/<layer>/<class>.f32   (+ <class>.index.json)
///   grads/<model>/<epoch>/<layer>/<class>.f32  (+ <class>.index.json)
namespace layout {
std::filesystem::path manifest(const std::filesystem::path& root);
std::filesystem::path max_activations(const std::filesystem::path& root, std::string_view model, int epoch,
                                      std::string_view layer);
std::filesystem::path tensor(const std::filesystem::path& root, TensorKind kind, std::string_view model, int epoch,
                             std::string_view layer, ClassId cls);
std::filesystem::path sidecar(const std::filesystem::path& tensor_path);
}  // namespace layout

/// Validates the manifest and every tensor shape, then writes the dataset.
/// Nothing is written when validation fails. Each file is written to a `.tmp`
/// sibling and renamed into place, so a final path never holds a truncated file.
void write_dataset(const std::filesystem::path& root, const DatasetManifest& manifest,
                   std::span<const NamedTensor> tensors);

/// Incremental writer for exporters that produce tensors one at a time.
/// Requires exclusive access to the root.
class DatasetWriter {
public:
    DatasetWriter(std::filesystem::path root, DatasetManifest manifest);

    void write_max_activations(std::string_view model, int epoch, std::string_view layer,
                               const MaxActivationMatrix& matrix) const;
    void write_layer_tensor(TensorKind kind, std::string_view model, int epoch, std::string_view layer, ClassId cls,
                            const LayerTensor& tensor) const;

    const DatasetManifest& manifest() const noexcept { return manifest_; }

private:
    std::filesystem::path root_;
    DatasetManifest manifest_;
};

/// Read-only view of a dataset root. Safe to share between threads; every
/// read touches only the single file requested.
class DatasetReader {
public:
    explicit DatasetReader(std::filesystem::path root);

    const DatasetManifest& manifest() const noexcept { return manifest_; }
    const std::filesystem::path& root() const noexcept { return root_; }

    MaxActivationMatrix read_max_activations(std::string_view model, int epoch, std::string_view layer) const;
    LayerTensor read_activation_maps(std::string_view model, int epoch, std::string_view layer, ClassId cls) const;
    LayerTensor read_logit_gradients(std::string_view model, int epoch, std::string_view layer, ClassId cls) const;

private:
    LayerTensor read_layer_tensor(TensorKind kind, std::string_view model, int epoch, std::string_view layer,
                                  ClassId cls) const;

    std::filesystem::path root_;
    DatasetManifest manifest_;
};

/// Free-function form of DatasetReader::read_max_activations.
MaxActivationMatrix read_max_activations(const std::filesystem::path& root, std::string_view model, int epoch,
                                         std::string_view layer);

/// Writes `bytes` to `path` via `<path>.tmp` + rename.
void write_file_atomically(const std::filesystem::path& path, std::span<const char> bytes);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace conceptevo
