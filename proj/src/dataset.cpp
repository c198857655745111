#include "conceptevo/dataset.hpp"

#include "conceptevo/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

namespace conceptevo {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Errors

CorruptFileError::CorruptFileError(std::string path, std::size_t expected, std::size_t actual)
    : DataError(fmt::format("corrupt file {}: expected {} bytes, found {}{}", path, expected, actual,
                            actual == 2 * expected ? " (float64 data is not accepted; export binary32)" : "")),
      path_(std::move(path)),
      expected_(expected),
      actual_(actual) {}

DataQualityError::DataQualityError(std::string path, std::size_t image, std::size_t neuron)
    : DataError(fmt::format("non-finite value in {} at image {}, neuron {}", path, image, neuron)),
      image_(image),
      neuron_(neuron) {}

DependencyError::DependencyError(std::string path)
    : Error(fmt::format("missing dependency: {}", path)), path_(std::move(path)) {}

DependencyError::DependencyError(std::string path, const std::string& what)
    : Error(fmt::format("missing dependency: {} ({})", path, what)), path_(std::move(path)) {}

// ---------------------------------------------------------------------------
// Manifest

const LayerMeta* ModelEntry::find_layer(std::string_view layer_id) const noexcept {
    auto it = std::find_if(layers.begin(), layers.end(), [&](const LayerMeta& l) { return l.layer_id == layer_id; });
    return it == layers.end() ? nullptr : &*it;
}

bool ModelEntry::has_epoch(int epoch) const noexcept {
    return std::binary_search(epochs.begin(), epochs.end(), epoch);
}

const ModelEntry* DatasetManifest::find_model(std::string_view model_id) const noexcept {
    auto it = std::find_if(models.begin(), models.end(), [&](const ModelEntry& m) { return m.model_id == model_id; });
    return it == models.end() ? nullptr : &*it;
}

const LayerMeta& DatasetManifest::layer(std::string_view model_id, int epoch, std::string_view layer_id) const {
    const ModelEntry* model = find_model(model_id);
    if (model == nullptr) throw ConfigError(fmt::format("unknown model '{}'", model_id));
    if (!model->has_epoch(epoch)) throw ConfigError(fmt::format("model '{}' has no epoch {}", model_id, epoch));
    const LayerMeta* meta = model->find_layer(layer_id);
    if (meta == nullptr) throw ConfigError(fmt::format("model '{}' has no layer '{}'", model_id, layer_id));
    return *meta;
}

std::vector<ImageId> DatasetManifest::images_of_class(ClassId cls) const {
    std::vector<ImageId> out;
    for (const auto& [image, label] : image_labels) {
        if (label == cls) out.push_back(image);
    }
    return out;
}

namespace {

bool is_safe_component(std::string_view s) {
    if (s.empty() || s == "." || s == "..") return false;
    return std::none_of(s.begin(), s.end(), [](char c) { return c == '/' || c == '\\' || c == '\0'; });
}

}  // namespace

void DatasetManifest::validate() const {
    if (schema_version != kSchemaVersion) {
        throw DataError(fmt::format("unsupported schema_version {} (expected {})", schema_version, kSchemaVersion));
    }
    if (image_labels.size() != image_count) {
        throw DataError(fmt::format("image_labels has {} entries for image_count {}", image_labels.size(), image_count));
    }
    // std::map is ordered, so dense ids means the last key is image_count - 1.
    if (!image_labels.empty() && image_labels.rbegin()->first != image_count - 1) {
        throw DataError("image ids must be dense integers 0..image_count-1");
    }
    std::set<std::string> model_ids;
    for (const auto& model : models) {
        if (!is_safe_component(model.model_id)) throw DataError(fmt::format("invalid model id '{}'", model.model_id));
        if (!model_ids.insert(model.model_id).second) {
            throw DataError(fmt::format("model '{}' declared twice", model.model_id));
        }
        if (!std::is_sorted(model.epochs.begin(), model.epochs.end()) ||
            std::adjacent_find(model.epochs.begin(), model.epochs.end()) != model.epochs.end()) {
            throw DataError(fmt::format("epochs of model '{}' must be strictly ascending", model.model_id));
        }
        std::set<std::string> layer_ids;
        for (const auto& layer : model.layers) {
            if (!is_safe_component(layer.layer_id)) {
                throw DataError(fmt::format("invalid layer id '{}' in model '{}'", layer.layer_id, model.model_id));
            }
            if (!layer_ids.insert(layer.layer_id).second) {
                throw DataError(fmt::format("layer '{}' repeated in model '{}'", layer.layer_id, model.model_id));
            }
            if (layer.neuron_count < 1 || layer.map_height < 1 || layer.map_width < 1) {
                throw DataError(fmt::format("layer '{}' of model '{}' has a zero dimension", layer.layer_id,
                                            model.model_id));
            }
        }
    }
}

DatasetManifest manifest_from_json(const std::string& text) {
    DatasetManifest m;
    try {
        const json j = json::parse(text);
        m.schema_version = j.at("schema_version").get<int>();
        m.image_count = j.at("image_count").get<std::size_t>();
        for (const auto& jm : j.at("models")) {
            ModelEntry entry;
            entry.model_id = jm.at("model_id").get<std::string>();
            entry.epochs = jm.at("epochs").get<std::vector<int>>();
            for (const auto& jl : jm.at("layers")) {
                entry.layers.push_back(LayerMeta{jl.at("layer_id").get<std::string>(),
                                                 jl.at("neuron_count").get<std::size_t>(),
                                                 jl.at("map_height").get<std::size_t>(),
                                                 jl.at("map_width").get<std::size_t>()});
            }
            m.models.push_back(std::move(entry));
        }
        for (const auto& [key, value] : j.at("image_labels").items()) {
            m.image_labels[static_cast<ImageId>(std::stoul(key))] = value.get<ClassId>();
        }
        if (j.contains("class_names")) {
            for (const auto& [key, value] : j.at("class_names").items()) {
                m.class_names[static_cast<ClassId>(std::stol(key))] = value.get<std::string>();
            }
        }
    } catch (const json::exception& e) {
        throw DataError(fmt::format("malformed manifest: {}", e.what()));
    } catch (const std::logic_error& e) {
        throw DataError(fmt::format("malformed manifest key: {}", e.what()));
    }
    return m;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
    json j;
    j["schema_version"] = manifest.schema_version;
    j["image_count"] = manifest.image_count;
    j["models"] = json::array();
    for (const auto& model : manifest.models) {
        json jm;
        jm["model_id"] = model.model_id;
        jm["epochs"] = model.epochs;
        jm["layers"] = json::array();
        for (const auto& layer : model.layers) {
            jm["layers"].push_back({{"layer_id", layer.layer_id},
                                    {"neuron_count", layer.neuron_count},
                                    {"map_height", layer.map_height},
                                    {"map_width", layer.map_width}});
        }
        j["models"].push_back(std::move(jm));
    }
    j["image_labels"] = json::object();
    for (const auto& [image, label] : manifest.image_labels) j["image_labels"][std::to_string(image)] = label;
    j["class_names"] = json::object();
    for (const auto& [cls, name] : manifest.class_names) j["class_names"][std::to_string(cls)] = name;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Tensors

MaxActivationMatrix::MaxActivationMatrix(std::size_t images, std::size_t neurons)
    : images_(images), neurons_(neurons), values_(images * neurons, 0.0F) {}

MaxActivationMatrix::MaxActivationMatrix(std::size_t images, std::size_t neurons, std::vector<float> values)
    : images_(images), neurons_(neurons), values_(std::move(values)) {
    if (values_.size() != images_ * neurons_) {
        throw ConfigError(fmt::format("matrix of {}x{} given {} values", images_, neurons_, values_.size()));
    }
}

LayerTensor::LayerTensor(std::vector<ImageId> image_ids, std::size_t height, std::size_t width, std::size_t neurons)
    : image_ids_(std::move(image_ids)),
      height_(height),
      width_(width),
      neurons_(neurons),
      values_(image_ids_.size() * height * width * neurons, 0.0F) {}

LayerTensor::LayerTensor(std::vector<ImageId> image_ids, std::size_t height, std::size_t width, std::size_t neurons,
                         std::vector<float> values)
    : image_ids_(std::move(image_ids)), height_(height), width_(width), neurons_(neurons), values_(std::move(values)) {
    if (values_.size() != image_ids_.size() * height_ * width_ * neurons_) {
        throw ConfigError(fmt::format("layer tensor of {}x{}x{}x{} given {} values", image_ids_.size(), height_,
                                      width_, neurons_, values_.size()));
    }
}

std::optional<std::size_t> LayerTensor::index_of(ImageId image) const noexcept {
    auto it = std::find(image_ids_.begin(), image_ids_.end(), image);
    if (it == image_ids_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - image_ids_.begin());
}

// ---------------------------------------------------------------------------
// Layout

namespace layout {

fs::path manifest(const fs::path& root) { return root / "manifest.json"; }

fs::path max_activations(const fs::path& root, std::string_view model, int epoch, std::string_view layer) {
    return root / "activations" / std::string(model) / std::to_string(epoch) / (std::string(layer) + ".f32");
}

fs::path tensor(const fs::path& root, TensorKind kind, std::string_view model, int epoch, std::string_view layer,
                ClassId cls) {
    switch (kind) {
        case TensorKind::max_activations:
            return max_activations(root, model, epoch, layer);
        case TensorKind::activation_maps:
            return root / "maps" / std::string(model) / std::to_string(epoch) / std::string(layer) /
                   (std::to_string(cls) + ".f32");
        case TensorKind::logit_gradients:
            return root / "grads" / std::string(model) / std::to_string(epoch) / std::string(layer) /
                   (std::to_string(cls) + ".f32");
    }
    return {};
}

fs::path sidecar(const fs::path& tensor_path) {
    fs::path p = tensor_path;
    p.replace_extension(".index.json");
    return p;
}

}  // namespace layout

// ---------------------------------------------------------------------------
// Raw I/O

namespace {

std::vector<char> encode_f32(std::span<const float> values) {
    std::vector<char> bytes(values.size() * sizeof(float));
    std::memcpy(bytes.data(), values.data(), bytes.size());
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < bytes.size(); i += 4) {
            std::reverse(bytes.begin() + static_cast<std::ptrdiff_t>(i),
                         bytes.begin() + static_cast<std::ptrdiff_t>(i + 4));
        }
    }
    return bytes;
}

std::vector<float> read_f32_file(const fs::path& path, std::size_t expected_count) {
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec) throw DependencyError(path.string());
    const std::size_t expected_bytes = expected_count * sizeof(float);
    if (size != expected_bytes) throw CorruptFileError(path.string(), expected_bytes, size);

    std::vector<float> values(expected_count);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError(path.string());
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(expected_bytes));
    if (in.gcount() != static_cast<std::streamsize>(expected_bytes)) {
        throw CorruptFileError(path.string(), expected_bytes, static_cast<std::size_t>(in.gcount()));
    }
    if constexpr (std::endian::native == std::endian::big) {
        auto* bytes = reinterpret_cast<char*>(values.data());
        for (std::size_t i = 0; i < expected_bytes; i += 4) std::reverse(bytes + i, bytes + i + 4);
    }
    return values;
}

void check_layer_shape(const LayerMeta& meta, const LayerTensor& tensor, const DatasetManifest& manifest,
                       std::string_view what) {
    if (tensor.height() != meta.map_height || tensor.width() != meta.map_width ||
        tensor.neuron_count() != meta.neuron_count) {
        throw ConfigError(fmt::format("{}: tensor shape [{}x{}x{}] does not match layer '{}' [{}x{}x{}]", what,
                                      tensor.height(), tensor.width(), tensor.neuron_count(), meta.layer_id,
                                      meta.map_height, meta.map_width, meta.neuron_count));
    }
    for (ImageId id : tensor.image_ids()) {
        if (id >= manifest.image_count) throw ConfigError(fmt::format("{}: image id {} out of range", what, id));
    }
}

void write_layer_files(const fs::path& path, const LayerTensor& tensor) {
    const json index = {{"image_ids", tensor.image_ids()},
                        {"shape", {tensor.image_count(), tensor.height(), tensor.width(), tensor.neuron_count()}}};
    const std::string text = index.dump() + "\n";
    write_file_atomically(layout::sidecar(path), std::span<const char>(text.data(), text.size()));
    write_file_atomically(path, encode_f32(tensor.values()));
}

}  // namespace

void write_file_atomically(const fs::path& path, std::span<const char> bytes) {
    fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError(fmt::format("cannot open {} for writing", tmp.string()));
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw DataError(fmt::format("write to {} failed; partial data left in place", tmp.string()));
    }
    fs::rename(tmp, path);
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError(path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Writers

DatasetWriter::DatasetWriter(fs::path root, DatasetManifest manifest)
    : root_(std::move(root)), manifest_(std::move(manifest)) {
    manifest_.validate();
    const std::string text = manifest_to_json(manifest_);
    write_file_atomically(layout::manifest(root_), std::span<const char>(text.data(), text.size()));
}

void DatasetWriter::write_max_activations(std::string_view model, int epoch, std::string_view layer,
                                          const MaxActivationMatrix& matrix) const {
    const LayerMeta& meta = manifest_.layer(model, epoch, layer);
    if (matrix.image_count() != manifest_.image_count || matrix.neuron_count() != meta.neuron_count) {
        throw ConfigError(fmt::format("max activations for {}/{}/{}: shape [{}x{}], expected [{}x{}]", model, epoch,
                                      layer, matrix.image_count(), matrix.neuron_count(), manifest_.image_count,
                                      meta.neuron_count));
    }
    write_file_atomically(layout::max_activations(root_, model, epoch, layer), encode_f32(matrix.values()));
}

void DatasetWriter::write_layer_tensor(TensorKind kind, std::string_view model, int epoch, std::string_view layer,
                                       ClassId cls, const LayerTensor& tensor) const {
    if (kind == TensorKind::max_activations) throw ConfigError("use write_max_activations for max activations");
    const LayerMeta& meta = manifest_.layer(model, epoch, layer);
    check_layer_shape(meta, tensor, manifest_, fmt::format("{}/{}/{}/{}", model, epoch, layer, cls));
    write_layer_files(layout::tensor(root_, kind, model, epoch, layer, cls), tensor);
}

void write_dataset(const fs::path& root, const DatasetManifest& manifest, std::span<const NamedTensor> tensors) {
    manifest.validate();
    // Validate every shape before touching the filesystem.
    for (const auto& t : tensors) {
        const LayerMeta& meta = manifest.layer(t.model_id, t.epoch, t.layer_id);
        const auto where = fmt::format("{}/{}/{}", t.model_id, t.epoch, t.layer_id);
        if (t.kind == TensorKind::max_activations) {
            if (t.max_activations.image_count() != manifest.image_count ||
                t.max_activations.neuron_count() != meta.neuron_count) {
                throw ConfigError(fmt::format("{}: max activation shape [{}x{}], expected [{}x{}]", where,
                                              t.max_activations.image_count(), t.max_activations.neuron_count(),
                                              manifest.image_count, meta.neuron_count));
            }
        } else {
            check_layer_shape(meta, t.layer_tensor, manifest, where);
        }
    }
    DatasetWriter writer(root, manifest);
    for (const auto& t : tensors) {
        if (t.kind == TensorKind::max_activations) {
            writer.write_max_activations(t.model_id, t.epoch, t.layer_id, t.max_activations);
        } else {
            writer.write_layer_tensor(t.kind, t.model_id, t.epoch, t.layer_id, t.class_id, t.layer_tensor);
        }
    }
}

// ---------------------------------------------------------------------------
// Readers

DatasetReader::DatasetReader(fs::path root) : root_(std::move(root)) {
    const auto path = layout::manifest(root_);
    if (!fs::exists(path)) throw DependencyError(path.string(), "dataset manifest not found");
    manifest_ = manifest_from_json(read_text_file(path));
    manifest_.validate();
}

MaxActivationMatrix DatasetReader::read_max_activations(std::string_view model, int epoch,
                                                        std::string_view layer) const {
    const LayerMeta& meta = manifest_.layer(model, epoch, layer);
    const auto path = layout::max_activations(root_, model, epoch, layer);
    auto values = read_f32_file(path, manifest_.image_count * meta.neuron_count);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) throw DataQualityError(path.string(), i / meta.neuron_count, i % meta.neuron_count);
    }
    return MaxActivationMatrix(manifest_.image_count, meta.neuron_count, std::move(values));
}

LayerTensor DatasetReader::read_activation_maps(std::string_view model, int epoch, std::string_view layer,
                                                ClassId cls) const {
    return read_layer_tensor(TensorKind::activation_maps, model, epoch, layer, cls);
}

LayerTensor DatasetReader::read_logit_gradients(std::string_view model, int epoch, std::string_view layer,
                                                ClassId cls) const {
    return read_layer_tensor(TensorKind::logit_gradients, model, epoch, layer, cls);
}

LayerTensor DatasetReader::read_layer_tensor(TensorKind kind, std::string_view model, int epoch,
                                             std::string_view layer, ClassId cls) const {
    const LayerMeta& meta = manifest_.layer(model, epoch, layer);
    const auto path = layout::tensor(root_, kind, model, epoch, layer, cls);
    const auto index_path = layout::sidecar(path);
    if (!fs::exists(path)) throw DependencyError(path.string());
    if (!fs::exists(index_path)) throw DependencyError(index_path.string());

    std::vector<ImageId> ids;
    try {
        ids = json::parse(read_text_file(index_path)).at("image_ids").get<std::vector<ImageId>>();
    } catch (const json::exception& e) {
        throw DataError(fmt::format("malformed index {}: {}", index_path.string(), e.what()));
    }
    for (ImageId id : ids) {
        if (id >= manifest_.image_count) throw DataError(fmt::format("{}: image id {} out of range", index_path.string(), id));
    }
    const std::size_t per_image = meta.plane_size() * meta.neuron_count;
    auto values = read_f32_file(path, ids.size() * per_image);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) throw DataQualityError(path.string(), ids[i / per_image], i % meta.neuron_count);
    }
    return LayerTensor(std::move(ids), meta.map_height, meta.map_width, meta.neuron_count, std::move(values));
}

MaxActivationMatrix read_max_activations(const fs::path& root, std::string_view model, int epoch,
                                         std::string_view layer) {
    return DatasetReader(root).read_max_activations(model, epoch, layer);
}

}  // namespace conceptevo
