#pragma once

#include "conceptevo/dataset.hpp"
#include "conceptevo/embedding.hpp"
#include "conceptevo/projection2d.hpp"
#include "conceptevo/stimuli.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace conceptevo {

/// Which neurons of which (model, epoch) form one id range. Neuron j of
/// layers[i] gets global index offset(i) + j.
struct Universe {
    std::string model_id;
    int epoch = 0;
    std::vector<std::pair<std::string, std::size_t>> layers;  // (layer id, neuron count)
    std::size_t image_count = 0;

    std::size_t size() const noexcept;
    std::vector<NeuronKey> keys() const;

    bool operator==(const Universe&) const = default;
};

std::string universe_to_json(const Universe& universe);
Universe universe_from_json(const std::string& text);

struct BaseStimuli {
    Universe universe;
    MaxActivationMatrix activations;  // concatenated over the universe layers
    StimuliTable stimuli;
};

/// Reads the listed layers (all layers when empty) of (model, epoch) and
/// computes their joint stimuli.
BaseStimuli compute_base_stimuli(const DatasetReader& dataset, std::string_view model, int epoch,
                                 std::span<const std::string> layers, std::size_t k, std::size_t workers = 1);

/// Concatenated activations for a universe.
MaxActivationMatrix read_universe_activations(const DatasetReader& dataset, const Universe& universe);

inline const std::vector<std::string> kStageOrder = {"validate", "stimuli",    "pairs",     "neuron-emb",
                                                     "image-emb", "project",    "reduce-2d", "importance",
                                                     "revert-plan", "diagnostics"};

struct PipelineConfig {
    std::filesystem::path dataset;
    std::filesystem::path out;
    std::string base_model;  // empty = the first model
    std::optional<int> base_epoch;  // empty = its last epoch
    std::vector<std::string> layers;  // base layers; empty = all
    std::vector<std::string> stages;  // empty = all, in pipeline order

    std::size_t k = kDefaultTopK;
    std::size_t rounds = 100;
    TrainingConfig training;

    std::vector<std::string> targets;  // "model:epoch"; empty = every non-base (model, epoch)

    std::string reducer = "umap";
    ReducerParams reducer_params;

    std::string importance_model;  // empty = base model
    std::optional<int> from_epoch;  // empty = first epoch
    std::optional<int> to_epoch;    // empty = last epoch
    std::vector<std::string> importance_layers;  // empty = all
    std::vector<ClassId> classes;                // empty = all
    std::size_t class_sample = 128;

    std::uint64_t seed = 1;
    std::size_t workers = 1;
};

struct StageOutcome {
    std::string stage;
    bool skipped = false;
    double seconds = 0.0;
};

/// Runs the requested stages in pipeline order. Each stage's key hashes its
/// parameters and the contents of its inputs; a stage whose key and outputs
/// are unchanged since its last run is skipped. Holds `<dataset>/.conceptevo.lock`
/// for the duration. Warnings go to `warn` as one JSON object per line.
std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, std::ostream& warn);

/// Exclusive lock on a dataset root, released on destruction. A lock left by
/// a process that no longer exists is taken over.
class PipelineLock {
public:
    explicit PipelineLock(const std::filesystem::path& dataset_root);
    ~PipelineLock();
    PipelineLock(const PipelineLock&) = delete;
    PipelineLock& operator=(const PipelineLock&) = delete;

    static std::filesystem::path path_for(const std::filesystem::path& dataset_root);

private:
    std::filesystem::path path_;
};

/// Text files written via `<path>.tmp` + rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Diagnostics over a projection and the space it came from: entropy per
/// (model, epoch) with enough points, drift between consecutive epochs.
std::string diagnostics_report_json(const Projection2D& projection, const EmbeddingSpace& space);

}  // namespace conceptevo
