#pragma once

#include "conceptevo/dataset.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace conceptevo {

inline constexpr std::size_t kDefaultClassSample = 128;

/// Activation change of one neuron between two epochs, for one image:
/// Z_n(x) at t' minus Z_n(x) at t. The full-layer change is zero outside
/// this plane, so only the plane is stored.
struct EvolutionDelta {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> plane;

    static EvolutionDelta between(const PlaneView& from, const PlaneView& to);
};

/// Directional derivative of the class logit along one neuron's evolution:
/// the gradient plane of that neuron dotted with the delta plane. Equal to
/// the dot product over the full zero-padded layer tensor.
/// Throws ConfigError on shape mismatch.
double sensitivity(const PlaneView& gradient, const EvolutionDelta& delta);

/// Fraction of sensitivities that are strictly positive. Throws ConfigError
/// on an empty list.
double importance_score(std::span<const double> sensitivities);

struct EvolutionImportance {
    std::string model_id;
    std::string layer_id;
    NeuronId neuron = 0;
    ClassId class_id = 0;
    int from_epoch = 0;
    int to_epoch = 0;
    double score = 0.0;

    bool operator==(const EvolutionImportance&) const = default;
};

/// Neurons of one layer grouped by importance rank.
struct LayerBins {
    /// [0-25), [25-50), [50-75), [75-100] percentile, most important first.
    std::array<std::vector<NeuronId>, 4> bins;
    /// Seeded uniform 25% of the layer.
    std::vector<NeuronId> random;
};

struct RevertPlan {
    std::uint64_t seed = 0;
    std::map<std::string, LayerBins> layers;
};

/// Sizes of the four bins for n neurons: floor(n/4), with the n mod 4
/// leftovers going to the leading bins.
std::array<std::size_t, 4> quartile_sizes(std::size_t n);

/// Ranks by descending score (ties: ascending neuron id), splits into
/// quartiles, and draws the random baseline (ceil(n/4) neurons, sorted).
LayerBins rank_and_bin(std::span<const EvolutionImportance> layer_scores, std::uint64_t seed);

/// Groups scores by layer and bins each one.
RevertPlan make_revert_plan(std::span<const EvolutionImportance> scores, std::uint64_t seed);

/// Scores every neuron of `layer` for `class_id` between epochs `from` and `to`:
/// samples up to `sample_size` class images (seeded), forms deltas from the
/// exported maps, takes sensitivities with the exported gradient at `from`,
/// and aggregates. Missing files raise DependencyError naming the path.
std::vector<EvolutionImportance> class_importance_pipeline(const DatasetReader& dataset, std::string_view model,
                                                           int from, int to, std::string_view layer, ClassId class_id,
                                                           std::size_t sample_size, std::uint64_t seed);

/// The seeded sample of class images used by class_importance_pipeline.
std::vector<ImageId> sample_class_images(std::span<const ImageId> available, std::size_t sample_size,
                                         std::uint64_t seed);

void write_importance_jsonl(std::ostream& out, std::span<const EvolutionImportance> scores);
std::vector<EvolutionImportance> read_importance_jsonl(std::istream& in);

std::string revert_plan_to_json(const RevertPlan& plan);
RevertPlan revert_plan_from_json(const std::string& text);

}  // namespace conceptevo
