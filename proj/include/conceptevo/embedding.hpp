#pragma once

#include "conceptevo/dataset.hpp"
#include "conceptevo/pair_sampler.hpp"
#include "conceptevo/rng.hpp"
#include "conceptevo/stimuli.hpp"

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace conceptevo {

/// Hyperparameters for neuron and image embedding.
struct TrainingConfig {
    std::size_t dim = 30;
    double lr_neuron = 0.05;
    double lr_image = 0.1;
    std::size_t negatives = 3;     // R, random negatives per pair
    std::size_t max_epochs = 20;   // SGD passes over a pair multiset
    std::size_t image_steps = 2000;  // full-batch descent steps on the image objective
    double convergence_tol = 1e-4;
    std::uint64_t seed = 1;

    /// Throws ConfigError on dim == 0 or non-positive learning rates.
    void validate() const;
};

enum class Provenance : std::uint8_t { base_trained, image_derived, indirect };

const char* to_string(Provenance p) noexcept;
Provenance provenance_from_string(std::string_view s);

struct NeuronKey {
    std::string model_id;
    int epoch = 0;
    std::string layer_id;
    NeuronId neuron = 0;

    auto operator<=>(const NeuronKey&) const = default;
};

/// Dense row-major table of `rows` vectors of length `dim`.
class VectorTable {
public:
    VectorTable() = default;
    VectorTable(std::size_t rows, std::size_t dim) : rows_(rows), dim_(dim), data_(rows * dim, 0.0) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t dim() const noexcept { return dim_; }
    std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * dim_, dim_}; }
    std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * dim_, dim_}; }
    std::span<const double> data() const noexcept { return data_; }

    /// Fills every entry from uniform(-0.5/dim, 0.5/dim).
    void init_uniform(std::uint64_t seed);

    bool operator==(const VectorTable&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

/// Image vectors indexed by image id. An image either has no vector yet, a
/// direct one (fitted to the base neurons) or an indirect one (learned from
/// co-stimulating image pairs).
struct ImageVectors {
    VectorTable table;
    std::vector<std::optional<Provenance>> source;

    ImageVectors() = default;
    ImageVectors(std::size_t image_count, std::size_t dim) : table(image_count, dim), source(image_count) {}

    std::size_t image_count() const noexcept { return source.size(); }
    bool has(ImageId x) const noexcept { return x < source.size() && source[x].has_value(); }
    bool has(ImageId x, Provenance p) const noexcept { return has(x) && *source[x] == p; }
};

struct EmbeddedVector {
    std::vector<double> values;
    Provenance provenance = Provenance::base_trained;
    bool operator==(const EmbeddedVector&) const = default;
};

/// The unified space: every stored vector has length `dim`.
struct EmbeddingSpace {
    std::size_t dim = 0;
    std::map<NeuronKey, EmbeddedVector> neurons;
    std::map<ImageId, EmbeddedVector> images;

    void add_neuron(NeuronKey key, std::vector<double> values, Provenance p);
    void add_image(ImageId id, std::vector<double> values, Provenance p);
    /// Adds every image in `vectors` that has a vector.
    void add_images(const ImageVectors& vectors);
    /// Neurons of one (model, epoch), optionally restricted to a layer.
    std::vector<const std::pair<const NeuronKey, EmbeddedVector>*> select(std::string_view model, int epoch,
                                                                           std::string_view layer = {}) const;

    bool operator==(const EmbeddingSpace&) const = default;
};

// ---------------------------------------------------------------------------
// Neuron embedding (negative-sampling objective over co-activated pairs)

double sigmoid(double x) noexcept;

/// Loss of one pair (n, m) with fixed negatives:
///   -( log s(n.m) + sum_r log(1 - s(n.r)) + sum_r log(1 - s(m.r)) )
double pair_objective(std::span<const double> vn, std::span<const double> vm, const VectorTable& table,
                      std::span<const std::uint32_t> negatives);

/// Ascent directions for v_n and v_m (the negated gradient of pair_objective):
///   g_n = (1 - s(n.m)) v_m - sum_r s(n.r) v_r
///   g_m = (1 - s(n.m)) v_n - sum_r s(m.r) v_r
void pair_ascent_directions(std::span<const double> vn, std::span<const double> vm, const VectorTable& table,
                            std::span<const std::uint32_t> negatives, std::span<double> grad_n,
                            std::span<double> grad_m);

/// One SGD update for pair (n, m): both directions are evaluated at the
/// current vectors, then v += lr * g. Negatives are not updated.
/// `update_n` / `update_m` freeze either side (used for frozen covered images).
void sgd_pair_step(VectorTable& table, std::uint32_t n, std::uint32_t m, std::span<const std::uint32_t> negatives,
                   double lr, bool update_n = true, bool update_m = true);

/// Draws `count` negatives uniformly from [0, universe) minus {a, b}.
void draw_negatives(Rng& rng, std::size_t universe, std::uint32_t a, std::uint32_t b,
                    std::span<std::uint32_t> out);

struct NeuronTraining {
    VectorTable vectors;
    std::vector<double> objective_history;  // sampled objective, one entry per completed epoch (index 0 = init)
    std::size_t epochs_run = 0;
    bool converged = false;
};

/// Trains vectors for neuron indices [0, universe_size). Pairs must reference
/// indices inside the universe; an empty multiset is refused.
NeuronTraining train_neuron_vectors(const PairMultiset& pairs, const TrainingConfig& config,
                                    std::size_t universe_size);

/// Keyed form: `universe[i]` names the neuron at pair index i.
EmbeddingSpace train_neuron_embeddings(const PairMultiset& pairs, const TrainingConfig& config,
                                       std::span<const NeuronKey> universe);

// ---------------------------------------------------------------------------
// Image embedding

/// Mean of the stimulus images that carry a vector of provenance `which`.
/// Returns nullopt when none of them does.
std::optional<std::vector<double>> approximate_neuron_vector(std::span<const ImageId> stimuli,
                                                             const ImageVectors& images, Provenance which);

/// Direct vectors first; falls back to indirect ones. Throws
/// UnrepresentableNeuronError when neither exists.
EmbeddedVector approximate_with_fallback(std::span<const ImageId> stimuli, const ImageVectors& images);

/// J2 = 1/2 sum_n || mean(stimuli(n)) - v_n ||^2 over base neurons.
double image_objective(const VectorTable& neuron_vectors, const StimuliTable& stimuli, const ImageVectors& images);

/// dJ2/dv_x for every image, accumulated as sum over neurons n whose stimuli
/// contain x of (v'_n - v_n) / |X_n|. Rows of images without a vector stay 0.
VectorTable image_objective_gradient(const VectorTable& neuron_vectors, const StimuliTable& stimuli,
                                     const ImageVectors& images);

struct ImageTraining {
    ImageVectors images;
    std::vector<double> objective_history;  // J2 before each step, plus the final value
    std::size_t steps_run = 0;
};

/// Fits direct vectors for every image that occurs in the base stimuli by full
/// batch gradient descent on J2. The base neuron vectors are read only.
ImageTraining train_image_embeddings(const VectorTable& neuron_vectors, const StimuliTable& stimuli,
                                     const TrainingConfig& config);

/// Keyed form over a space holding the base neurons. `base_universe[i]` is
/// the key of stimuli neuron i. Returns a copy of `base_space` plus images.
EmbeddingSpace train_image_embeddings(const EmbeddingSpace& base_space, std::span<const NeuronKey> base_universe,
                                      const StimuliTable& stimuli, const TrainingConfig& config,
                                      std::vector<double>* objective_history = nullptr);

struct UncoveredReport {
    std::vector<ImageId> embedded;
    std::vector<ImageId> unrepresentable;
    std::vector<double> objective_history;
};

/// Learns indirect vectors for images without a direct vector, using the pair
/// objective over co-stimulating image pairs. Direct vectors are never
/// written. Negatives are drawn from all images that end up with a vector.
UncoveredReport embed_uncovered_images(const PairMultiset& image_pairs, ImageVectors& images,
                                       const TrainingConfig& config);

// ---------------------------------------------------------------------------
// Projection of arbitrary (model, epoch) into the space

struct LayerProjection {
    std::vector<std::optional<EmbeddedVector>> neurons;  // nullopt = unrepresentable
    std::vector<NeuronId> unrepresentable;
};

/// Stimuli of each neuron in `acts`, then the mean of their image vectors.
LayerProjection project_layer(const MaxActivationMatrix& acts, const ImageVectors& images, std::size_t k);

struct ModelProjection {
    std::map<NeuronKey, EmbeddedVector> neurons;
    std::vector<NeuronKey> warnings;  // neurons that could not be represented
};

/// Projects every layer (or the listed ones) of (model, epoch).
ModelProjection project_model(const DatasetReader& dataset, std::string_view model_id, int epoch,
                              const ImageVectors& images, std::size_t k, std::span<const std::string> layers = {});

// ---------------------------------------------------------------------------
// Persistence: JSONL, one vector per line.

void write_embeddings_jsonl(std::ostream& out, const EmbeddingSpace& space);
EmbeddingSpace read_embeddings_jsonl(std::istream& in);
/// Image vectors of a space as a dense table over `image_count` ids.
ImageVectors image_vectors_of(const EmbeddingSpace& space, std::size_t image_count);

}  // namespace conceptevo
