#include "conceptevo/embedding.hpp"

#include "conceptevo/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace conceptevo {

namespace {

// Substream tags. Fixed so that runs are reproducible across builds.
constexpr std::uint64_t kTagInit = 0x696e6974;      // "init"
constexpr std::uint64_t kTagShuffle = 0x73687566;   // "shuf"
constexpr std::uint64_t kTagNegatives = 0x6e656773; // "negs"
constexpr std::uint64_t kTagEval = 0x6576616c;      // "eval"
constexpr std::uint64_t kTagImages = 0x696d6773;    // "imgs"
constexpr std::uint64_t kTagIndirect = 0x696e6469;  // "indi"

constexpr std::size_t kEvalSampleSize = 4096;

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// log(sigmoid(x)) without overflow.
double log_sigmoid(double x) noexcept { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

bool relative_change_below(double previous, double current, double tol) noexcept {
    const double scale = std::max(std::abs(previous), 1e-300);
    return std::abs(previous - current) / scale < tol;
}

/// Frozen pairs + negatives used to track the sampled objective across epochs.
struct EvalSample {
    std::vector<std::size_t> pair_index;
    std::vector<std::uint32_t> negatives;  // pair_index.size() * R
};

template <class DrawFn>
EvalSample make_eval_sample(std::size_t pair_count, std::size_t negatives, std::uint64_t seed, DrawFn&& draw) {
    EvalSample sample;
    Rng rng = Rng::substream(seed, kTagEval);
    if (pair_count <= kEvalSampleSize) {
        sample.pair_index.resize(pair_count);
        std::iota(sample.pair_index.begin(), sample.pair_index.end(), std::size_t{0});
    } else {
        for (std::size_t i = 0; i < kEvalSampleSize; ++i) sample.pair_index.push_back(rng.uniform_index(pair_count));
    }
    sample.negatives.resize(sample.pair_index.size() * negatives);
    for (std::size_t i = 0; i < sample.pair_index.size(); ++i) {
        draw(rng, sample.pair_index[i], std::span(sample.negatives).subspan(i * negatives, negatives));
    }
    return sample;
}

double evaluate(const EvalSample& sample, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs,
                const VectorTable& table, std::size_t negatives) {
    if (sample.pair_index.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < sample.pair_index.size(); ++i) {
        const auto [n, m] = pairs[sample.pair_index[i]];
        total += pair_objective(table.row(n), table.row(m), table,
                                std::span(sample.negatives).subspan(i * negatives, negatives));
    }
    return total / static_cast<double>(sample.pair_index.size());
}

/// Shared SGD driver for neuron pairs and indirect image pairs.
/// `draw(rng, pair_idx, out)` fills negatives; `trainable(id)` gates updates.
template <class DrawFn, class TrainableFn>
std::vector<double> run_pair_sgd(VectorTable& table, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs,
                                 const TrainingConfig& config, double lr, DrawFn&& draw, TrainableFn&& trainable,
                                 std::size_t& epochs_run, bool& converged) {
    const std::size_t R = config.negatives;
    const EvalSample sample = make_eval_sample(pairs.size(), R, config.seed, draw);
    std::vector<double> history{evaluate(sample, pairs, table, R)};

    std::vector<std::size_t> order(pairs.size());
    std::vector<std::uint32_t> negs(R);
    epochs_run = 0;
    converged = false;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng = Rng::substream(config.seed, kTagShuffle, epoch);
        shuffle_rng.shuffle(std::span{order});
        Rng neg_rng = Rng::substream(config.seed, kTagNegatives, epoch);
        for (std::size_t idx : order) {
            const auto [n, m] = pairs[idx];
            draw(neg_rng, idx, std::span{negs});
            sgd_pair_step(table, n, m, negs, lr, trainable(n), trainable(m));
        }
        ++epochs_run;
        history.push_back(evaluate(sample, pairs, table, R));
        if (relative_change_below(history[history.size() - 2], history.back(), config.convergence_tol)) {
            converged = true;
            break;
        }
    }
    return history;
}

}  // namespace

void TrainingConfig::validate() const {
    if (dim < 1) throw ConfigError("embedding dim must be at least 1");
    if (!(lr_neuron > 0.0) || !(lr_image > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(convergence_tol >= 0.0)) throw ConfigError("convergence_tol must be non-negative");
}

const char* to_string(Provenance p) noexcept {
    switch (p) {
        case Provenance::base_trained: return "base-trained";
        case Provenance::image_derived: return "image-derived";
        case Provenance::indirect: return "indirect";
    }
    return "unknown";
}

Provenance provenance_from_string(std::string_view s) {
    if (s == "base-trained") return Provenance::base_trained;
    if (s == "image-derived") return Provenance::image_derived;
    if (s == "indirect") return Provenance::indirect;
    throw DataError(fmt::format("unknown provenance '{}'", s));
}

void VectorTable::init_uniform(std::uint64_t seed) {
    Rng rng(seed);
    const double half = 0.5 / static_cast<double>(dim_);
    for (auto& v : data_) v = rng.uniform(-half, half);
}

void EmbeddingSpace::add_neuron(NeuronKey key, std::vector<double> values, Provenance p) {
    if (values.size() != dim) throw ConfigError(fmt::format("vector of length {} in a space of dim {}", values.size(), dim));
    neurons.insert_or_assign(std::move(key), EmbeddedVector{std::move(values), p});
}

void EmbeddingSpace::add_image(ImageId id, std::vector<double> values, Provenance p) {
    if (values.size() != dim) throw ConfigError(fmt::format("vector of length {} in a space of dim {}", values.size(), dim));
    images.insert_or_assign(id, EmbeddedVector{std::move(values), p});
}

void EmbeddingSpace::add_images(const ImageVectors& vectors) {
    for (std::size_t x = 0; x < vectors.image_count(); ++x) {
        if (!vectors.source[x]) continue;
        const auto row = vectors.table.row(x);
        add_image(static_cast<ImageId>(x), {row.begin(), row.end()}, *vectors.source[x]);
    }
}

std::vector<const std::pair<const NeuronKey, EmbeddedVector>*> EmbeddingSpace::select(std::string_view model,
                                                                                       int epoch,
                                                                                       std::string_view layer) const {
    std::vector<const std::pair<const NeuronKey, EmbeddedVector>*> out;
    for (const auto& entry : neurons) {
        const auto& key = entry.first;
        if (key.model_id == model && key.epoch == epoch && (layer.empty() || key.layer_id == layer)) {
            out.push_back(&entry);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pair objective

double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

double pair_objective(std::span<const double> vn, std::span<const double> vm, const VectorTable& table,
                      std::span<const std::uint32_t> negatives) {
    double loss = -log_sigmoid(dot(vn, vm));
    for (std::uint32_t r : negatives) {
        const auto vr = table.row(r);
        // log(1 - s(x)) = log s(-x)
        loss -= log_sigmoid(-dot(vn, vr));
        loss -= log_sigmoid(-dot(vm, vr));
    }
    return loss;
}

void pair_ascent_directions(std::span<const double> vn, std::span<const double> vm, const VectorTable& table,
                            std::span<const std::uint32_t> negatives, std::span<double> grad_n,
                            std::span<double> grad_m) {
    const std::size_t d = vn.size();
    const double pos = 1.0 - sigmoid(dot(vn, vm));
    for (std::size_t i = 0; i < d; ++i) {
        grad_n[i] = pos * vm[i];
        grad_m[i] = pos * vn[i];
    }
    for (std::uint32_t r : negatives) {
        const auto vr = table.row(r);
        const double sn = sigmoid(dot(vn, vr));
        const double sm = sigmoid(dot(vm, vr));
        for (std::size_t i = 0; i < d; ++i) {
            grad_n[i] -= sn * vr[i];
            grad_m[i] -= sm * vr[i];
        }
    }
}

void sgd_pair_step(VectorTable& table, std::uint32_t n, std::uint32_t m, std::span<const std::uint32_t> negatives,
                   double lr, bool update_n, bool update_m) {
    if (!update_n && !update_m) return;
    const std::size_t d = table.dim();
    // Small fixed-size scratch; d is tiny (30 by default).
    thread_local std::vector<double> scratch;
    scratch.resize(2 * d);
    std::span<double> gn(scratch.data(), d);
    std::span<double> gm(scratch.data() + d, d);
    pair_ascent_directions(table.row(n), table.row(m), table, negatives, gn, gm);
    if (update_n) {
        auto vn = table.row(n);
        for (std::size_t i = 0; i < d; ++i) vn[i] += lr * gn[i];
    }
    if (update_m) {
        auto vm = table.row(m);
        for (std::size_t i = 0; i < d; ++i) vm[i] += lr * gm[i];
    }
}

void draw_negatives(Rng& rng, std::size_t universe, std::uint32_t a, std::uint32_t b, std::span<std::uint32_t> out) {
    if (out.empty()) return;
    const std::uint32_t lo = std::min(a, b);
    const std::uint32_t hi = std::max(a, b);
    const std::size_t excluded = (lo == hi) ? 1 : 2;
    if (universe <= excluded) throw ConfigError("universe too small to draw negatives");
    for (auto& r : out) {
        auto v = static_cast<std::uint32_t>(rng.uniform_index(universe - excluded));
        if (v >= lo) ++v;
        if (excluded == 2 && v >= hi) ++v;
        r = v;
    }
}

// ---------------------------------------------------------------------------
// Neuron training

NeuronTraining train_neuron_vectors(const PairMultiset& pairs, const TrainingConfig& config, std::size_t universe_size) {
    config.validate();
    if (pairs.pairs.empty()) throw ConfigError("empty pair multiset: nothing to learn from");
    for (const auto& [a, b] : pairs.pairs) {
        if (a >= universe_size || b >= universe_size) {
            throw ConfigError(fmt::format("pair ({}, {}) outside neuron universe of size {}", a, b, universe_size));
        }
    }
    if (config.negatives > 0 && universe_size < 3) throw ConfigError("negative sampling needs at least 3 neurons");

    NeuronTraining result;
    result.vectors = VectorTable(universe_size, config.dim);
    result.vectors.init_uniform(Rng::substream(config.seed, kTagInit)());

    auto draw = [&](Rng& rng, std::size_t idx, std::span<std::uint32_t> out) {
        const auto [n, m] = pairs.pairs[idx];
        draw_negatives(rng, universe_size, n, m, out);
    };
    auto all_trainable = [](std::uint32_t) { return true; };
    result.objective_history = run_pair_sgd(result.vectors, pairs.pairs, config, config.lr_neuron, draw,
                                             all_trainable, result.epochs_run, result.converged);
    return result;
}

EmbeddingSpace train_neuron_embeddings(const PairMultiset& pairs, const TrainingConfig& config,
                                       std::span<const NeuronKey> universe) {
    const NeuronTraining trained = train_neuron_vectors(pairs, config, universe.size());
    EmbeddingSpace space;
    space.dim = config.dim;
    for (std::size_t i = 0; i < universe.size(); ++i) {
        const auto row = trained.vectors.row(i);
        space.add_neuron(universe[i], {row.begin(), row.end()}, Provenance::base_trained);
    }
    return space;
}

// ---------------------------------------------------------------------------
// Image embedding

std::optional<std::vector<double>> approximate_neuron_vector(std::span<const ImageId> stimuli,
                                                             const ImageVectors& images, Provenance which) {
    const std::size_t d = images.table.dim();
    std::vector<double> sum(d, 0.0);
    std::size_t count = 0;
    for (ImageId x : stimuli) {
        if (!images.has(x, which)) continue;
        const auto row = images.table.row(x);
        for (std::size_t i = 0; i < d; ++i) sum[i] += row[i];
        ++count;
    }
    if (count == 0) return std::nullopt;
    for (auto& v : sum) v /= static_cast<double>(count);
    return sum;
}

EmbeddedVector approximate_with_fallback(std::span<const ImageId> stimuli, const ImageVectors& images) {
    if (auto direct = approximate_neuron_vector(stimuli, images, Provenance::image_derived)) {
        return {std::move(*direct), Provenance::image_derived};
    }
    if (auto indirect = approximate_neuron_vector(stimuli, images, Provenance::indirect)) {
        return {std::move(*indirect), Provenance::indirect};
    }
    throw UnrepresentableNeuronError("no stimulus image of this neuron has a vector");
}

namespace {

std::vector<double> require_mean(const StimuliTable& stimuli, std::size_t n, const ImageVectors& images) {
    const auto ids = stimuli.images_of(n);
    auto mean = approximate_neuron_vector(ids, images, Provenance::image_derived);
    if (!mean || ids.empty()) throw ConfigError(fmt::format("stimuli of base neuron {} lack image vectors", n));
    for (ImageId x : ids) {
        if (!images.has(x, Provenance::image_derived)) {
            throw ConfigError(fmt::format("stimulus image {} of base neuron {} has no vector", x, n));
        }
    }
    return *mean;
}

void check_neuron_table(const VectorTable& neuron_vectors, const StimuliTable& stimuli, const ImageVectors& images) {
    if (neuron_vectors.rows() != stimuli.neuron_count()) {
        throw ConfigError(fmt::format("{} neuron vectors for {} stimuli lists", neuron_vectors.rows(),
                                      stimuli.neuron_count()));
    }
    if (neuron_vectors.dim() != images.table.dim()) throw ConfigError("neuron and image dims differ");
}

}  // namespace

double image_objective(const VectorTable& neuron_vectors, const StimuliTable& stimuli, const ImageVectors& images) {
    check_neuron_table(neuron_vectors, stimuli, images);
    double total = 0.0;
    for (std::size_t n = 0; n < stimuli.neuron_count(); ++n) {
        const auto approx = require_mean(stimuli, n, images);
        const auto v = neuron_vectors.row(n);
        for (std::size_t i = 0; i < approx.size(); ++i) {
            const double diff = approx[i] - v[i];
            total += diff * diff;
        }
    }
    return 0.5 * total;
}

VectorTable image_objective_gradient(const VectorTable& neuron_vectors, const StimuliTable& stimuli,
                                     const ImageVectors& images) {
    check_neuron_table(neuron_vectors, stimuli, images);
    const std::size_t d = neuron_vectors.dim();
    VectorTable grad(images.image_count(), d);
    std::vector<double> diff(d);
    for (std::size_t n = 0; n < stimuli.neuron_count(); ++n) {
        const auto approx = require_mean(stimuli, n, images);
        const auto v = neuron_vectors.row(n);
        const double set_size = static_cast<double>(stimuli.neurons[n].size());
        for (std::size_t i = 0; i < d; ++i) diff[i] = (approx[i] - v[i]) / set_size;
        for (const auto& s : stimuli.neurons[n]) {
            auto g = grad.row(s.image);
            for (std::size_t i = 0; i < d; ++i) g[i] += diff[i];
        }
    }
    return grad;
}

ImageTraining train_image_embeddings(const VectorTable& neuron_vectors, const StimuliTable& stimuli,
                                     const TrainingConfig& config) {
    config.validate();
    if (neuron_vectors.dim() != config.dim) {
        throw ConfigError(fmt::format("neuron vectors have dim {}, config says {}", neuron_vectors.dim(), config.dim));
    }
    ImageTraining result;
    result.images = ImageVectors(stimuli.image_count, config.dim);
    auto& images = result.images;

    Rng init = Rng::substream(config.seed, kTagImages);
    const double half = 0.5 / static_cast<double>(config.dim);
    for (const auto& list : stimuli.neurons) {
        for (const auto& s : list) images.source[s.image] = Provenance::image_derived;
    }
    for (std::size_t x = 0; x < images.image_count(); ++x) {
        if (!images.source[x]) continue;
        for (auto& v : images.table.row(x)) v = init.uniform(-half, half);
    }

    result.objective_history.push_back(image_objective(neuron_vectors, stimuli, images));
    for (std::size_t step = 0; step < config.image_steps; ++step) {
        const VectorTable grad = image_objective_gradient(neuron_vectors, stimuli, images);
        for (std::size_t x = 0; x < images.image_count(); ++x) {
            if (!images.source[x]) continue;
            auto row = images.table.row(x);
            const auto g = grad.row(x);
            for (std::size_t i = 0; i < row.size(); ++i) row[i] -= config.lr_image * g[i];
        }
        ++result.steps_run;
        result.objective_history.push_back(image_objective(neuron_vectors, stimuli, images));
        const double prev = result.objective_history[result.objective_history.size() - 2];
        if (result.objective_history.back() == 0.0 ||
            relative_change_below(prev, result.objective_history.back(), config.convergence_tol)) {
            break;
        }
    }
    return result;
}

EmbeddingSpace train_image_embeddings(const EmbeddingSpace& base_space, std::span<const NeuronKey> base_universe,
                                      const StimuliTable& stimuli, const TrainingConfig& config,
                                      std::vector<double>* objective_history) {
    if (base_space.dim != config.dim) throw ConfigError("space dim differs from config dim");
    VectorTable neuron_vectors(base_universe.size(), config.dim);
    for (std::size_t i = 0; i < base_universe.size(); ++i) {
        auto it = base_space.neurons.find(base_universe[i]);
        if (it == base_space.neurons.end()) {
            throw ConfigError(fmt::format("base neuron {}/{}/{}/{} has no trained vector", base_universe[i].model_id,
                                          base_universe[i].epoch, base_universe[i].layer_id, base_universe[i].neuron));
        }
        std::copy(it->second.values.begin(), it->second.values.end(), neuron_vectors.row(i).begin());
    }
    ImageTraining trained = train_image_embeddings(neuron_vectors, stimuli, config);
    if (objective_history != nullptr) *objective_history = trained.objective_history;
    EmbeddingSpace out = base_space;
    out.add_images(trained.images);
    return out;
}

UncoveredReport embed_uncovered_images(const PairMultiset& image_pairs, ImageVectors& images,
                                       const TrainingConfig& config) {
    config.validate();
    if (image_pairs.kind != PairKind::image) throw ConfigError("embed_uncovered_images needs an image pair multiset");
    if (images.table.dim() != config.dim) throw ConfigError("image vectors have a different dim than the config");

    const std::size_t count = images.image_count();
    std::vector<char> in_pairs(count, 0);
    for (const auto& [a, b] : image_pairs.pairs) {
        if (a >= count || b >= count) throw ConfigError(fmt::format("image pair ({}, {}) out of range", a, b));
        in_pairs[a] = in_pairs[b] = 1;
    }

    UncoveredReport report;
    std::vector<char> is_new(count, 0);
    for (std::size_t x = 0; x < count; ++x) {
        if (images.source[x]) continue;
        if (in_pairs[x]) {
            is_new[x] = 1;
            report.embedded.push_back(static_cast<ImageId>(x));
        } else {
            report.unrepresentable.push_back(static_cast<ImageId>(x));
        }
    }
    if (report.embedded.empty()) return report;

    Rng init = Rng::substream(config.seed, kTagIndirect);
    const double half = 0.5 / static_cast<double>(config.dim);
    for (ImageId x : report.embedded) {
        for (auto& v : images.table.row(x)) v = init.uniform(-half, half);
        images.source[x] = Provenance::indirect;
    }

    std::vector<std::pair<std::uint32_t, std::uint32_t>> trainable;
    for (const auto& p : image_pairs.pairs) {
        if (is_new[p.first] || is_new[p.second]) trainable.push_back(p);
    }
    std::vector<std::uint32_t> pool;
    for (std::size_t x = 0; x < count; ++x) {
        if (images.source[x]) pool.push_back(static_cast<std::uint32_t>(x));
    }
    TrainingConfig effective = config;
    if (pool.size() < 3) effective.negatives = 0;

    auto draw = [&](Rng& rng, std::size_t idx, std::span<std::uint32_t> out) {
        const auto [a, b] = trainable[idx];
        const auto pa = static_cast<std::uint32_t>(std::lower_bound(pool.begin(), pool.end(), a) - pool.begin());
        const auto pb = static_cast<std::uint32_t>(std::lower_bound(pool.begin(), pool.end(), b) - pool.begin());
        draw_negatives(rng, pool.size(), pa, pb, out);
        for (auto& r : out) r = pool[r];
    };
    auto gate = [&](std::uint32_t x) { return is_new[x] != 0; };
    std::size_t epochs = 0;
    bool converged = false;
    report.objective_history =
        run_pair_sgd(images.table, trainable, effective, effective.lr_neuron, draw, gate, epochs, converged);
    return report;
}

// ---------------------------------------------------------------------------
// Projection

LayerProjection project_layer(const MaxActivationMatrix& acts, const ImageVectors& images, std::size_t k) {
    if (acts.image_count() != images.image_count()) {
        throw ConfigError(fmt::format("activation matrix covers {} images, image vectors {}", acts.image_count(),
                                      images.image_count()));
    }
    const StimuliTable stimuli = compute_stimuli(acts, k);
    LayerProjection out;
    out.neurons.resize(stimuli.neuron_count());
    for (std::size_t n = 0; n < stimuli.neuron_count(); ++n) {
        const auto ids = stimuli.images_of(n);
        if (auto direct = approximate_neuron_vector(ids, images, Provenance::image_derived)) {
            out.neurons[n] = EmbeddedVector{std::move(*direct), Provenance::image_derived};
        } else if (auto indirect = approximate_neuron_vector(ids, images, Provenance::indirect)) {
            out.neurons[n] = EmbeddedVector{std::move(*indirect), Provenance::indirect};
        } else {
            out.unrepresentable.push_back(static_cast<NeuronId>(n));
        }
    }
    return out;
}

ModelProjection project_model(const DatasetReader& dataset, std::string_view model_id, int epoch,
                              const ImageVectors& images, std::size_t k, std::span<const std::string> layers) {
    const ModelEntry* model = dataset.manifest().find_model(model_id);
    if (model == nullptr) throw ConfigError(fmt::format("unknown model '{}'", model_id));
    std::vector<std::string> selected(layers.begin(), layers.end());
    if (selected.empty()) {
        for (const auto& l : model->layers) selected.push_back(l.layer_id);
    }
    ModelProjection out;
    for (const auto& layer : selected) {
        const auto acts = dataset.read_max_activations(model_id, epoch, layer);
        LayerProjection projected = project_layer(acts, images, k);
        for (std::size_t n = 0; n < projected.neurons.size(); ++n) {
            NeuronKey key{std::string(model_id), epoch, layer, static_cast<NeuronId>(n)};
            if (projected.neurons[n]) {
                out.neurons.emplace(std::move(key), std::move(*projected.neurons[n]));
            } else {
                out.warnings.push_back(std::move(key));
            }
        }
    }
    return out;
}

}  // namespace conceptevo
