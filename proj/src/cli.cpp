#include "conceptevo/cli.hpp"

#include "conceptevo/diagnostics.hpp"
#include "conceptevo/error.hpp"
#include "conceptevo/importance.hpp"
#include "conceptevo/pair_sampler.hpp"
#include "conceptevo/pipeline.hpp"
#include "conceptevo/synthetic.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

namespace conceptevo {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kDefaultSeed = 1;

std::uint64_t seed_from_env(std::uint64_t fallback) {
    const char* text = std::getenv("CONCEPTEVO_SEED");
    if (text == nullptr || *text == '\0') return fallback;
    std::uint64_t value = 0;
    const std::string_view s(text);
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || end != s.data() + s.size()) {
        throw ConfigError(fmt::format("CONCEPTEVO_SEED must be an unsigned integer, got '{}'", s));
    }
    return value;
}

// Seed given on the command line or in --config, else CONCEPTEVO_SEED, else the default.
struct SeedOption {
    CLI::Option* option = nullptr;
    std::uint64_t value = kDefaultSeed;

    void add(CLI::App& app, const std::string& help = "random seed") {
        option = app.add_option("--seed", value, help + " (falls back to CONCEPTEVO_SEED)");
    }
    std::uint64_t get() const { return option->count() > 0 ? value : seed_from_env(kDefaultSeed); }
};

std::string config_value_text(const json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw ConfigError(fmt::format("config key '{}' must hold scalars", key));
}

// Every key of the JSON object replaces the value of the option of the same
// name (underscores and dashes are interchangeable).
void apply_config(CLI::App& app, const std::string& path) {
    if (path.empty()) return;
    if (!fs::exists(path)) throw DependencyError(path, "config file not found");
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("config {} is not valid JSON: {}", path, e.what()));
    }
    if (!j.is_object()) throw ConfigError(fmt::format("config {} must hold a JSON object", path));
    for (const auto& [key, value] : j.items()) {
        std::string name = key;
        std::replace(name.begin(), name.end(), '_', '-');
        CLI::Option* opt = name == "config" ? nullptr : app.get_option_no_throw("--" + name);
        if (opt == nullptr) throw ConfigError(fmt::format("unknown config key '{}' for '{}'", key, app.get_name()));
        opt->clear();
        if (value.is_array()) {
            for (const auto& item : value) opt->add_result(config_value_text(item, key));
        } else {
            opt->add_result(config_value_text(value, key));
        }
        try {
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw ConfigError(fmt::format("config key '{}': {}", key, e.what()));
        }
    }
}

void require(const CLI::Option* opt) {
    if (opt->count() == 0) throw ConfigError(fmt::format("{} is required", opt->get_name()));
}

template <class Fn>
void write_output(const fs::path& path, Fn&& fn) {
    std::ostringstream buffer;
    fn(buffer);
    write_text_file(path, buffer.str());
}

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError(path.string());
    return in;
}

EmbeddingSpace load_space(const fs::path& path) {
    auto in = open_input(path);
    return read_embeddings_jsonl(in);
}

Projection2D load_coords(const fs::path& path) {
    auto in = open_input(path);
    return read_coords_csv(in);
}

fs::path universe_sidecar(const fs::path& stimuli) { return fs::path(stimuli.string() + ".universe.json"); }

Universe load_universe(const fs::path& stimuli) {
    const fs::path path = universe_sidecar(stimuli);
    if (!fs::exists(path)) throw DependencyError(path.string(), "stimuli universe sidecar not found");
    return universe_from_json(read_text_file(path));
}

StimuliTable load_stimuli(const fs::path& path, const Universe& universe) {
    auto in = open_input(path);
    return read_stimuli_jsonl(in, universe.image_count);
}

// Report goes to --out when given, else stdout.
void emit_report(const json& report, const std::string& out_path, std::ostream& out) {
    if (out_path.empty()) {
        out << report.dump(2) << '\n';
    } else {
        write_text_file(out_path, report.dump(2) + "\n");
    }
}

void add_training_options(CLI::App& app, TrainingConfig& t) {
    app.add_option("--dim", t.dim, "embedding dimension");
    app.add_option("--lr-neuron", t.lr_neuron, "neuron learning rate");
    app.add_option("--lr-image", t.lr_image, "image learning rate");
    app.add_option("--negatives", t.negatives, "negative samples per pair");
    app.add_option("--max-epochs", t.max_epochs, "passes over the pair multiset");
    app.add_option("--image-steps", t.image_steps, "descent steps on the image objective");
    app.add_option("--tol", t.convergence_tol, "relative objective change that stops training");
}

json key_json(const NeuronKey& key) {
    return {{"model", key.model_id}, {"epoch", key.epoch}, {"layer", key.layer_id}, {"neuron", key.neuron}};
}

json error_json(const Error& e) {
    json j = {{"error", e.kind()}, {"exit_code", static_cast<int>(e.exit_code())}, {"message", e.what()}};
    if (const auto* d = dynamic_cast<const DependencyError*>(&e)) j["path"] = d->path();
    if (const auto* c = dynamic_cast<const CorruptFileError*>(&e)) {
        j["path"] = c->path();
        j["expected_bytes"] = c->expected_bytes();
        j["actual_bytes"] = c->actual_bytes();
    }
    return j;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Unified semantic space for neuron concepts across models and training epochs", "conceptevo"};
    app.require_subcommand(1);
    std::map<std::string, std::function<void()>> handlers;
    std::map<std::string, std::string> config_paths;

    auto subcommand = [&](const std::string& name, const std::string& help) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_paths[name], "JSON object whose keys override flags");
        return sub;
    };

    // make-fixture
    {
        auto* sub = subcommand("make-fixture", "write the bundled synthetic dataset");
        auto root = std::make_shared<std::string>();
        auto* o_root = sub->add_option("--out", *root, "dataset root to create");
        auto spec_ptr = std::make_shared<SyntheticSpec>(SyntheticSpec::standard());
        sub->add_option("--images", spec_ptr->images, "image count");
        sub->add_option("--groups", spec_ptr->groups, "planted concept groups");
        sub->add_option("--classes", spec_ptr->classes, "classes");
        auto no_maps = std::make_shared<bool>(false);
        sub->add_flag("--no-maps", *no_maps, "skip activation maps and gradients");
        auto seed = std::make_shared<SeedOption>();
        seed->add(*sub);
        handlers["make-fixture"] = [=, &out] {
            require(o_root);
            spec_ptr->with_maps = !*no_maps;
            spec_ptr->seed = seed->get();
            write_synthetic(*root, *spec_ptr);
            out << json{{"dataset", *root}, {"images", spec_ptr->images}}.dump() << '\n';
        };
    }

    // validate
    {
        auto* sub = subcommand("validate", "check the manifest and every max-activation file");
        auto dataset = std::make_shared<std::string>();
        auto* opt = sub->add_option("--dataset", *dataset, "dataset root");
        handlers["validate"] = [=, &out] {
            require(opt);
            const DatasetReader reader(*dataset);
            std::size_t files = 0;
            for (const auto& m : reader.manifest().models) {
                for (int e : m.epochs) {
                    for (const auto& l : m.layers) {
                        reader.read_max_activations(m.model_id, e, l.layer_id);
                        ++files;
                    }
                }
            }
            out << json{{"ok", true},
                        {"models", reader.manifest().models.size()},
                        {"images", reader.manifest().image_count},
                        {"activation_files", files}}
                       .dump()
                << '\n';
        };
    }

    // stimuli
    {
        struct Args {
            std::string dataset, model, out;
            int epoch = 0;
            std::vector<std::string> layers;
            std::size_t k = kDefaultTopK;
            std::size_t workers = 1;
        };
        auto a = std::make_shared<Args>();
        auto* sub = subcommand("stimuli", "top-k images per neuron");
        auto* o_dataset = sub->add_option("--dataset", a->dataset, "dataset root");
        auto* o_model = sub->add_option("--model", a->model, "model id");
        auto* o_epoch = sub->add_option("--epoch", a->epoch, "epoch");
        sub->add_option("--layer", a->layers, "layer id (repeatable; default all layers)");
        sub->add_option("--k", a->k, "stimuli per neuron");
        auto* o_out = sub->add_option("--out", a->out, "output JSONL");
        sub->add_option("--workers", a->workers, "worker threads");
        handlers["stimuli"] = [=] {
            for (auto* o : {o_dataset, o_model, o_epoch, o_out}) require(o);
            const DatasetReader reader(a->dataset);
            const BaseStimuli base = compute_base_stimuli(reader, a->model, a->epoch, a->layers, a->k, a->workers);
            write_output(a->out, [&](std::ostream& os) { write_stimuli_jsonl(os, base.stimuli); });
            write_text_file(universe_sidecar(a->out), universe_to_json(base.universe));
        };
    }

    // sample-pairs
    {
        struct Args {
            std::string kind = "neuron", stimuli, dataset, out;
            std::size_t rounds = kDefaultRounds;
            std::size_t k = kDefaultTopK;
            std::size_t workers = 1;
        };
        auto a = std::make_shared<Args>();
        auto seed = std::make_shared<SeedOption>();
        auto* sub = subcommand("sample-pairs", "co-activated neuron pairs or co-stimulating image pairs");
        sub->add_option("--kind", a->kind, "neuron or image")->check(CLI::IsMember({"neuron", "image"}));
        auto* o_stimuli = sub->add_option("--stimuli", a->stimuli, "stimuli JSONL (with its universe sidecar)");
        sub->add_option("--dataset", a->dataset, "dataset root (image pairs only)");
        sub->add_option("--rounds", a->rounds, "sampling rounds");
        sub->add_option("--k", a->k, "top neurons per image (image pairs only)");
        seed->add(*sub);
        auto* o_out = sub->add_option("--out", a->out, "output pairs file");
        sub->add_option("--workers", a->workers, "worker threads");
        handlers["sample-pairs"] = [=, &out] {
            require(o_stimuli);
            require(o_out);
            const Universe universe = load_universe(a->stimuli);
            PairMultiset pairs;
            if (a->kind == "neuron") {
                pairs = sample_coactivated_neuron_pairs(load_stimuli(a->stimuli, universe), a->rounds, seed->get(),
                                                        a->workers);
            } else if (a->kind == "image") {
                if (a->dataset.empty()) throw ConfigError("--dataset is required for image pairs");
                const DatasetReader reader(a->dataset);
                const auto top = compute_top_neurons_per_image(read_universe_activations(reader, universe), a->k,
                                                               a->workers);
                pairs = sample_costimulating_image_pairs(top, a->rounds, seed->get(), a->workers);
            } else {
                throw ConfigError(fmt::format("--kind must be neuron or image, got '{}'", a->kind));
            }
            write_pairs(a->out, pairs);
            out << json{{"kind", a->kind}, {"pairs", pairs.size()}}.dump() << '\n';
        };
    }

    // train-neuron-emb
    {
        struct Args {
            std::string pairs, stimuli, out;
            TrainingConfig training;
        };
        auto a = std::make_shared<Args>();
        auto seed = std::make_shared<SeedOption>();
        auto* sub = subcommand("train-neuron-emb", "train base neuron vectors from co-activated pairs");
        auto* o_pairs = sub->add_option("--pairs", a->pairs, "neuron pairs file");
        auto* o_stimuli = sub->add_option("--stimuli", a->stimuli, "stimuli JSONL whose universe names the neurons");
        auto* o_out = sub->add_option("--out", a->out, "output embeddings JSONL");
        add_training_options(*sub, a->training);
        seed->add(*sub);
        handlers["train-neuron-emb"] = [=, &out] {
            for (auto* o : {o_pairs, o_stimuli, o_out}) require(o);
            TrainingConfig config = a->training;
            config.seed = seed->get();
            const Universe universe = load_universe(a->stimuli);
            const PairMultiset pairs = read_pairs(a->pairs);
            const NeuronTraining trained = train_neuron_vectors(pairs, config, universe.size());
            EmbeddingSpace space;
            space.dim = config.dim;
            const auto keys = universe.keys();
            for (std::size_t i = 0; i < keys.size(); ++i) {
                const auto row = trained.vectors.row(i);
                space.add_neuron(keys[i], {row.begin(), row.end()}, Provenance::base_trained);
            }
            write_output(a->out, [&](std::ostream& os) { write_embeddings_jsonl(os, space); });
            out << json{{"epochs_run", trained.epochs_run},
                        {"converged", trained.converged},
                        {"objective_history", trained.objective_history}}
                       .dump()
                << '\n';
        };
    }

    // train-img-emb
    {
        struct Args {
            std::string neuron_emb, stimuli, image_pairs, out;
            TrainingConfig training;
        };
        auto a = std::make_shared<Args>();
        auto seed = std::make_shared<SeedOption>();
        auto* sub = subcommand("train-img-emb", "fit image vectors to the base neuron vectors");
        auto* o_neuron = sub->add_option("--neuron-emb", a->neuron_emb, "base neuron embeddings JSONL");
        auto* o_stimuli = sub->add_option("--stimuli", a->stimuli, "base stimuli JSONL");
        sub->add_option("--image-pairs", a->image_pairs, "image pairs file for images outside the base stimuli");
        auto* o_out = sub->add_option("--out", a->out, "output embeddings JSONL (neurons and images)");
        add_training_options(*sub, a->training);
        seed->add(*sub);
        handlers["train-img-emb"] = [=, &out] {
            for (auto* o : {o_neuron, o_stimuli, o_out}) require(o);
            TrainingConfig config = a->training;
            config.seed = seed->get();
            const Universe universe = load_universe(a->stimuli);
            const StimuliTable stimuli = load_stimuli(a->stimuli, universe);
            const EmbeddingSpace base = load_space(a->neuron_emb);
            if (base.dim != config.dim) config.dim = base.dim;
            std::vector<double> j2;
            EmbeddingSpace space = train_image_embeddings(base, universe.keys(), stimuli, config, &j2);
            json report = {{"j2_initial", j2.front()}, {"j2_final", j2.back()}, {"j2_steps", j2.size() - 1}};
            if (!a->image_pairs.empty()) {
                ImageVectors vectors = image_vectors_of(space, universe.image_count);
                const UncoveredReport uncovered = embed_uncovered_images(read_pairs(a->image_pairs), vectors, config);
                space.images.clear();
                space.add_images(vectors);
                report["indirect"] = uncovered.embedded.size();
                report["unrepresentable_images"] = uncovered.unrepresentable;
            }
            write_output(a->out, [&](std::ostream& os) { write_embeddings_jsonl(os, space); });
            out << report.dump() << '\n';
        };
    }

    // project
    {
        struct Args {
            std::string dataset, embeddings, model, out;
            std::vector<int> epochs;
            std::vector<std::string> layers;
            std::size_t k = kDefaultTopK;
        };
        auto a = std::make_shared<Args>();
        auto* sub = subcommand("project", "place the neurons of any (model, epoch) in the space");
        auto* o_dataset = sub->add_option("--dataset", a->dataset, "dataset root");
        auto* o_emb = sub->add_option("--embeddings", a->embeddings, "embeddings JSONL holding image vectors");
        auto* o_model = sub->add_option("--model", a->model, "model id");
        auto* o_epoch = sub->add_option("--epoch", a->epochs, "epoch (repeatable)");
        sub->add_option("--layer", a->layers, "layer id (repeatable; default all)");
        sub->add_option("--k", a->k, "stimuli per neuron");
        auto* o_out = sub->add_option("--out", a->out, "output embeddings JSONL (input space plus projections)");
        handlers["project"] = [=, &out, &err] {
            for (auto* o : {o_dataset, o_emb, o_model, o_epoch, o_out}) require(o);
            const DatasetReader reader(a->dataset);
            EmbeddingSpace space = load_space(a->embeddings);
            const ImageVectors vectors = image_vectors_of(space, reader.manifest().image_count);
            std::size_t placed = 0;
            std::size_t missing = 0;
            for (int epoch : a->epochs) {
                const ModelProjection projected = project_model(reader, a->model, epoch, vectors, a->k, a->layers);
                for (const auto& [key, vec] : projected.neurons) space.add_neuron(key, vec.values, vec.provenance);
                placed += projected.neurons.size();
                missing += projected.warnings.size();
                for (const auto& key : projected.warnings) {
                    err << json{{"warning", "unrepresentable neuron"}, {"neuron", key_json(key)}}.dump() << '\n';
                }
            }
            write_output(a->out, [&](std::ostream& os) { write_embeddings_jsonl(os, space); });
            out << json{{"projected", placed}, {"unrepresentable", missing}}.dump() << '\n';
        };
    }

    // reduce-2d
    {
        struct Args {
            std::string in, out, reducer = "umap", model, layer;
            ReducerParams params;
        };
        auto a = std::make_shared<Args>();
        auto seed = std::make_shared<SeedOption>();
        auto* sub = subcommand("reduce-2d", "joint 2D layout of every neuron vector");
        auto* o_in = sub->add_option("--in", a->in, "embeddings JSONL");
        auto* o_out = sub->add_option("--out", a->out, "output coords CSV");
        sub->add_option("--reducer", a->reducer, "umap or linear");
        sub->add_option("--neighbors", a->params.neighbors, "umap neighbours");
        sub->add_option("--min-dist", a->params.min_dist, "umap min_dist");
        sub->add_option("--spread", a->params.spread, "umap spread");
        sub->add_option("--epochs", a->params.epochs, "umap layout epochs (0 = automatic)");
        sub->add_option("--model", a->model, "only neurons of this model");
        sub->add_option("--layer", a->layer, "only neurons of this layer");
        seed->add(*sub);
        handlers["reduce-2d"] = [=] {
            require(o_in);
            require(o_out);
            ReducerParams params = a->params;
            params.seed = seed->get();
            const EmbeddingSpace space = load_space(a->in);
            const auto reducer = make_reducer(a->reducer, params);
            const std::string model = a->model;
            const std::string layer = a->layer;
            const Projection2D projection = fit_reduce(
                space,
                [model, layer](const NeuronKey& k) {
                    return (model.empty() || k.model_id == model) && (layer.empty() || k.layer_id == layer);
                },
                *reducer);
            write_output(a->out, [&](std::ostream& os) { write_coords_csv(os, projection); });
        };
    }

    // importance
    {
        struct Args {
            std::string dataset, model, layer, out;
            int from = 0, to = 0;
            ClassId cls = 0;
            std::size_t sample = kDefaultClassSample;
        };
        auto a = std::make_shared<Args>();
        auto seed = std::make_shared<SeedOption>();
        auto* sub = subcommand("importance", "evolution importance of every neuron of a layer for a class");
        auto* o_dataset = sub->add_option("--dataset", a->dataset, "dataset root");
        auto* o_model = sub->add_option("--model", a->model, "model id");
        auto* o_from = sub->add_option("--from-epoch", a->from, "earlier epoch");
        auto* o_to = sub->add_option("--to-epoch", a->to, "later epoch");
        auto* o_layer = sub->add_option("--layer", a->layer, "layer id");
        auto* o_class = sub->add_option("--class", a->cls, "class id");
        sub->add_option("--sample", a->sample, "class images to sample");
        seed->add(*sub);
        auto* o_out = sub->add_option("--out", a->out, "output JSONL");
        handlers["importance"] = [=] {
            for (auto* o : {o_dataset, o_model, o_from, o_to, o_layer, o_class, o_out}) require(o);
            const DatasetReader reader(a->dataset);
            const auto scores =
                class_importance_pipeline(reader, a->model, a->from, a->to, a->layer, a->cls, a->sample, seed->get());
            write_output(a->out, [&](std::ostream& os) { write_importance_jsonl(os, scores); });
        };
    }

    // revert-plan
    {
        struct Args {
            std::string in, out;
            std::optional<ClassId> cls;
        };
        auto a = std::make_shared<Args>();
        auto seed = std::make_shared<SeedOption>();
        auto* sub = subcommand("revert-plan", "bin neurons by importance into a revert plan");
        auto* o_in = sub->add_option("--in", a->in, "importance JSONL");
        auto* o_out = sub->add_option("--out", a->out, "output plan JSON");
        sub->add_option("--class", a->cls, "class to plan for when the input holds several");
        seed->add(*sub);
        handlers["revert-plan"] = [=] {
            require(o_in);
            require(o_out);
            auto in = open_input(a->in);
            auto scores = read_importance_jsonl(in);
            if (a->cls) {
                std::erase_if(scores, [&](const EvolutionImportance& s) { return s.class_id != *a->cls; });
            } else {
                for (const auto& s : scores) {
                    if (s.class_id != scores.front().class_id) {
                        throw ConfigError("importance file holds several classes; pick one with --class");
                    }
                }
            }
            write_text_file(a->out, revert_plan_to_json(make_revert_plan(scores, seed->get())));
        };
    }

    // entropy
    {
        struct Args {
            std::string coords, model, out;
            std::optional<int> epoch;
        };
        auto a = std::make_shared<Args>();
        auto* sub = subcommand("entropy", "differential entropy of 2D coordinates");
        auto* o_coords = sub->add_option("--coords", a->coords, "coords CSV");
        sub->add_option("--model", a->model, "model id (default: every model and epoch)");
        sub->add_option("--epoch", a->epoch, "epoch");
        sub->add_option("--out", a->out, "report path (default stdout)");
        handlers["entropy"] = [=, &out] {
            require(o_coords);
            const Projection2D projection = load_coords(a->coords);
            json report = json::array();
            std::set<std::pair<std::string, int>> groups;
            for (const auto& key : projection.fitted_on) {
                if ((a->model.empty() || key.model_id == a->model) && (!a->epoch || key.epoch == *a->epoch)) {
                    groups.emplace(key.model_id, key.epoch);
                }
            }
            if (groups.empty()) throw ConfigError("no coordinates match the selection");
            for (const auto& [model, epoch] : groups) {
                const auto d = differential_entropy(projection, model, epoch);
                report.push_back(
                    {{"model", model}, {"epoch", epoch}, {"entropy", d.mean}, {"per_dimension", d.per_dimension}});
            }
            emit_report(report, a->out, out);
        };
    }

    // drift
    {
        struct Args {
            std::string embeddings, model, out;
            int from = 0, to = 0;
        };
        auto a = std::make_shared<Args>();
        auto* sub = subcommand("drift", "mean displacement of matched neurons between two epochs");
        auto* o_emb = sub->add_option("--embeddings", a->embeddings, "embeddings JSONL");
        auto* o_model = sub->add_option("--model", a->model, "model id");
        auto* o_from = sub->add_option("--from-epoch", a->from, "first epoch");
        auto* o_to = sub->add_option("--to-epoch", a->to, "second epoch");
        sub->add_option("--out", a->out, "report path (default stdout)");
        handlers["drift"] = [=, &out] {
            for (auto* o : {o_emb, o_model, o_from, o_to}) require(o);
            const auto d = drift(load_space(a->embeddings), a->model, a->from, a->to);
            emit_report({{"model", d.model_id},
                         {"from_epoch", d.epoch_a},
                         {"to_epoch", d.epoch_b},
                         {"matched", d.matched},
                         {"mean_distance", d.mean_distance}},
                        a->out, out);
        };
    }

    // cluster
    {
        struct Args {
            std::string coords, embeddings, model, out;
            std::optional<int> epoch;
            std::size_t k = 0;
            std::size_t max_iterations = 300;
        };
        auto a = std::make_shared<Args>();
        auto seed = std::make_shared<SeedOption>();
        auto* sub = subcommand("cluster", "k-means concept groups");
        sub->add_option("--coords", a->coords, "coords CSV");
        sub->add_option("--embeddings", a->embeddings, "embeddings JSONL (clusters the full vectors)");
        auto* o_k = sub->add_option("--k", a->k, "cluster count");
        sub->add_option("--model", a->model, "only neurons of this model");
        sub->add_option("--epoch", a->epoch, "only neurons of this epoch");
        sub->add_option("--max-iterations", a->max_iterations, "Lloyd iteration cap");
        seed->add(*sub);
        sub->add_option("--out", a->out, "report path (default stdout)");
        handlers["cluster"] = [=, &out] {
            require(o_k);
            if (a->coords.empty() == a->embeddings.empty()) throw ConfigError("give exactly one of --coords, --embeddings");
            auto keep = [&](const NeuronKey& key) {
                return (a->model.empty() || key.model_id == a->model) && (!a->epoch || key.epoch == *a->epoch);
            };
            std::vector<NeuronKey> keys;
            std::vector<std::vector<double>> rows;
            if (!a->coords.empty()) {
                const Projection2D p = load_coords(a->coords);
                for (std::size_t i = 0; i < p.size(); ++i) {
                    if (!keep(p.fitted_on[i])) continue;
                    keys.push_back(p.fitted_on[i]);
                    rows.push_back({p.coords[i][0], p.coords[i][1]});
                }
            } else {
                const EmbeddingSpace space = load_space(a->embeddings);
                for (const auto& [key, vec] : space.neurons) {
                    if (!keep(key)) continue;
                    keys.push_back(key);
                    rows.push_back(vec.values);
                }
            }
            if (rows.empty()) throw ConfigError("no neurons match the selection");
            VectorTable points(rows.size(), rows.front().size());
            for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), points.row(i).begin());
            const ConceptGroups groups = kmeans_groups(points, a->k, seed->get(), a->max_iterations);
            json members = json::array();
            for (std::size_t i = 0; i < keys.size(); ++i) {
                json m = key_json(keys[i]);
                m["cluster"] = groups.assignment[i];
                members.push_back(std::move(m));
            }
            emit_report({{"k", groups.k},
                         {"iterations", groups.iterations},
                         {"converged", groups.converged},
                         {"inertia", groups.inertia()},
                         {"inertia_history", groups.inertia_history},
                         {"members", members}},
                        a->out, out);
        };
    }

    // run
    {
        auto c = std::make_shared<PipelineConfig>();
        auto raw = std::make_shared<std::map<std::string, std::string>>();
        auto seed = std::make_shared<SeedOption>();
        auto base_epoch = std::make_shared<std::optional<int>>();
        auto from_epoch = std::make_shared<std::optional<int>>();
        auto to_epoch = std::make_shared<std::optional<int>>();
        auto dataset = std::make_shared<std::string>();
        auto out_dir = std::make_shared<std::string>();
        auto* sub = subcommand("run", "run pipeline stages with content-hash caching");
        auto* o_dataset = sub->add_option("--dataset", *dataset, "dataset root");
        auto* o_out = sub->add_option("--out", *out_dir, "artifact directory");
        sub->add_option("--base-model", c->base_model, "base model (default: first model)");
        sub->add_option("--base-epoch", *base_epoch, "base epoch (default: last epoch of the base model)");
        sub->add_option("--layer", c->layers, "base layers (repeatable; default all)");
        sub->add_option("--stages", c->stages, "comma-separated stages (default all)")->delimiter(',');
        sub->add_option("--target", c->targets, "model:epoch to project (repeatable; default all others)");
        sub->add_option("--k", c->k, "stimuli per neuron");
        sub->add_option("--rounds", c->rounds, "pair sampling rounds");
        add_training_options(*sub, c->training);
        sub->add_option("--reducer", c->reducer, "umap or linear");
        sub->add_option("--neighbors", c->reducer_params.neighbors, "umap neighbours");
        sub->add_option("--min-dist", c->reducer_params.min_dist, "umap min_dist");
        sub->add_option("--spread", c->reducer_params.spread, "umap spread");
        sub->add_option("--layout-epochs", c->reducer_params.epochs, "umap layout epochs (0 = automatic)");
        sub->add_option("--importance-model", c->importance_model, "model scored by importance (default base)");
        sub->add_option("--from-epoch", *from_epoch, "importance start epoch (default first)");
        sub->add_option("--to-epoch", *to_epoch, "importance end epoch (default last)");
        sub->add_option("--importance-layer", c->importance_layers, "importance layers (repeatable; default all)");
        sub->add_option("--class", c->classes, "classes to score (repeatable; default all)");
        sub->add_option("--sample", c->class_sample, "class images per importance score");
        sub->add_option("--workers", c->workers, "worker threads");
        seed->add(*sub);
        handlers["run"] = [=, &out, &err] {
            require(o_dataset);
            require(o_out);
            PipelineConfig config = *c;
            config.dataset = *dataset;
            config.out = *out_dir;
            config.base_epoch = *base_epoch;
            config.from_epoch = *from_epoch;
            config.to_epoch = *to_epoch;
            config.seed = seed->get();
            config.training.seed = config.seed;
            config.reducer_params.seed = config.seed;
            for (const auto& o : run_pipeline(config, err)) {
                out << json{{"stage", o.stage}, {"status", o.skipped ? "skipped" : "ran"}, {"seconds", o.seconds}}.dump()
                    << '\n';
            }
        };
    }

    auto fail = [&](const json& j, int code) {
        err << j.dump() << '\n';
        return code;
    };

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
        for (CLI::App* sub : app.get_subcommands()) {
            apply_config(*sub, config_paths[sub->get_name()]);
            handlers.at(sub->get_name())();
        }
        return 0;
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        return fail({{"error", "config"}, {"exit_code", 2}, {"message", e.what()}}, static_cast<int>(ExitCode::config));
    } catch (const Error& e) {
        return fail(error_json(e), static_cast<int>(e.exit_code()));
    } catch (const fs::filesystem_error& e) {
        json j = {{"error", "data"}, {"exit_code", 3}, {"message", e.what()}, {"path", e.path1().string()}};
        return fail(j, static_cast<int>(ExitCode::data));
    } catch (const std::exception& e) {
        return fail({{"error", "internal"}, {"exit_code", 1}, {"message", e.what()}}, 1);
    }
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace conceptevo
