#include "conceptevo/pipeline.hpp"

#include "conceptevo/diagnostics.hpp"
#include "conceptevo/error.hpp"
#include "conceptevo/hashing.hpp"
#include "conceptevo/importance.hpp"
#include "conceptevo/pair_sampler.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

#include <fmt/format.h>
#include <json.hpp>

namespace conceptevo {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t Universe::size() const noexcept {
    std::size_t total = 0;
    for (const auto& [layer, count] : layers) total += count;
    return total;
}

std::vector<NeuronKey> Universe::keys() const {
    std::vector<NeuronKey> out;
    out.reserve(size());
    for (const auto& [layer, count] : layers) {
        for (std::size_t n = 0; n < count; ++n) out.push_back({model_id, epoch, layer, static_cast<NeuronId>(n)});
    }
    return out;
}

std::string universe_to_json(const Universe& universe) {
    json j;
    j["model"] = universe.model_id;
    j["epoch"] = universe.epoch;
    j["image_count"] = universe.image_count;
    j["layers"] = json::array();
    for (const auto& [layer, count] : universe.layers) j["layers"].push_back({{"layer", layer}, {"neurons", count}});
    return j.dump(2) + "\n";
}

Universe universe_from_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        Universe u;
        u.model_id = j.at("model").get<std::string>();
        u.epoch = j.at("epoch").get<int>();
        u.image_count = j.at("image_count").get<std::size_t>();
        for (const auto& l : j.at("layers")) {
            u.layers.emplace_back(l.at("layer").get<std::string>(), l.at("neurons").get<std::size_t>());
        }
        return u;
    } catch (const json::exception& e) {
        throw DataError(fmt::format("malformed universe file: {}", e.what()));
    }
}

MaxActivationMatrix read_universe_activations(const DatasetReader& dataset, const Universe& universe) {
    std::vector<MaxActivationMatrix> parts;
    for (const auto& [layer, count] : universe.layers) {
        parts.push_back(dataset.read_max_activations(universe.model_id, universe.epoch, layer));
        if (parts.back().neuron_count() != count) {
            throw DataError(fmt::format("layer '{}' now has {} neurons, universe says {}", layer,
                                        parts.back().neuron_count(), count));
        }
    }
    return concatenate_layers(parts);
}

BaseStimuli compute_base_stimuli(const DatasetReader& dataset, std::string_view model, int epoch,
                                 std::span<const std::string> layers, std::size_t k, std::size_t workers) {
    const ModelEntry* entry = dataset.manifest().find_model(model);
    if (entry == nullptr) throw ConfigError(fmt::format("unknown model '{}'", model));
    if (!entry->has_epoch(epoch)) throw ConfigError(fmt::format("model '{}' has no epoch {}", model, epoch));

    BaseStimuli out;
    out.universe.model_id = std::string(model);
    out.universe.epoch = epoch;
    out.universe.image_count = dataset.manifest().image_count;
    if (layers.empty()) {
        for (const auto& l : entry->layers) out.universe.layers.emplace_back(l.layer_id, l.neuron_count);
    } else {
        for (const auto& name : layers) {
            out.universe.layers.emplace_back(name, dataset.manifest().layer(model, epoch, name).neuron_count);
        }
    }
    out.activations = read_universe_activations(dataset, out.universe);
    out.stimuli = compute_stimuli(out.activations, k, workers);
    return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_atomically(path, text);
}

// ---------------------------------------------------------------------------
// Lock

fs::path PipelineLock::path_for(const fs::path& dataset_root) { return dataset_root / ".conceptevo.lock"; }

PipelineLock::PipelineLock(const fs::path& dataset_root) : path_(path_for(dataset_root)) {
    for (int attempt = 0; attempt < 2; ++attempt) {
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd >= 0) {
            const std::string pid = std::to_string(::getpid()) + "\n";
            const auto written = ::write(fd, pid.data(), pid.size());
            ::close(fd);
            if (written != static_cast<ssize_t>(pid.size())) {
                fs::remove(path_);
                throw DataError(fmt::format("could not write lock file {}", path_.string()));
            }
            return;
        }
        if (errno != EEXIST) throw DataError(fmt::format("could not create lock file {}", path_.string()));

        long holder = 0;
        std::ifstream in(path_);
        in >> holder;
        if (holder > 0 && ::kill(static_cast<pid_t>(holder), 0) != 0 && errno == ESRCH) {
            fs::remove(path_);
            continue;
        }
        throw ConfigError(fmt::format("dataset root is in use by process {} (lock file {})", holder, path_.string()));
    }
    throw ConfigError(fmt::format("could not acquire lock file {}", path_.string()));
}

PipelineLock::~PipelineLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

// ---------------------------------------------------------------------------
// Diagnostics report

std::string diagnostics_report_json(const Projection2D& projection, const EmbeddingSpace& space) {
    json report;
    report["entropy"] = json::array();
    std::set<std::pair<std::string, int>> groups;
    for (const auto& key : projection.fitted_on) groups.emplace(key.model_id, key.epoch);
    for (const auto& [model, epoch] : groups) {
        json entry = {{"model", model}, {"epoch", epoch}};
        try {
            const auto d = differential_entropy(projection, model, epoch);
            entry["entropy"] = d.mean;
            entry["per_dimension"] = d.per_dimension;
        } catch (const ConfigError& e) {
            entry["entropy"] = nullptr;
            entry["note"] = e.what();
        }
        report["entropy"].push_back(std::move(entry));
    }

    report["drift"] = json::array();
    std::map<std::string, std::set<int>> epochs;
    for (const auto& [key, vec] : space.neurons) epochs[key.model_id].insert(key.epoch);
    for (const auto& [model, list] : epochs) {
        const std::vector<int> ordered(list.begin(), list.end());
        for (std::size_t i = 1; i < ordered.size(); ++i) {
            try {
                const auto d = drift(space, model, ordered[i - 1], ordered[i]);
                report["drift"].push_back({{"model", model},
                                           {"from_epoch", d.epoch_a},
                                           {"to_epoch", d.epoch_b},
                                           {"matched", d.matched},
                                           {"mean_distance", d.mean_distance}});
            } catch (const ConfigError&) {
                // Epochs that share no neuron key have nothing to compare.
            }
        }
    }
    return report.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Stages

namespace {

struct Target {
    std::string model;
    int epoch;
};

struct Resolved {
    std::string base_model;
    int base_epoch = 0;
    std::vector<std::string> layers;
    std::vector<Target> targets;
    std::string imp_model;
    int from = 0;
    int to = 0;
    std::vector<std::string> imp_layers;
    std::vector<ClassId> classes;
};

Target parse_target(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos || colon == 0) {
        throw ConfigError(fmt::format("target '{}' must look like model:epoch", text));
    }
    try {
        std::size_t used = 0;
        const int epoch = std::stoi(text.substr(colon + 1), &used);
        if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
        return {text.substr(0, colon), epoch};
    } catch (const std::logic_error&) {
        throw ConfigError(fmt::format("target '{}' has a non-integer epoch", text));
    }
}

const ModelEntry& require_model(const DatasetManifest& manifest, std::string_view id) {
    const ModelEntry* m = manifest.find_model(id);
    if (m == nullptr) throw ConfigError(fmt::format("unknown model '{}'", id));
    return *m;
}

Resolved resolve(const PipelineConfig& config, const DatasetManifest& manifest, std::ostream& warn) {
    Resolved r;
    if (manifest.models.empty()) throw DataError("dataset declares no models");
    r.base_model = config.base_model.empty() ? manifest.models.front().model_id : config.base_model;
    const ModelEntry& base = require_model(manifest, r.base_model);
    r.base_epoch = config.base_epoch.value_or(base.epochs.back());
    if (!base.has_epoch(r.base_epoch)) {
        throw ConfigError(fmt::format("model '{}' has no epoch {}", r.base_model, r.base_epoch));
    }
    if (r.base_epoch != base.epochs.back()) {
        warn << json{{"warning", "base epoch is not the model's last epoch"},
                     {"model", r.base_model},
                     {"epoch", r.base_epoch},
                     {"last_epoch", base.epochs.back()}}
                    .dump()
             << '\n';
    }
    r.layers = config.layers;
    if (r.layers.empty()) {
        for (const auto& l : base.layers) r.layers.push_back(l.layer_id);
    }
    for (const auto& l : r.layers) manifest.layer(r.base_model, r.base_epoch, l);

    if (config.targets.empty()) {
        for (const auto& m : manifest.models) {
            for (int e : m.epochs) {
                if (m.model_id != r.base_model || e != r.base_epoch) r.targets.push_back({m.model_id, e});
            }
        }
    } else {
        for (const auto& t : config.targets) {
            Target target = parse_target(t);
            if (!require_model(manifest, target.model).has_epoch(target.epoch)) {
                throw ConfigError(fmt::format("model '{}' has no epoch {}", target.model, target.epoch));
            }
            r.targets.push_back(std::move(target));
        }
    }

    r.imp_model = config.importance_model.empty() ? r.base_model : config.importance_model;
    const ModelEntry& imp = require_model(manifest, r.imp_model);
    r.from = config.from_epoch.value_or(imp.epochs.front());
    r.to = config.to_epoch.value_or(imp.epochs.back());
    r.imp_layers = config.importance_layers;
    if (r.imp_layers.empty()) {
        for (const auto& l : imp.layers) r.imp_layers.push_back(l.layer_id);
    }
    r.classes = config.classes;
    if (r.classes.empty()) {
        std::set<ClassId> seen;
        for (const auto& [image, cls] : manifest.image_labels) seen.insert(cls);
        r.classes.assign(seen.begin(), seen.end());
    }
    return r;
}

json training_json(const TrainingConfig& t) {
    return {{"dim", t.dim},
            {"lr_neuron", t.lr_neuron},
            {"lr_image", t.lr_image},
            {"negatives", t.negatives},
            {"max_epochs", t.max_epochs},
            {"image_steps", t.image_steps},
            {"convergence_tol", t.convergence_tol},
            {"seed", t.seed}};
}

struct Stage {
    std::string name;
    json params;
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
    std::function<void()> run;
};

std::string stage_key(const Stage& stage) {
    std::uint64_t h = fnv1a64(stage.name);
    h = fnv1a64(stage.params.dump(), h);
    for (const auto& in : stage.inputs) {
        if (!fs::exists(in)) throw DependencyError(in.string());
        h = fnv1a64(to_hex(hash_file(in)), h);
    }
    return to_hex(h);
}

json load_cache(const fs::path& path) {
    if (!fs::exists(path)) return json::object();
    try {
        return json::parse(read_text_file(path));
    } catch (const json::exception&) {
        return json::object();  // a damaged cache only costs a rerun
    }
}

bool outputs_match(const json& entry, const Stage& stage) {
    if (!entry.contains("outputs")) return false;
    const json& recorded = entry["outputs"];
    for (const auto& out : stage.outputs) {
        const auto name = out.filename().string();
        if (!fs::exists(out) || !recorded.contains(name)) return false;
        if (recorded[name].get<std::string>() != to_hex(hash_file(out))) return false;
    }
    return true;
}


std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError(path.string());
    return in;
}

template <class Writer>
void write_stream_atomically(const fs::path& path, Writer&& writer) {
    std::ostringstream buffer;
    writer(buffer);
    write_text_file(path, buffer.str());
}

EmbeddingSpace load_space(const fs::path& path) {
    auto in = open_input(path);
    return read_embeddings_jsonl(in);
}

}  // namespace

std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, std::ostream& warn) {
    config.training.validate();
    std::vector<std::string> requested = config.stages;
    if (requested.empty()) requested = kStageOrder;
    for (const auto& s : requested) {
        if (std::find(kStageOrder.begin(), kStageOrder.end(), s) == kStageOrder.end()) {
            throw ConfigError(fmt::format("unknown stage '{}'", s));
        }
    }
    if (config.out.empty()) throw ConfigError("an output directory is required");

    const DatasetReader dataset(config.dataset);
    const PipelineLock lock(config.dataset);
    const DatasetManifest& manifest = dataset.manifest();
    const Resolved r = resolve(config, manifest, warn);
    const fs::path out = config.out;
    fs::create_directories(out);

    const fs::path manifest_path = layout::manifest(config.dataset);
    const fs::path universe_path = out / "universe.json";
    const fs::path stimuli_path = out / "stimuli.jsonl";
    const fs::path pairs_path = out / "pairs.bin";
    const fs::path pairs_meta = out / "pairs.bin.json";
    const fs::path neuron_emb_path = out / "neuron_emb.jsonl";
    const fs::path neuron_report = out / "neuron_emb_report.json";
    const fs::path image_emb_path = out / "image_emb.jsonl";
    const fs::path image_report = out / "image_emb_report.json";
    const fs::path embeddings_path = out / "embeddings.jsonl";
    const fs::path project_report = out / "project_report.json";
    const fs::path coords_path = out / "coords.csv";
    const fs::path importance_path = out / "importance.jsonl";
    const fs::path diagnostics_path = out / "diagnostics.json";
    const fs::path validate_path = out / "validate.json";

    std::vector<fs::path> base_acts;
    for (const auto& l : r.layers) base_acts.push_back(layout::max_activations(config.dataset, r.base_model, r.base_epoch, l));
    auto with = [](std::vector<fs::path> a, const std::vector<fs::path>& b) {
        a.insert(a.end(), b.begin(), b.end());
        return a;
    };

    std::vector<Stage> stages;

    {
        std::vector<fs::path> all_acts;
        for (const auto& m : manifest.models) {
            for (int e : m.epochs) {
                for (const auto& l : m.layers) all_acts.push_back(layout::max_activations(config.dataset, m.model_id, e, l.layer_id));
            }
        }
        stages.push_back({"validate", json::object(), with({manifest_path}, all_acts), {validate_path}, [&, all_acts] {
                              std::size_t checked = 0;
                              for (const auto& m : manifest.models) {
                                  for (int e : m.epochs) {
                                      for (const auto& l : m.layers) {
                                          dataset.read_max_activations(m.model_id, e, l.layer_id);
                                          ++checked;
                                      }
                                  }
                              }
                              const json report = {{"models", manifest.models.size()},
                                                   {"images", manifest.image_count},
                                                   {"activation_files", checked}};
                              write_text_file(validate_path, report.dump(2) + "\n");
                          }});
    }

    stages.push_back({"stimuli",
                      {{"model", r.base_model}, {"epoch", r.base_epoch}, {"layers", r.layers}, {"k", config.k}},
                      with({manifest_path}, base_acts),
                      {stimuli_path, universe_path},
                      [&] {
                          const BaseStimuli base =
                              compute_base_stimuli(dataset, r.base_model, r.base_epoch, r.layers, config.k, config.workers);
                          write_stream_atomically(stimuli_path, [&](std::ostream& os) { write_stimuli_jsonl(os, base.stimuli); });
                          write_text_file(universe_path, universe_to_json(base.universe));
                      }});

    stages.push_back({"pairs",
                      {{"rounds", config.rounds}, {"seed", config.seed}},
                      {stimuli_path, universe_path},
                      {pairs_path, pairs_meta},
                      [&] {
                          const Universe u = universe_from_json(read_text_file(universe_path));
                          auto in = open_input(stimuli_path);
                          const StimuliTable stimuli = read_stimuli_jsonl(in, u.image_count);
                          const PairMultiset pairs =
                              sample_coactivated_neuron_pairs(stimuli, config.rounds, config.seed, config.workers);
                          write_pairs(pairs_path, pairs);
                      }});

    stages.push_back({"neuron-emb",
                      {{"training", training_json(config.training)}},
                      {pairs_path, pairs_meta, universe_path},
                      {neuron_emb_path, neuron_report},
                      [&] {
                          const Universe u = universe_from_json(read_text_file(universe_path));
                          const PairMultiset pairs = read_pairs(pairs_path);
                          const NeuronTraining trained = train_neuron_vectors(pairs, config.training, u.size());
                          EmbeddingSpace space;
                          space.dim = config.training.dim;
                          const auto keys = u.keys();
                          for (std::size_t i = 0; i < keys.size(); ++i) {
                              const auto row = trained.vectors.row(i);
                              space.add_neuron(keys[i], {row.begin(), row.end()}, Provenance::base_trained);
                          }
                          write_stream_atomically(neuron_emb_path, [&](std::ostream& os) { write_embeddings_jsonl(os, space); });
                          const json report = {{"epochs_run", trained.epochs_run},
                                               {"converged", trained.converged},
                                               {"objective_history", trained.objective_history}};
                          write_text_file(neuron_report, report.dump(2) + "\n");
                      }});

    stages.push_back({"image-emb",
                      {{"training", training_json(config.training)}, {"k", config.k}, {"rounds", config.rounds},
                       {"seed", config.seed}},
                      with({neuron_emb_path, stimuli_path, universe_path}, base_acts),
                      {image_emb_path, image_report},
                      [&] {
                          const Universe u = universe_from_json(read_text_file(universe_path));
                          auto in = open_input(stimuli_path);
                          const StimuliTable stimuli = read_stimuli_jsonl(in, u.image_count);
                          const EmbeddingSpace base = load_space(neuron_emb_path);
                          std::vector<double> j2;
                          EmbeddingSpace space = train_image_embeddings(base, u.keys(), stimuli, config.training, &j2);

                          const MaxActivationMatrix acts = read_universe_activations(dataset, u);
                          const TopNeuronsPerImage top = compute_top_neurons_per_image(acts, config.k, config.workers);
                          const PairMultiset image_pairs =
                              sample_costimulating_image_pairs(top, config.rounds, config.seed, config.workers);
                          ImageVectors vectors = image_vectors_of(space, u.image_count);
                          const UncoveredReport uncovered = embed_uncovered_images(image_pairs, vectors, config.training);
                          space.images.clear();
                          space.add_images(vectors);

                          write_stream_atomically(image_emb_path, [&](std::ostream& os) { write_embeddings_jsonl(os, space); });
                          const json report = {{"j2_initial", j2.empty() ? 0.0 : j2.front()},
                                               {"j2_final", j2.empty() ? 0.0 : j2.back()},
                                               {"j2_steps", j2.empty() ? 0 : j2.size() - 1},
                                               {"indirect", uncovered.embedded.size()},
                                               {"unrepresentable_images", uncovered.unrepresentable}};
                          write_text_file(image_report, report.dump(2) + "\n");
                      }});

    {
        std::vector<fs::path> target_acts;
        json targets = json::array();
        for (const auto& t : r.targets) {
            targets.push_back(fmt::format("{}:{}", t.model, t.epoch));
            for (const auto& l : require_model(manifest, t.model).layers) {
                target_acts.push_back(layout::max_activations(config.dataset, t.model, t.epoch, l.layer_id));
            }
        }
        stages.push_back({"project",
                          {{"targets", targets}, {"k", config.k}},
                          with({image_emb_path, manifest_path}, target_acts),
                          {embeddings_path, project_report},
                          [&] {
                              EmbeddingSpace space = load_space(image_emb_path);
                              const ImageVectors vectors = image_vectors_of(space, manifest.image_count);
                              json unrepresentable = json::array();
                              for (const auto& t : r.targets) {
                                  ModelProjection projected = project_model(dataset, t.model, t.epoch, vectors, config.k);
                                  for (auto& [key, vec] : projected.neurons) space.add_neuron(key, vec.values, vec.provenance);
                                  for (const auto& key : projected.warnings) {
                                      const json w = {{"model", key.model_id},
                                                      {"epoch", key.epoch},
                                                      {"layer", key.layer_id},
                                                      {"neuron", key.neuron}};
                                      warn << json{{"warning", "unrepresentable neuron"}, {"neuron", w}}.dump() << '\n';
                                      unrepresentable.push_back(w);
                                  }
                              }
                              write_stream_atomically(embeddings_path,
                                                      [&](std::ostream& os) { write_embeddings_jsonl(os, space); });
                              const json report = {{"targets", r.targets.size()}, {"unrepresentable", unrepresentable}};
                              write_text_file(project_report, report.dump(2) + "\n");
                          }});
    }

    stages.push_back({"reduce-2d",
                      {{"reducer", config.reducer},
                       {"neighbors", config.reducer_params.neighbors},
                       {"min_dist", config.reducer_params.min_dist},
                       {"spread", config.reducer_params.spread},
                       {"epochs", config.reducer_params.epochs},
                       {"seed", config.reducer_params.seed}},
                      {embeddings_path},
                      {coords_path},
                      [&] {
                          const EmbeddingSpace space = load_space(embeddings_path);
                          const auto reducer = make_reducer(config.reducer, config.reducer_params);
                          const Projection2D projection = fit_reduce(space, [](const NeuronKey&) { return true; }, *reducer);
                          write_stream_atomically(coords_path, [&](std::ostream& os) { write_coords_csv(os, projection); });
                      }});

    {
        std::vector<fs::path> tensors;
        for (const auto& l : r.imp_layers) {
            for (ClassId c : r.classes) {
                tensors.push_back(layout::tensor(config.dataset, TensorKind::activation_maps, r.imp_model, r.from, l, c));
                tensors.push_back(layout::tensor(config.dataset, TensorKind::activation_maps, r.imp_model, r.to, l, c));
                tensors.push_back(layout::tensor(config.dataset, TensorKind::logit_gradients, r.imp_model, r.from, l, c));
            }
        }
        stages.push_back({"importance",
                          {{"model", r.imp_model},
                           {"from", r.from},
                           {"to", r.to},
                           {"layers", r.imp_layers},
                           {"classes", r.classes},
                           {"sample", config.class_sample},
                           {"seed", config.seed}},
                          with({manifest_path}, tensors),
                          {importance_path},
                          [&] {
                              std::vector<EvolutionImportance> all;
                              for (ClassId c : r.classes) {
                                  for (const auto& l : r.imp_layers) {
                                      auto scores = class_importance_pipeline(dataset, r.imp_model, r.from, r.to, l, c,
                                                                              config.class_sample, config.seed);
                                      all.insert(all.end(), scores.begin(), scores.end());
                                  }
                              }
                              write_stream_atomically(importance_path,
                                                      [&](std::ostream& os) { write_importance_jsonl(os, all); });
                          }});
    }

    {
        std::vector<fs::path> plans;
        for (ClassId c : r.classes) plans.push_back(out / fmt::format("plan_{}.json", c));
        stages.push_back({"revert-plan", {{"seed", config.seed}, {"classes", r.classes}}, {importance_path}, plans, [&, plans] {
                              auto in = open_input(importance_path);
                              const auto scores = read_importance_jsonl(in);
                              for (std::size_t i = 0; i < r.classes.size(); ++i) {
                                  std::vector<EvolutionImportance> subset;
                                  for (const auto& s : scores) {
                                      if (s.class_id == r.classes[i]) subset.push_back(s);
                                  }
                                  write_text_file(plans[i], revert_plan_to_json(make_revert_plan(subset, config.seed)));
                              }
                          }});
    }

    stages.push_back({"diagnostics", json::object(), {coords_path, embeddings_path}, {diagnostics_path}, [&] {
                          auto in = open_input(coords_path);
                          const Projection2D projection = read_coords_csv(in);
                          write_text_file(diagnostics_path,
                                          diagnostics_report_json(projection, load_space(embeddings_path)));
                      }});

    const fs::path cache_path = out / ".stage_cache.json";
    json cache = load_cache(cache_path);
    std::vector<StageOutcome> outcomes;
    for (auto& stage : stages) {
        if (std::find(requested.begin(), requested.end(), stage.name) == requested.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        const std::string key = stage_key(stage);
        const bool fresh = cache.contains(stage.name) && cache[stage.name].value("key", "") == key &&
                           outputs_match(cache[stage.name], stage);
        if (!fresh) {
            stage.run();
            json entry = {{"key", key}, {"outputs", json::object()}};
            for (const auto& o : stage.outputs) entry["outputs"][o.filename().string()] = to_hex(hash_file(o));
            cache[stage.name] = std::move(entry);
            write_text_file(cache_path, cache.dump(2) + "\n");
        }
        const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
        outcomes.push_back({stage.name, fresh, took.count()});
    }
    return outcomes;
}

}  // namespace conceptevo
