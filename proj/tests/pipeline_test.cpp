#include "conceptevo/error.hpp"
#include "conceptevo/hashing.hpp"
#include "conceptevo/pipeline.hpp"
#include "conceptevo/synthetic.hpp"

#include "support.hpp"

#include <doctest.h>

#include <chrono>
#include <fstream>
#include <sstream>

using namespace conceptevo;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

SyntheticSpec small_spec() {
    auto spec = SyntheticSpec::standard();
    spec.images = 120;
    return spec;
}

PipelineConfig small_config(const fs::path& dataset, const fs::path& out) {
    PipelineConfig c;
    c.dataset = dataset;
    c.out = out;
    c.rounds = 20;
    c.training.dim = 8;
    c.training.max_epochs = 5;
    c.training.image_steps = 300;
    c.reducer = "linear";
    c.class_sample = 16;
    return c;
}

std::map<std::string, std::string> artifact_hashes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name == ".stage_cache.json") continue;
        out[name] = to_hex(hash_file(e.path()));
    }
    return out;
}

}  // namespace

TEST_CASE("universe json round trip") {
    Universe u{"m", 4, {{"conv1", 3}, {"conv2", 2}}, 17};
    CHECK(u.size() == 5);
    const auto keys = u.keys();
    REQUIRE(keys.size() == 5);
    CHECK(keys[3] == NeuronKey{"m", 4, "conv2", 0});
    CHECK(universe_from_json(universe_to_json(u)) == u);
    CHECK_THROWS_AS(universe_from_json("[1]"), DataError);
}

TEST_CASE("full pipeline runs, caches, and is reproducible") {
    TempDir dir;
    const auto data = dir / "data";
    write_synthetic(data, small_spec());
    std::ostringstream warn;

    const auto start = std::chrono::steady_clock::now();
    const auto first = run_pipeline(small_config(data, dir / "out1"), warn);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(seconds < 60.0);
    REQUIRE(first.size() == kStageOrder.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(first[i].stage == kStageOrder[i]);
        CHECK_FALSE(first[i].skipped);
    }
    for (const char* name : {"universe.json", "stimuli.jsonl", "pairs.bin", "neuron_emb.jsonl", "image_emb.jsonl",
                             "embeddings.jsonl", "coords.csv", "importance.jsonl", "plan_0.json", "diagnostics.json"}) {
        CHECK_MESSAGE(fs::exists(dir / "out1" / name), name);
    }
    CHECK_FALSE(fs::exists(PipelineLock::path_for(data)));

    SUBCASE("a second run skips every stage") {
        const auto again = run_pipeline(small_config(data, dir / "out1"), warn);
        for (const auto& o : again) CHECK_MESSAGE(o.skipped, o.stage);
    }
    SUBCASE("changing a parameter reruns that stage and what follows") {
        auto c = small_config(data, dir / "out1");
        c.rounds = 21;
        const auto again = run_pipeline(c, warn);
        CHECK(again[1].skipped);  // stimuli
        CHECK_FALSE(again[2].skipped);  // pairs
    }
    SUBCASE("a damaged output is rebuilt") {
        std::ofstream(dir / "out1" / "coords.csv") << "junk";
        auto c = small_config(data, dir / "out1");
        c.stages = {"reduce-2d"};
        const auto again = run_pipeline(c, warn);
        REQUIRE(again.size() == 1);
        CHECK_FALSE(again[0].skipped);
    }
    SUBCASE("a fresh directory gets byte-identical artifacts") {
        run_pipeline(small_config(data, dir / "out2"), warn);
        CHECK(artifact_hashes(dir / "out1") == artifact_hashes(dir / "out2"));
    }
}

TEST_CASE("importance stage with a missing gradient file names the path") {
    TempDir dir;
    const auto data = dir / "data";
    write_synthetic(data, small_spec());
    const auto missing = layout::tensor(data, TensorKind::logit_gradients, "toy", 1, "conv1", 0);
    fs::remove(missing);
    auto c = small_config(data, dir / "out");
    c.stages = {"importance"};
    std::ostringstream warn;
    try {
        run_pipeline(c, warn);
        FAIL("expected a dependency error");
    } catch (const DependencyError& e) {
        CHECK(e.path() == missing.string());
    }
    CHECK_FALSE(fs::exists(PipelineLock::path_for(data)));
}

TEST_CASE("unknown stages and unknown targets are config errors") {
    TempDir dir;
    write_synthetic(dir / "data", small_spec());
    std::ostringstream warn;
    auto c = small_config(dir / "data", dir / "out");
    c.stages = {"bogus"};
    CHECK_THROWS_AS(run_pipeline(c, warn), ConfigError);
    c.stages = {};
    c.targets = {"nope:1"};
    CHECK_THROWS_AS(run_pipeline(c, warn), ConfigError);
}

TEST_CASE("dataset lock") {
    TempDir dir;
    SUBCASE("a held lock refuses a second holder and is released") {
        {
            PipelineLock held(dir.path());
            CHECK(fs::exists(PipelineLock::path_for(dir.path())));
            CHECK_THROWS_AS(PipelineLock(dir.path()), ConfigError);
        }
        CHECK_FALSE(fs::exists(PipelineLock::path_for(dir.path())));
        CHECK_NOTHROW(PipelineLock(dir.path()));
    }
    SUBCASE("a lock left by a finished process is taken over") {
        std::ofstream(PipelineLock::path_for(dir.path())) << "2147483646\n";
        CHECK_NOTHROW(PipelineLock(dir.path()));
    }
}
