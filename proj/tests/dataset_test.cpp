#include "conceptevo/dataset.hpp"
#include "conceptevo/error.hpp"
#include "conceptevo/rng.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

using namespace conceptevo;
using testing::TempDir;

namespace {

DatasetManifest tiny_manifest(std::size_t images, std::size_t neurons, std::size_t h = 1, std::size_t w = 1) {
    DatasetManifest m;
    m.image_count = images;
    for (std::size_t x = 0; x < images; ++x) m.image_labels[static_cast<ImageId>(x)] = static_cast<ClassId>(x % 2);
    m.class_names = {{0, "cat"}, {1, "dog"}};
    m.models.push_back({"m", {1}, {{"l", neurons, h, w}}});
    return m;
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

MaxActivationMatrix random_matrix(std::size_t images, std::size_t neurons, std::uint64_t seed) {
    MaxActivationMatrix m(images, neurons);
    Rng rng(seed);
    for (auto& v : m.values()) v = static_cast<float>(rng.uniform(-100.0, 100.0));
    return m;
}

}  // namespace

TEST_CASE("a 3x2 matrix is a 24-byte row-major little-endian file") {
    TempDir dir;
    const auto manifest = tiny_manifest(3, 2);
    MaxActivationMatrix acts(3, 2, {1, 0, 0, 1, 2, 2});
    const std::vector<NamedTensor> tensors{{TensorKind::max_activations, "m", 1, "l", 0, acts, {}}};
    write_dataset(dir.path(), manifest, tensors);

    const auto bytes = file_bytes(layout::max_activations(dir.path(), "m", 1, "l"));
    REQUIRE(bytes.size() == 24);
    const unsigned char one[4] = {0x00, 0x00, 0x80, 0x3f};
    CHECK(std::memcmp(bytes.data(), one, 4) == 0);

    const DatasetReader reader(dir.path());
    CHECK(reader.read_max_activations("m", 1, "l") == acts);
    CHECK(read_max_activations(dir.path(), "m", 1, "l") == acts);
}

TEST_CASE("empty model list is a valid dataset with no tensor files") {
    TempDir dir;
    DatasetManifest m;
    m.image_count = 2;
    m.image_labels = {{0, 0}, {1, 0}};
    write_dataset(dir.path(), m, {});
    CHECK(std::filesystem::exists(layout::manifest(dir.path())));
    CHECK_FALSE(std::filesystem::exists(dir.path() / "activations"));
    const DatasetReader reader(dir.path());
    CHECK(reader.manifest() == m);
}

TEST_CASE("random round trips reproduce every bit") {
    TempDir dir;
    const std::pair<std::size_t, std::size_t> shapes[] = {{100, 50}, {1, 1},  {7, 3},  {33, 1}, {1, 40},
                                                          {64, 64},  {5, 17}, {2, 99}, {18, 6}, {250, 4}};
    std::uint64_t seed = 0;
    for (const auto& [images, neurons] : shapes) {
        const auto root = dir.path() / std::to_string(seed);
        const auto manifest = tiny_manifest(images, neurons);
        const auto acts = random_matrix(images, neurons, ++seed);
        const std::vector<NamedTensor> tensors{{TensorKind::max_activations, "m", 1, "l", 0, acts, {}}};
        write_dataset(root, manifest, tensors);
        const auto back = DatasetReader(root).read_max_activations("m", 1, "l");
        REQUIRE(back.values().size() == acts.values().size());
        CHECK(std::memcmp(back.values().data(), acts.values().data(), acts.values().size() * sizeof(float)) == 0);
    }
}

TEST_CASE("manifest json round trip") {
    DatasetManifest m = tiny_manifest(4, 3, 2, 5);
    m.models.push_back({"other", {0, 5, 10}, {{"a", 1, 1, 1}, {"b", 2, 3, 4}}});
    CHECK(manifest_from_json(manifest_to_json(m)) == m);
}

TEST_CASE("truncated file raises a corrupt-file error naming both sizes") {
    TempDir dir;
    const std::vector<NamedTensor> tensors{
        {TensorKind::max_activations, "m", 1, "l", 0, MaxActivationMatrix(3, 2, {1, 0, 0, 1, 2, 2}), {}}};
    write_dataset(dir.path(), tiny_manifest(3, 2), tensors);
    const auto path = layout::max_activations(dir.path(), "m", 1, "l");
    std::filesystem::resize_file(path, 23);
    try {
        DatasetReader(dir.path()).read_max_activations("m", 1, "l");
        FAIL("expected a corrupt-file error");
    } catch (const CorruptFileError& e) {
        CHECK(e.expected_bytes() == 24);
        CHECK(e.actual_bytes() == 23);
        CHECK(std::string(e.what()).find("24") != std::string::npos);
        CHECK(std::string(e.what()).find("23") != std::string::npos);
        CHECK(e.exit_code() == ExitCode::data);
    }
}

TEST_CASE("a float64 export is rejected, not converted") {
    TempDir dir;
    const std::vector<NamedTensor> tensors{
        {TensorKind::max_activations, "m", 1, "l", 0, MaxActivationMatrix(3, 2, {1, 0, 0, 1, 2, 2}), {}}};
    write_dataset(dir.path(), tiny_manifest(3, 2), tensors);
    const auto path = layout::max_activations(dir.path(), "m", 1, "l");
    std::filesystem::resize_file(path, 48);
    CHECK_THROWS_AS(DatasetReader(dir.path()).read_max_activations("m", 1, "l"), CorruptFileError);
}

TEST_CASE("NaN and infinity are rejected with their position") {
    TempDir dir;
    MaxActivationMatrix acts(3, 2, {1, 0, 0, 1, 2, 2});
    acts(2, 1) = std::numeric_limits<float>::quiet_NaN();
    // Write the bytes directly: write_dataset is not the thing under test.
    write_dataset(dir.path(), tiny_manifest(3, 2),
                  std::vector<NamedTensor>{{TensorKind::max_activations, "m", 1, "l", 0, MaxActivationMatrix(3, 2), {}}});
    const auto path = layout::max_activations(dir.path(), "m", 1, "l");
    {
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(acts.values().data()), 24);
    }
    try {
        DatasetReader(dir.path()).read_max_activations("m", 1, "l");
        FAIL("expected a data-quality error");
    } catch (const DataQualityError& e) {
        CHECK(e.image() == 2);
        CHECK(e.neuron() == 1);
    }

    acts(2, 1) = std::numeric_limits<float>::infinity();
    {
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(acts.values().data()), 24);
    }
    CHECK_THROWS_AS(DatasetReader(dir.path()).read_max_activations("m", 1, "l"), DataQualityError);
}

TEST_CASE("shape mismatch is rejected before anything is written") {
    TempDir dir;
    const auto root = dir.path() / "ds";
    const std::vector<NamedTensor> tensors{
        {TensorKind::max_activations, "m", 1, "l", 0, MaxActivationMatrix(3, 2), {}},
        {TensorKind::max_activations, "m", 1, "l", 0, MaxActivationMatrix(3, 5), {}},
    };
    CHECK_THROWS_AS(write_dataset(root, tiny_manifest(3, 2), tensors), ConfigError);
    CHECK_FALSE(std::filesystem::exists(root / "manifest.json"));
    CHECK_FALSE(std::filesystem::exists(layout::max_activations(root, "m", 1, "l")));
}

TEST_CASE("tensors for undeclared model, epoch or layer are rejected") {
    TempDir dir;
    for (const auto& [model, epoch, layer] :
         std::vector<std::tuple<std::string, int, std::string>>{{"x", 1, "l"}, {"m", 2, "l"}, {"m", 1, "z"}}) {
        const std::vector<NamedTensor> tensors{
            {TensorKind::max_activations, model, epoch, layer, 0, MaxActivationMatrix(3, 2), {}}};
        CHECK_THROWS_AS(write_dataset(dir.path() / "ds", tiny_manifest(3, 2), tensors), ConfigError);
    }
}

TEST_CASE("manifest invariants") {
    SUBCASE("epochs must be strictly ascending") {
        auto m = tiny_manifest(2, 1);
        m.models[0].epochs = {1, 1};
        CHECK_THROWS_AS(m.validate(), DataError);
        m.models[0].epochs = {2, 1};
        CHECK_THROWS_AS(m.validate(), DataError);
    }
    SUBCASE("layer names are unique within a model") {
        auto m = tiny_manifest(2, 1);
        m.models[0].layers.push_back(m.models[0].layers[0]);
        CHECK_THROWS_AS(m.validate(), DataError);
    }
    SUBCASE("dimensions are at least one") {
        auto m = tiny_manifest(2, 1);
        m.models[0].layers[0].map_width = 0;
        CHECK_THROWS_AS(m.validate(), DataError);
    }
    SUBCASE("image ids are dense") {
        auto m = tiny_manifest(3, 1);
        m.image_labels.erase(1);
        m.image_labels[7] = 0;
        CHECK_THROWS_AS(m.validate(), DataError);
    }
    SUBCASE("a model appears once") {
        auto m = tiny_manifest(2, 1);
        m.models.push_back(m.models[0]);
        CHECK_THROWS_AS(m.validate(), DataError);
    }
    SUBCASE("ids cannot escape the dataset root") {
        auto m = tiny_manifest(2, 1);
        m.models[0].model_id = "../evil";
        CHECK_THROWS_AS(m.validate(), DataError);
    }
    SUBCASE("schema version is checked") {
        auto m = tiny_manifest(2, 1);
        m.schema_version = 2;
        CHECK_THROWS_AS(m.validate(), DataError);
    }
}

TEST_CASE("activation maps and gradients round trip with their sidecar index") {
    TempDir dir;
    const auto manifest = tiny_manifest(6, 3, 2, 2);
    const std::vector<ImageId> ids = manifest.images_of_class(1);
    REQUIRE(ids == std::vector<ImageId>{1, 3, 5});
    LayerTensor maps(ids, 2, 2, 3);
    LayerTensor grads(ids, 2, 2, 3);
    Rng rng(4);
    for (auto& v : maps.values()) v = static_cast<float>(rng.uniform(0, 1));
    for (auto& v : grads.values()) v = static_cast<float>(rng.uniform(-1, 1));
    const std::vector<NamedTensor> tensors{
        {TensorKind::max_activations, "m", 1, "l", 0, random_matrix(6, 3, 2), {}},
        {TensorKind::activation_maps, "m", 1, "l", 1, {}, maps},
        {TensorKind::logit_gradients, "m", 1, "l", 1, {}, grads},
    };
    write_dataset(dir.path(), manifest, tensors);
    CHECK(std::filesystem::file_size(layout::tensor(dir.path(), TensorKind::activation_maps, "m", 1, "l", 1)) ==
          3 * 2 * 2 * 3 * 4);

    const DatasetReader reader(dir.path());
    const LayerTensor m2 = reader.read_activation_maps("m", 1, "l", 1);
    CHECK(m2 == maps);
    CHECK(reader.read_logit_gradients("m", 1, "l", 1) == grads);
    CHECK(m2.index_of(5) == std::optional<std::size_t>(2));
    CHECK_FALSE(m2.index_of(0).has_value());

    const PlaneView plane = m2.plane(1, 2);
    CHECK(plane.size() == 4);
    CHECK(plane.at(1, 0) == maps.at(1, 1, 0, 2));
    CHECK(plane[3] == maps.at(1, 1, 1, 2));
}

TEST_CASE("missing tensors raise a dependency error naming the path") {
    TempDir dir;
    write_dataset(dir.path(), tiny_manifest(4, 2, 2, 2), {});
    const DatasetReader reader(dir.path());
    const auto expected = layout::tensor(dir.path(), TensorKind::logit_gradients, "m", 1, "l", 0).string();
    try {
        reader.read_logit_gradients("m", 1, "l", 0);
        FAIL("expected a dependency error");
    } catch (const DependencyError& e) {
        CHECK(e.path() == expected);
        CHECK(e.exit_code() == ExitCode::dependency);
    }
    CHECK_THROWS_AS(reader.read_max_activations("m", 1, "l"), DependencyError);
    CHECK_THROWS_AS(DatasetReader(dir.path() / "nowhere"), DependencyError);
}

TEST_CASE("undeclared reads are configuration errors") {
    TempDir dir;
    write_dataset(dir.path(), tiny_manifest(4, 2), {});
    const DatasetReader reader(dir.path());
    CHECK_THROWS_AS(reader.read_max_activations("nope", 1, "l"), ConfigError);
    CHECK_THROWS_AS(reader.read_max_activations("m", 9, "l"), ConfigError);
    CHECK_THROWS_AS(reader.read_max_activations("m", 1, "zz"), ConfigError);
}

TEST_CASE("incremental writer produces the same files as write_dataset") {
    TempDir dir;
    const auto manifest = tiny_manifest(5, 4);
    const auto acts = random_matrix(5, 4, 8);
    write_dataset(dir.path() / "a", manifest,
                  std::vector<NamedTensor>{{TensorKind::max_activations, "m", 1, "l", 0, acts, {}}});
    const DatasetWriter writer(dir.path() / "b", manifest);
    writer.write_max_activations("m", 1, "l", acts);
    CHECK(file_bytes(layout::max_activations(dir.path() / "a", "m", 1, "l")) ==
          file_bytes(layout::max_activations(dir.path() / "b", "m", 1, "l")));
    CHECK(file_bytes(layout::manifest(dir.path() / "a")) == file_bytes(layout::manifest(dir.path() / "b")));
    CHECK_THROWS_AS(writer.write_max_activations("m", 1, "l", MaxActivationMatrix(4, 4)), ConfigError);
}

TEST_CASE("no temporary files remain after a successful write") {
    TempDir dir;
    write_dataset(dir.path(), tiny_manifest(3, 2),
                  std::vector<NamedTensor>{{TensorKind::max_activations, "m", 1, "l", 0, MaxActivationMatrix(3, 2), {}}});
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir.path())) {
        CHECK(entry.path().extension() != ".tmp");
    }
}
