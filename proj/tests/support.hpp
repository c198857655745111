#pragma once

#include "conceptevo/dataset.hpp"
#include "conceptevo/embedding.hpp"
#include "conceptevo/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <span>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

namespace testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("conceptevo_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

// Neurons in `groups` groups of `per_group`. Each group has `core` shared
// images that every member ranks first, then each neuron has `unique` images
// of its own. With k = core + unique the stimuli overlap core/k within a
// group and nothing across groups.
struct PlantedClusters {
    std::size_t groups = 3;
    std::size_t per_group = 20;
    std::size_t core = 8;
    std::size_t unique = 2;

    std::size_t neurons() const { return groups * per_group; }
    std::size_t images() const { return groups * (core + per_group * unique); }
    std::size_t k() const { return core + unique; }
    std::size_t group_of(std::size_t n) const { return n / per_group; }

    conceptevo::MaxActivationMatrix activations(std::uint64_t seed) const {
        conceptevo::MaxActivationMatrix acts(images(), neurons());
        conceptevo::Rng rng(seed);
        const std::size_t block = core + per_group * unique;
        for (std::size_t n = 0; n < neurons(); ++n) {
            const std::size_t g = group_of(n);
            const std::size_t member = n % per_group;
            for (std::size_t x = 0; x < images(); ++x) {
                const std::size_t gx = x / block;
                const std::size_t offset = x % block;
                float v = static_cast<float>(rng.uniform(0.0, 0.5));
                if (gx == g && offset < core) v = 2.0F + static_cast<float>(rng.uniform(0.0, 0.5));
                if (gx == g && offset >= core && (offset - core) / unique == member) v = 1.5F;
                acts(x, n) = v;
            }
        }
        return acts;
    }
};

// Relative error with an absolute floor, for finite-difference checks.
inline double relative_error(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / scale;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

}  // namespace testing
