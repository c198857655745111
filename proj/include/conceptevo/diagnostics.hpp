#pragma once

#include "conceptevo/embedding.hpp"
#include "conceptevo/projection2d.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace conceptevo {

/// Vasicek m-spacing estimate of the differential entropy (nats) of a 1D
/// sample, with window m = ceil(sqrt(n)) and order statistics clamped at the
/// ends. Needs at least 20 samples.
double vasicek_entropy(std::span<const double> samples);

struct DiversityReport {
    std::string model_id;
    int epoch = 0;
    std::array<double, 2> per_dimension{};
    double mean = 0.0;
};

/// Entropy of each 2D coordinate, averaged over both.
DiversityReport differential_entropy(std::span<const Point2> coords);

/// Entropy of the coordinates of one (model, epoch) within a joint projection.
DiversityReport differential_entropy(const Projection2D& projection, std::string_view model, int epoch);

struct DriftReport {
    std::string model_id;
    int epoch_a = 0;
    int epoch_b = 0;
    std::size_t matched = 0;
    double mean_distance = 0.0;
};

/// Mean Euclidean displacement of neurons (same layer and id) present at both
/// epochs. Throws ConfigError when nothing matches.
DriftReport drift(const EmbeddingSpace& space, std::string_view model, int epoch_a, int epoch_b);

struct ConceptGroups {
    std::size_t k = 0;
    std::vector<std::size_t> assignment;  // per input point
    VectorTable centroids;
    std::vector<double> inertia_history;  // after each assignment step
    std::size_t iterations = 0;
    bool converged = false;

    double inertia() const noexcept { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

/// Lloyd's algorithm with seeded k-means++ initialisation. Stops when no
/// assignment changes or after `max_iterations`.
ConceptGroups kmeans_groups(const VectorTable& points, std::size_t k, std::uint64_t seed,
                            std::size_t max_iterations = 300);

}  // namespace conceptevo
