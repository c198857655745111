#include "conceptevo/diagnostics.hpp"

#include "conceptevo/error.hpp"
#include "conceptevo/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace conceptevo {

namespace {

constexpr std::size_t kMinEntropySamples = 20;

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace

double vasicek_entropy(std::span<const double> samples) {
    const std::size_t n = samples.size();
    if (n < kMinEntropySamples) {
        throw ConfigError(fmt::format("entropy needs at least {} points, got {}", kMinEntropySamples, n));
    }
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    const auto m = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    const double scale = static_cast<double>(n) / (2.0 * static_cast<double>(m));

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t hi = std::min(n - 1, i + m);
        const std::size_t lo = i >= m ? i - m : 0;
        // A zero spacing contributes log(0) = -inf, which is the honest answer
        // for a sample with repeated values.
        total += std::log(scale * (sorted[hi] - sorted[lo]));
    }
    return total / static_cast<double>(n);
}

DiversityReport differential_entropy(std::span<const Point2> coords) {
    DiversityReport report;
    std::vector<double> column(coords.size());
    for (std::size_t dim = 0; dim < 2; ++dim) {
        for (std::size_t i = 0; i < coords.size(); ++i) column[i] = coords[i][dim];
        report.per_dimension[dim] = vasicek_entropy(column);
    }
    report.mean = (report.per_dimension[0] + report.per_dimension[1]) / 2.0;
    return report;
}

DiversityReport differential_entropy(const Projection2D& projection, std::string_view model, int epoch) {
    std::vector<Point2> subset;
    for (std::size_t i = 0; i < projection.size(); ++i) {
        const auto& key = projection.fitted_on[i];
        if (key.model_id == model && key.epoch == epoch) subset.push_back(projection.coords[i]);
    }
    DiversityReport report = differential_entropy(subset);
    report.model_id = std::string(model);
    report.epoch = epoch;
    return report;
}

DriftReport drift(const EmbeddingSpace& space, std::string_view model, int epoch_a, int epoch_b) {
    DriftReport report{std::string(model), epoch_a, epoch_b, 0, 0.0};
    double total = 0.0;
    for (const auto* entry : space.select(model, epoch_a)) {
        NeuronKey other = entry->first;
        other.epoch = epoch_b;
        const auto it = space.neurons.find(other);
        if (it == space.neurons.end()) continue;
        total += std::sqrt(squared_distance(entry->second.values, it->second.values));
        ++report.matched;
    }
    if (report.matched == 0) {
        throw ConfigError(fmt::format("no neuron of model '{}' is present at both epochs {} and {}", model, epoch_a,
                                      epoch_b));
    }
    report.mean_distance = total / static_cast<double>(report.matched);
    return report;
}

ConceptGroups kmeans_groups(const VectorTable& points, std::size_t k, std::uint64_t seed,
                            std::size_t max_iterations) {
    const std::size_t n = points.rows();
    const std::size_t d = points.dim();
    if (k == 0) throw ConfigError("cluster count must be at least 1");
    if (k > n) throw ConfigError(fmt::format("cannot form {} clusters from {} points", k, n));

    ConceptGroups groups;
    groups.k = k;
    groups.centroids = VectorTable(k, d);
    groups.assignment.assign(n, 0);

    // k-means++ seeding.
    Rng rng = Rng::substream(seed, 0x6b6d6e73);  // "kmns"
    std::vector<char> chosen(n, 0);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::size_t first = rng.uniform_index(n);
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t pick = first;
        if (c > 0) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) total += nearest[i];
            if (total > 0.0) {
                double target = rng.uniform01() * total;
                pick = n;
                for (std::size_t i = 0; i < n; ++i) {
                    if (nearest[i] <= 0.0) continue;
                    pick = i;
                    target -= nearest[i];
                    if (target < 0.0) break;
                }
            } else {
                // Every point coincides with a chosen centre: take an unused index.
                std::vector<std::size_t> unused;
                for (std::size_t i = 0; i < n; ++i) {
                    if (!chosen[i]) unused.push_back(i);
                }
                pick = unused[rng.uniform_index(unused.size())];
            }
        }
        chosen[pick] = 1;
        const auto src = points.row(pick);
        std::copy(src.begin(), src.end(), groups.centroids.row(c).begin());
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(points.row(i), groups.centroids.row(c)));
        }
    }

    std::vector<double> sums(k * d);
    std::vector<std::size_t> counts(k);
    for (std::size_t iter = 0; iter < max_iterations; ++iter) {
        bool changed = false;
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double dist = squared_distance(points.row(i), groups.centroids.row(c));
                if (dist < best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            if (iter == 0 || groups.assignment[i] != best) changed = true;
            groups.assignment[i] = best;
            inertia += best_d;
        }
        groups.inertia_history.push_back(inertia);
        groups.iterations = iter + 1;
        if (!changed) {
            groups.converged = true;
            break;
        }

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto row = points.row(i);
            const std::size_t c = groups.assignment[i];
            for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += row[j];
            ++counts[c];
        }
        // Empty clusters keep their centre, which keeps inertia non-increasing.
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            auto centre = groups.centroids.row(c);
            for (std::size_t j = 0; j < d; ++j) centre[j] = sums[c * d + j] / static_cast<double>(counts[c]);
        }
    }
    return groups;
}

}  // namespace conceptevo
