#pragma once

#include "conceptevo/embedding.hpp"

#include <array>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace conceptevo {

using Point2 = std::array<double, 2>;

struct ReducerParams {
    std::size_t neighbors = 15;
    double min_dist = 0.1;
    double spread = 1.0;
    std::uint64_t seed = 42;
    std::size_t epochs = 0;  // 0 = choose from the point count
};

/// Maps n points of any dimension to n 2D points. Implementations must be
/// deterministic for a fixed seed.
class Reducer {
public:
    virtual ~Reducer() = default;
    virtual std::vector<Point2> fit(const VectorTable& points) const = 0;
    virtual std::string name() const = 0;
    virtual ReducerParams params() const { return {}; }
};

/// Projection onto the two leading principal axes. Each axis is oriented so
/// that its largest-magnitude loading is positive.
class PrincipalAxesReducer final : public Reducer {
public:
    std::vector<Point2> fit(const VectorTable& points) const override;
    std::string name() const override { return "linear"; }
};

/// Uniform manifold approximation and projection: exact k-nearest-neighbour
/// graph, fuzzy union of smoothed memberships, and a negative-sampling SGD
/// layout initialised from the principal axes. Identical input vectors are
/// laid out once and share one coordinate.
class UmapReducer final : public Reducer {
public:
    explicit UmapReducer(ReducerParams params = {}) : params_(params) {}
    std::vector<Point2> fit(const VectorTable& points) const override;
    std::string name() const override { return "umap"; }
    ReducerParams params() const override { return params_; }

private:
    std::vector<Point2> fit_distinct(const VectorTable& points) const;

    ReducerParams params_;
};

/// Fits the curve 1 / (1 + a d^(2b)) to the min_dist/spread target; returns {a, b}.
std::array<double, 2> fit_umap_curve(double spread, double min_dist);

std::unique_ptr<Reducer> make_reducer(std::string_view name, const ReducerParams& params);

struct Projection2D {
    std::string reducer;
    ReducerParams params;
    std::vector<NeuronKey> fitted_on;
    std::vector<Point2> coords;

    std::size_t size() const noexcept { return fitted_on.size(); }
};

using EntityFilter = std::function<bool(const NeuronKey&)>;

/// Fits ONE reducer on every neuron vector that passes `filter`, across all
/// models and epochs at once, so that shared structure lands in one aligned
/// frame. There is deliberately no per-epoch variant. Needs >= 10 entities.
Projection2D fit_reduce(const EmbeddingSpace& space, const EntityFilter& filter, const Reducer& reducer);

/// CSV with header `model,epoch,layer,neuron,x,y`.
void write_coords_csv(std::ostream& out, const Projection2D& projection);
Projection2D read_coords_csv(std::istream& in);

}  // namespace conceptevo
