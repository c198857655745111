#include "conceptevo/projection2d.hpp"

#include "conceptevo/error.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include <Eigen/Dense>
#include <fmt/format.h>

namespace conceptevo {

namespace {

constexpr std::size_t kMinEntities = 10;

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, ptr};
}

}  // namespace

std::vector<Point2> PrincipalAxesReducer::fit(const VectorTable& points) const {
    const auto n = static_cast<Eigen::Index>(points.rows());
    const auto d = static_cast<Eigen::Index>(points.dim());
    std::vector<Point2> out(points.rows(), Point2{0.0, 0.0});
    if (n == 0) return out;

    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto row = points.row(static_cast<std::size_t>(i));
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = row[static_cast<std::size_t>(j)];
    }
    x.rowwise() -= x.colwise().mean();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
    Eigen::MatrixXd axes = svd.matrixV().leftCols(std::min<Eigen::Index>(2, svd.matrixV().cols()));
    for (Eigen::Index c = 0; c < axes.cols(); ++c) {
        Eigen::Index arg = 0;
        axes.col(c).cwiseAbs().maxCoeff(&arg);
        if (axes(arg, c) < 0) axes.col(c) *= -1.0;
    }
    const Eigen::MatrixXd projected = x * axes;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index c = 0; c < projected.cols(); ++c) out[static_cast<std::size_t>(i)][c] = projected(i, c);
    }
    return out;
}

std::unique_ptr<Reducer> make_reducer(std::string_view name, const ReducerParams& params) {
    if (name == "umap") return std::make_unique<UmapReducer>(params);
    if (name == "linear") return std::make_unique<PrincipalAxesReducer>();
    throw ConfigError(fmt::format("unknown reducer '{}' (expected umap or linear)", name));
}

Projection2D fit_reduce(const EmbeddingSpace& space, const EntityFilter& filter, const Reducer& reducer) {
    Projection2D result;
    result.reducer = reducer.name();
    result.params = reducer.params();
    for (const auto& [key, vec] : space.neurons) {
        if (!filter || filter(key)) result.fitted_on.push_back(key);
    }
    if (result.fitted_on.size() < kMinEntities) {
        throw ConfigError(fmt::format("2D reduction needs at least {} entities, got {}", kMinEntities,
                                      result.fitted_on.size()));
    }
    VectorTable points(result.fitted_on.size(), space.dim);
    for (std::size_t i = 0; i < result.fitted_on.size(); ++i) {
        const auto& values = space.neurons.at(result.fitted_on[i]).values;
        std::copy(values.begin(), values.end(), points.row(i).begin());
    }
    result.coords = reducer.fit(points);
    for (const auto& p : result.coords) {
        if (!std::isfinite(p[0]) || !std::isfinite(p[1])) throw DataError("reducer produced non-finite coordinates");
    }
    return result;
}

void write_coords_csv(std::ostream& out, const Projection2D& projection) {
    out << "model,epoch,layer,neuron,x,y\n";
    for (std::size_t i = 0; i < projection.size(); ++i) {
        const auto& key = projection.fitted_on[i];
        out << key.model_id << ',' << key.epoch << ',' << key.layer_id << ',' << key.neuron << ','
            << format_double(projection.coords[i][0]) << ',' << format_double(projection.coords[i][1]) << '\n';
    }
}

Projection2D read_coords_csv(std::istream& in) {
    Projection2D result;
    std::string line;
    if (!std::getline(in, line) || line.rfind("model,epoch,layer,neuron,x,y", 0) != 0) {
        throw DataError("coords CSV must start with header model,epoch,layer,neuron,x,y");
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 6) throw DataError(fmt::format("coords line {}: expected 6 columns", line_no));
        try {
            result.fitted_on.push_back(
                {cells[0], std::stoi(cells[1]), cells[2], static_cast<NeuronId>(std::stoul(cells[3]))});
            result.coords.push_back({std::stod(cells[4]), std::stod(cells[5])});
        } catch (const std::logic_error&) {
            throw DataError(fmt::format("coords line {}: malformed number", line_no));
        }
    }
    return result;
}

}  // namespace conceptevo
