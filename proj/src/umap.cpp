#include "conceptevo/projection2d.hpp"

#include "conceptevo/error.hpp"
#include "conceptevo/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace conceptevo {

namespace {

struct Edge {
    std::size_t head;
    std::size_t tail;
    double weight;
};

struct Neighbors {
    std::vector<std::size_t> index;  // n * k
    std::vector<double> distance;    // n * k
    std::size_t k = 0;
};

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

// Brute force; the layouts this engine targets have at most a few thousand points.
Neighbors exact_knn(const VectorTable& points, std::size_t k) {
    const std::size_t n = points.rows();
    Neighbors out;
    out.k = k;
    out.index.resize(n * k);
    out.distance.resize(n * k);
    std::vector<std::pair<double, std::size_t>> candidates(n > 0 ? n - 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) candidates[c++] = {std::sqrt(squared_distance(points.row(i), points.row(j))), j};
        }
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end());
        for (std::size_t q = 0; q < k; ++q) {
            out.distance[i * k + q] = candidates[q].first;
            out.index[i * k + q] = candidates[q].second;
        }
    }
    return out;
}

// Per point: rho = distance to the nearest non-identical neighbour, sigma solves
// sum_j exp(-(d_j - rho) / sigma) = log2(k) by bisection.
std::vector<Edge> fuzzy_graph(const Neighbors& nn, std::size_t n) {
    constexpr double kTolerance = 1e-5;
    constexpr double kMinScale = 1e-3;
    const std::size_t k = nn.k;
    const double target = std::log2(static_cast<double>(k));

    double global_mean = 0.0;
    for (double d : nn.distance) global_mean += d;
    global_mean /= std::max<double>(1.0, static_cast<double>(nn.distance.size()));

    std::vector<double> weights(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        const double* dist = nn.distance.data() + i * k;
        double rho = 0.0;
        for (std::size_t q = 0; q < k; ++q) {
            if (dist[q] > 0.0) {
                rho = dist[q];
                break;
            }
        }
        double lo = 0.0;
        double hi = std::numeric_limits<double>::infinity();
        double sigma = 1.0;
        for (int iter = 0; iter < 64; ++iter) {
            double psum = 0.0;
            for (std::size_t q = 0; q < k; ++q) {
                const double gap = dist[q] - rho;
                psum += gap > 0.0 ? std::exp(-gap / sigma) : 1.0;
            }
            if (std::abs(psum - target) < kTolerance) break;
            if (psum > target) {
                hi = sigma;
                sigma = (lo + hi) / 2.0;
            } else {
                lo = sigma;
                sigma = std::isinf(hi) ? sigma * 2.0 : (lo + hi) / 2.0;
            }
        }
        double mean_i = 0.0;
        for (std::size_t q = 0; q < k; ++q) mean_i += dist[q];
        mean_i /= static_cast<double>(k);
        sigma = std::max(sigma, kMinScale * (rho > 0.0 ? mean_i : global_mean));
        if (sigma <= 0.0) sigma = kMinScale;

        for (std::size_t q = 0; q < k; ++q) {
            const double gap = dist[q] - rho;
            weights[i * k + q] = gap > 0.0 ? std::exp(-gap / sigma) : 1.0;
        }
    }

    // Fuzzy union: w_ij + w_ji - w_ij * w_ji, collected once per unordered pair.
    std::vector<std::tuple<std::size_t, std::size_t, double>> directed;
    directed.reserve(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t q = 0; q < k; ++q) directed.emplace_back(i, nn.index[i * k + q], weights[i * k + q]);
    }
    std::vector<std::tuple<std::size_t, std::size_t, double>> canonical;
    canonical.reserve(directed.size());
    for (const auto& [i, j, w] : directed) canonical.emplace_back(std::min(i, j), std::max(i, j), w);
    std::sort(canonical.begin(), canonical.end());

    std::vector<Edge> edges;
    for (std::size_t s = 0; s < canonical.size();) {
        const auto [a, b, w1] = canonical[s];
        double w = w1;
        std::size_t t = s + 1;
        if (t < canonical.size() && std::get<0>(canonical[t]) == a && std::get<1>(canonical[t]) == b) {
            const double w2 = std::get<2>(canonical[t]);
            w = w1 + w2 - w1 * w2;
            ++t;
        }
        if (w > 0.0) edges.push_back({a, b, w});
        s = t;
    }
    return edges;
}

double clip(double v) { return std::clamp(v, -4.0, 4.0); }

}  // namespace

std::array<double, 2> fit_umap_curve(double spread, double min_dist) {
    constexpr int kGrid = 300;
    std::vector<double> xs(kGrid);
    std::vector<double> ys(kGrid);
    for (int i = 0; i < kGrid; ++i) {
        xs[i] = 3.0 * spread * static_cast<double>(i) / (kGrid - 1);
        ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
    }
    auto residual_norm = [&](double a, double b) {
        double s = 0.0;
        for (int i = 0; i < kGrid; ++i) {
            const double f = 1.0 / (1.0 + a * std::pow(xs[i], 2.0 * b));
            s += (f - ys[i]) * (f - ys[i]);
        }
        return s;
    };

    // Levenberg-Marquardt on (a, b).
    double a = 1.0;
    double b = 1.0;
    double lambda = 1e-3;
    double current = residual_norm(a, b);
    for (int iter = 0; iter < 200; ++iter) {
        double jtj00 = 0, jtj01 = 0, jtj11 = 0, jtr0 = 0, jtr1 = 0;
        for (int i = 0; i < kGrid; ++i) {
            const double x = xs[i];
            if (x <= 0.0) continue;
            const double p = std::pow(x, 2.0 * b);
            const double denom = 1.0 + a * p;
            const double f = 1.0 / denom;
            const double r = f - ys[i];
            const double da = -p / (denom * denom);
            const double db = -a * p * 2.0 * std::log(x) / (denom * denom);
            jtj00 += da * da;
            jtj01 += da * db;
            jtj11 += db * db;
            jtr0 += da * r;
            jtr1 += db * r;
        }
        const double m00 = jtj00 * (1.0 + lambda);
        const double m11 = jtj11 * (1.0 + lambda);
        const double det = m00 * m11 - jtj01 * jtj01;
        if (std::abs(det) < 1e-300) break;
        const double step_a = -(m11 * jtr0 - jtj01 * jtr1) / det;
        const double step_b = -(m00 * jtr1 - jtj01 * jtr0) / det;
        const double na = std::max(a + step_a, 1e-6);
        const double nb = std::max(b + step_b, 1e-6);
        const double candidate = residual_norm(na, nb);
        if (candidate < current) {
            const bool done = current - candidate < 1e-14 * std::max(current, 1e-300);
            a = na;
            b = nb;
            current = candidate;
            lambda *= 0.3;
            if (done) break;
        } else {
            lambda *= 10.0;
            if (lambda > 1e12) break;
        }
    }
    return {a, b};
}

std::vector<Point2> UmapReducer::fit(const VectorTable& points) const {
    // Identical inputs are laid out once and share the coordinate.
    std::map<std::vector<double>, std::size_t> first;
    std::vector<std::size_t> slot(points.rows());
    for (std::size_t i = 0; i < points.rows(); ++i) {
        const auto row = points.row(i);
        slot[i] = first.try_emplace(std::vector<double>(row.begin(), row.end()), first.size()).first->second;
    }
    if (first.size() == points.rows()) return fit_distinct(points);
    VectorTable unique(first.size(), points.dim());
    for (std::size_t i = 0; i < points.rows(); ++i) {
        const auto row = points.row(i);
        std::copy(row.begin(), row.end(), unique.row(slot[i]).begin());
    }
    const std::vector<Point2> layout = fit_distinct(unique);
    std::vector<Point2> out(points.rows());
    for (std::size_t i = 0; i < points.rows(); ++i) out[i] = layout[slot[i]];
    return out;
}

std::vector<Point2> UmapReducer::fit_distinct(const VectorTable& points) const {
    const std::size_t n = points.rows();
    if (n < 3) return PrincipalAxesReducer{}.fit(points);
    if (params_.neighbors < 2) throw ConfigError("umap needs at least 2 neighbors");
    if (!(params_.min_dist >= 0.0) || !(params_.spread > 0.0)) throw ConfigError("invalid umap min_dist/spread");

    const std::size_t k = std::min(params_.neighbors, n - 1);
    const Neighbors nn = exact_knn(points, k);
    const std::vector<Edge> edges = fuzzy_graph(nn, n);
    const auto [a, b] = fit_umap_curve(params_.spread, params_.min_dist);

    // Initial layout: principal axes scaled into [-10, 10].
    std::vector<Point2> y = PrincipalAxesReducer{}.fit(points);
    double extent = 0.0;
    for (const auto& p : y) extent = std::max({extent, std::abs(p[0]), std::abs(p[1])});
    if (extent > 0.0) {
        for (auto& p : y) {
            p[0] *= 10.0 / extent;
            p[1] *= 10.0 / extent;
        }
    }
    if (edges.empty()) return y;

    const std::size_t epochs = params_.epochs > 0 ? params_.epochs : (n <= 10000 ? 500 : 200);
    constexpr double kNegativeRate = 5.0;
    constexpr double kInitialAlpha = 1.0;

    double max_weight = 0.0;
    for (const auto& e : edges) max_weight = std::max(max_weight, e.weight);
    std::vector<double> epochs_per_sample(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const double scaled = edges[e].weight / max_weight * static_cast<double>(epochs);
        epochs_per_sample[e] = scaled > 0.0 ? static_cast<double>(epochs) / scaled : -1.0;
    }
    std::vector<double> next_sample = epochs_per_sample;
    std::vector<double> per_negative(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) per_negative[e] = epochs_per_sample[e] / kNegativeRate;
    std::vector<double> next_negative = per_negative;

    Rng rng(Rng::substream(params_.seed, 0x756d6170)());  // "umap"
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const double alpha = kInitialAlpha * (1.0 - static_cast<double>(epoch) / static_cast<double>(epochs));
        const auto now = static_cast<double>(epoch);
        for (std::size_t e = 0; e < edges.size(); ++e) {
            if (epochs_per_sample[e] <= 0.0 || next_sample[e] > now) continue;
            auto& head = y[edges[e].head];
            auto& tail = y[edges[e].tail];

            double d2 = (head[0] - tail[0]) * (head[0] - tail[0]) + (head[1] - tail[1]) * (head[1] - tail[1]);
            if (d2 > 0.0) {
                const double coef = -2.0 * a * b * std::pow(d2, b - 1.0) / (a * std::pow(d2, b) + 1.0);
                for (int c = 0; c < 2; ++c) {
                    const double g = clip(coef * (head[c] - tail[c])) * alpha;
                    head[c] += g;
                    tail[c] -= g;
                }
            }
            next_sample[e] += epochs_per_sample[e];

            const auto negatives = static_cast<std::size_t>((now - next_negative[e]) / per_negative[e]);
            for (std::size_t s = 0; s < negatives; ++s) {
                const std::size_t other = rng.uniform_index(n);
                if (other == edges[e].head) continue;
                const auto& o = y[other];
                d2 = (head[0] - o[0]) * (head[0] - o[0]) + (head[1] - o[1]) * (head[1] - o[1]);
                if (d2 <= 0.0) continue;
                const double coef = 2.0 * b / ((0.001 + d2) * (a * std::pow(d2, b) + 1.0));
                for (int c = 0; c < 2; ++c) head[c] += clip(coef * (head[c] - o[c])) * alpha;
            }
            next_negative[e] += static_cast<double>(negatives) * per_negative[e];
        }
    }
    return y;
}

}  // namespace conceptevo
