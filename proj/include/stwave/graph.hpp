#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stwave/parallel.hpp"
#include "stwave/tensor.hpp"

namespace stwave {

enum class GraphKind { Spatial, Temporal };

// Undirected weighted graph over sensor nodes. Adjacency is dense symmetric
// with zero diagonal and non-negative weights.
struct Graph {
    long n_nodes = 0;
    FlowTensor adjacency; // (N, N)
    GraphKind kind = GraphKind::Spatial;
    bool degenerate = false; // set when construction fell back to uniform weights

    void validate(double tol = 1e-12) const {
        if (adjacency.rank() != 2 || adjacency.extent(0) != n_nodes || adjacency.extent(1) != n_nodes)
            throw ShapeError("graph adjacency shape " + shape_str(adjacency.shape()));
        for (long i = 0; i < n_nodes; ++i) {
            if (adjacency.at(i, i) != 0.0) throw NumericError("graph adjacency has nonzero diagonal");
            for (long j = 0; j < n_nodes; ++j) {
                if (adjacency.at(i, j) < 0.0) throw NumericError("graph adjacency has negative weight");
                if (std::abs(adjacency.at(i, j) - adjacency.at(j, i)) > tol)
                    throw NumericError("graph adjacency asymmetric beyond tolerance");
            }
        }
    }

    double degree(long i) const {
        double d = 0.0;
        for (long j = 0; j < n_nodes; ++j) d += adjacency.at(i, j);
        return d;
    }

    double mean_edge_count() const {
        long edges2 = 0;
        for (long i = 0; i < n_nodes; ++i)
            for (long j = 0; j < n_nodes; ++j)
                if (adjacency.at(i, j) > 0.0) ++edges2;
        return static_cast<double>(edges2) / static_cast<double>(n_nodes);
    }
};

inline Graph ring_graph(long n, double weight = 1.0) {
    Graph g{n, FlowTensor({n, n}), GraphKind::Spatial, false};
    for (long i = 0; i < n; ++i) {
        const long j = (i + 1) % n;
        if (i == j) continue; // n == 1
        g.adjacency.at(i, j) = weight;
        g.adjacency.at(j, i) = weight;
    }
    return g;
}

inline Graph grid_graph(long rows, long cols, double weight = 1.0) {
    const long n = rows * cols;
    Graph g{n, FlowTensor({n, n}), GraphKind::Spatial, false};
    auto id = [cols](long r, long c) { return r * cols + c; };
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) {
            if (c + 1 < cols) {
                g.adjacency.at(id(r, c), id(r, c + 1)) = weight;
                g.adjacency.at(id(r, c + 1), id(r, c)) = weight;
            }
            if (r + 1 < rows) {
                g.adjacency.at(id(r, c), id(r + 1, c)) = weight;
                g.adjacency.at(id(r + 1, c), id(r, c)) = weight;
            }
        }
    return g;
}

// Classic dynamic time warping over |a_i - b_j| local costs with steps
// (up, right, diagonal); returns the terminal cumulative cost.
inline double dtw_distance(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw ArgumentError("dtw_distance: empty series");
    const std::size_t n = a.size(), m = b.size();
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> prev(m, inf), cur(m, inf);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double cost = std::abs(a[i] - b[j]);
            double best;
            if (i == 0 && j == 0)
                best = 0.0;
            else if (i == 0)
                best = cur[j - 1];
            else if (j == 0)
                best = prev[j];
            else
                best = std::min({prev[j], cur[j - 1], prev[j - 1]});
            cur[j] = cost + best;
        }
        std::swap(prev, cur);
        std::fill(cur.begin(), cur.end(), inf);
    }
    return prev[m - 1];
}

// DTW similarity graph over per-node histories: standardize each node's
// series, compute pairwise DTW (optionally strided), keep the k nearest
// peers per node, weight by exp(-dist/sigma) and symmetrize by max.
inline Graph build_temporal_graph(const FlowTensor& history, long k_sparsity, long downsample = 1) {
    if (history.rank() != 3 || history.extent(2) != 1)
        throw ShapeError("build_temporal_graph: expected (T,N,1), got " + shape_str(history.shape()));
    const long T = history.extent(0);
    const long N = history.extent(1);
    if (T < 2) throw ArgumentError("build_temporal_graph: need T >= 2");
    if (k_sparsity < 1 || k_sparsity >= N)
        throw ArgumentError("build_temporal_graph: k_sparsity outside [1, N)");
    if (downsample < 1) throw ArgumentError("build_temporal_graph: downsample must be >= 1");

    std::vector<std::vector<double>> series(static_cast<std::size_t>(N));
    for (long n = 0; n < N; ++n) {
        auto& s = series[static_cast<std::size_t>(n)];
        for (long t = 0; t < T; t += downsample) s.push_back(history.at(t, n, 0L));
        double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
        double var = 0.0;
        for (double v : s) var += (v - mean) * (v - mean);
        double sd = std::sqrt(var / static_cast<double>(s.size()));
        for (double& v : s) v = sd > 0.0 ? (v - mean) / sd : 0.0;
    }

    // pairwise DTW; pairs are independent and write disjoint entries
    FlowTensor dist({N, N});
    std::vector<std::pair<long, long>> pairs;
    pairs.reserve(static_cast<std::size_t>(N * (N - 1) / 2));
    for (long i = 0; i < N; ++i)
        for (long j = i + 1; j < N; ++j) pairs.emplace_back(i, j);
    parallel_chunks(static_cast<long>(pairs.size()), worker_count(), [&](long begin, long end, long) {
        for (long p = begin; p < end; ++p) {
            const auto [i, j] = pairs[static_cast<std::size_t>(p)];
            const double d = dtw_distance(series[static_cast<std::size_t>(i)], series[static_cast<std::size_t>(j)]);
            dist.at(i, j) = d;
            dist.at(j, i) = d;
        }
    });

    // k nearest peers per node (ties by lower id)
    std::vector<double> kept;
    FlowTensor keep({N, N});
    for (long i = 0; i < N; ++i) {
        std::vector<long> order(static_cast<std::size_t>(N));
        std::iota(order.begin(), order.end(), 0L);
        order.erase(order.begin() + i);
        std::stable_sort(order.begin(), order.end(),
                         [&](long a, long b) { return dist.at(i, a) < dist.at(i, b); });
        for (long r = 0; r < k_sparsity; ++r) {
            const long j = order[static_cast<std::size_t>(r)];
            keep.at(i, j) = 1.0;
            kept.push_back(dist.at(i, j));
        }
    }
    double mean = std::accumulate(kept.begin(), kept.end(), 0.0) / static_cast<double>(kept.size());
    double var = 0.0;
    for (double v : kept) var += (v - mean) * (v - mean);
    const double sigma = std::sqrt(var / static_cast<double>(kept.size()));

    Graph g{N, FlowTensor({N, N}), GraphKind::Temporal, false};
    if (sigma <= 0.0) {
        g.degenerate = true;
        for (long i = 0; i < N; ++i)
            for (long j = 0; j < N; ++j)
                if (i != j && (keep.at(i, j) > 0.0 || keep.at(j, i) > 0.0)) g.adjacency.at(i, j) = 1.0;
        return g;
    }
    for (long i = 0; i < N; ++i)
        for (long j = 0; j < N; ++j) {
            if (i == j) continue;
            double w = 0.0;
            if (keep.at(i, j) > 0.0) w = std::exp(-dist.at(i, j) / sigma);
            if (keep.at(j, i) > 0.0) w = std::max(w, std::exp(-dist.at(j, i) / sigma));
            g.adjacency.at(i, j) = w;
        }
    return g;
}

// L = I - D^{-1/2} A D^{-1/2}; isolated nodes keep an identity row.
inline FlowTensor normalized_laplacian(const Graph& g) {
    const long n = g.n_nodes;
    std::vector<double> dinv_sqrt(static_cast<std::size_t>(n), 0.0);
    for (long i = 0; i < n; ++i) {
        const double d = g.degree(i);
        dinv_sqrt[static_cast<std::size_t>(i)] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
    }
    FlowTensor lap({n, n});
    for (long i = 0; i < n; ++i) {
        lap.at(i, i) = 1.0;
        for (long j = 0; j < n; ++j) {
            if (i == j) continue;
            const double w = g.adjacency.at(i, j);
            if (w != 0.0)
                lap.at(i, j) = -w * dinv_sqrt[static_cast<std::size_t>(i)] * dinv_sqrt[static_cast<std::size_t>(j)];
        }
    }
    return lap;
}

enum class EdgeCostMapping {
    GaussianKernel, // weight = exp(-(cost/sigma)^2), sigma = std of costs (distance files)
    DirectWeight,   // cost column already holds the weight
};

// Edge-list CSV: header `from,to,cost`, 0-based node ids.
inline Graph load_edge_list_csv(const std::string& path, long n_nodes,
                                EdgeCostMapping mapping = EdgeCostMapping::GaussianKernel) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open edge list '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty edge list '" + path + "'");
    {
        std::string h = line;
        h.erase(std::remove_if(h.begin(), h.end(), [](char c) { return c == ' ' || c == '\r'; }), h.end());
        if (h != "from,to,cost")
            throw DataError("edge list '" + path + "': expected header 'from,to,cost', got '" + line + "'");
    }
    struct Edge {
        long from, to;
        double cost;
    };
    std::vector<Edge> edges;
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::istringstream row(line);
        std::string f, t, c;
        if (!std::getline(row, f, ',') || !std::getline(row, t, ',') || !std::getline(row, c))
            throw DataError("edge list '" + path + "' line " + std::to_string(lineno) + ": malformed row");
        try {
            Edge e{std::stol(f), std::stol(t), std::stod(c)};
            if (e.from < 0 || e.from >= n_nodes || e.to < 0 || e.to >= n_nodes)
                throw DataError("edge list '" + path + "' line " + std::to_string(lineno) +
                                ": node id out of range");
            if (e.from != e.to) edges.push_back(e);
        } catch (const DataError&) {
            throw;
        } catch (const std::exception&) {
            throw DataError("edge list '" + path + "' line " + std::to_string(lineno) + ": malformed row");
        }
    }
    double mean = 0.0;
    for (const auto& e : edges) mean += e.cost;
    mean /= edges.empty() ? 1.0 : static_cast<double>(edges.size());
    double var = 0.0;
    for (const auto& e : edges) var += (e.cost - mean) * (e.cost - mean);
    const double sigma = edges.empty() ? 1.0 : std::sqrt(var / static_cast<double>(edges.size()));

    Graph g{n_nodes, FlowTensor({n_nodes, n_nodes}), GraphKind::Spatial, false};
    for (const auto& e : edges) {
        double w = e.cost;
        if (mapping == EdgeCostMapping::GaussianKernel)
            w = sigma > 0.0 ? std::exp(-(e.cost / sigma) * (e.cost / sigma)) : 1.0;
        if (w < 0.0)
            throw DataError("edge list '" + path + "': negative weight for edge " +
                            std::to_string(e.from) + "-" + std::to_string(e.to));
        g.adjacency.at(e.from, e.to) = std::max(g.adjacency.at(e.from, e.to), w);
        g.adjacency.at(e.to, e.from) = g.adjacency.at(e.from, e.to);
    }
    return g;
}

inline void write_edge_list_csv(const Graph& g, std::ostream& out) {
    out << "from,to,cost\n";
    for (long i = 0; i < g.n_nodes; ++i)
        for (long j = i + 1; j < g.n_nodes; ++j)
            if (g.adjacency.at(i, j) > 0.0) out << i << "," << j << "," << g.adjacency.at(i, j) << "\n";
}

} // namespace stwave
