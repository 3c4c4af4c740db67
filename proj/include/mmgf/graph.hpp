#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mmgf/error.hpp"
#include "mmgf/tensor.hpp"

namespace mmgf {

enum class Metric { euclidean, cosine };

inline const char* metric_name(Metric m) {
    return m == Metric::euclidean ? "euclidean" : "cosine";
}

// Undirected 0/1 adjacency over N nodes, stored dense. The adjacency tensor
// is a constant: gradients never flow through graph structure.
struct Graph {
    std::size_t n_nodes = 0;
    Tensor adjacency;
    bool self_looped = false;
};

// Union-symmetrized k-nearest-neighbor graph: an edge {i, j} exists when i is
// among j's k nearest or j among i's. Distance ties break toward the lower
// node index. Cosine distance of a zero-norm row against anything is taken
// as 1.
inline Graph knn_graph(const Tensor& features, std::size_t k, Metric metric) {
    if (features.ndim() != 2)
        throw ShapeError("knn_graph: features must be 2-d, got " + shape_str(features.shape()));
    const std::size_t n = features.dim(0), d = features.dim(1);
    if (n < 2) throw DataError("knn_graph: need at least 2 nodes, got " + std::to_string(n));
    if (k < 1 || k > n - 1)
        throw ParamError("knn_graph: k must lie in [1, " + std::to_string(n - 1) +
                         "], got " + std::to_string(k));
    const double* X = features.data();

    std::vector<double> norms;
    if (metric == Metric::cosine) {
        norms.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += X[i * d + j] * X[i * d + j];
            norms[i] = std::sqrt(s);
        }
    }
    auto dist = [&](std::size_t a, std::size_t b) {
        if (metric == Metric::euclidean) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = X[a * d + j] - X[b * d + j];
                s += diff * diff;
            }
            return std::sqrt(s);
        }
        if (norms[a] == 0.0 || norms[b] == 0.0) return 1.0;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += X[a * d + j] * X[b * d + j];
        return 1.0 - dot / (norms[a] * norms[b]);
    };

    std::vector<double> adj(n * n, 0.0);
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) cand.emplace_back(dist(i, j), j);
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k),
                          cand.end());
        for (std::size_t t = 0; t < k; ++t) {
            const std::size_t j = cand[t].second;
            adj[i * n + j] = 1.0;
            adj[j * n + i] = 1.0;
        }
    }
    Graph g;
    g.n_nodes = n;
    g.adjacency = Tensor::from({n, n}, std::move(adj));
    g.self_looped = false;
    return g;
}

inline Graph add_self_loops(const Graph& g) {
    if (g.self_looped) throw ContractError("add_self_loops: graph already has self-loops");
    Graph out;
    out.n_nodes = g.n_nodes;
    out.adjacency = g.adjacency.detach();
    for (std::size_t i = 0; i < g.n_nodes; ++i) out.adjacency.at(i, i) = 1.0;
    out.self_looped = true;
    return out;
}

// Row sums of the adjacency.
inline std::vector<double> degrees(const Graph& g) {
    std::vector<double> deg(g.n_nodes, 0.0);
    for (std::size_t i = 0; i < g.n_nodes; ++i)
        for (std::size_t j = 0; j < g.n_nodes; ++j) deg[i] += g.adjacency.at(i, j);
    return deg;
}

// Symmetrically normalized adjacency D^(-1/2) A D^(-1/2) as a constant
// tensor. Requires self-loops so every degree is positive.
inline Tensor normalized_adjacency(const Graph& g) {
    if (!g.self_looped)
        throw ContractError("normalized_adjacency: graph must have self-loops");
    const std::size_t n = g.n_nodes;
    std::vector<double> deg = degrees(g);
    std::vector<double> inv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(deg[i]);
    std::vector<double> out(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = g.adjacency.at(i, j) * inv_sqrt[i] * inv_sqrt[j];
    return Tensor::from({n, n}, std::move(out));
}

}  // namespace mmgf
