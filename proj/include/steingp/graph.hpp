#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "steingp/errors.hpp"
#include "steingp/random.hpp"

namespace steingp {

using SparseMat = Eigen::SparseMatrix<double>;
using SparseRowMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using DegreeVector = Eigen::VectorXd;

struct Edge {
    int u;
    int v;
    double w;
};

/// Undirected weighted graph. The adjacency matrix is stored symmetric,
/// loop-free, with strictly positive weights; degrees are cached row sums.
/// Immutable after construction.
class Graph {
public:
    Graph(int node_count, const std::vector<Edge>& edges) : n_(node_count) {
        if (node_count <= 0) throw ParseError("graph needs at least one node");
        // Deduplicate on the unordered pair, last weight wins; drop loops.
        std::map<std::pair<int, int>, double> canon;
        for (const Edge& e : edges) {
            if (e.u < 0 || e.u >= n_ || e.v < 0 || e.v >= n_)
                throw ParseError("edge endpoint out of range: " +
                                 std::to_string(e.u) + " " + std::to_string(e.v));
            if (e.u == e.v) continue;
            if (!(e.w > 0.0))
                throw ParseError("edge weight must be positive, got " +
                                 std::to_string(e.w));
            canon[{std::min(e.u, e.v), std::max(e.u, e.v)}] = e.w;
        }
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(2 * canon.size());
        for (const auto& [uv, w] : canon) {
            trip.emplace_back(uv.first, uv.second, w);
            trip.emplace_back(uv.second, uv.first, w);
        }
        W_.resize(n_, n_);
        W_.setFromTriplets(trip.begin(), trip.end());
        W_.makeCompressed();
        deg_ = W_ * Eigen::VectorXd::Ones(n_);
    }

    int node_count() const { return n_; }
    const SparseRowMat& adjacency() const { return W_; }
    const DegreeVector& degrees() const { return deg_; }

    /// Canonical edge list: u < v, sorted lexicographically.
    std::vector<Edge> edge_list() const {
        std::vector<Edge> out;
        for (int k = 0; k < W_.outerSize(); ++k)
            for (SparseRowMat::InnerIterator it(W_, k); it; ++it)
                if (it.row() < it.col())
                    out.push_back({static_cast<int>(it.row()),
                                   static_cast<int>(it.col()), it.value()});
        std::sort(out.begin(), out.end(), [](const Edge& a, const Edge& b) {
            return std::pair{a.u, a.v} < std::pair{b.u, b.v};
        });
        return out;
    }

private:
    int n_;
    SparseRowMat W_;
    DegreeVector deg_;
};

inline int count_components(const Graph& g) {
    const int n = g.node_count();
    const SparseRowMat& W = g.adjacency();
    std::vector<int> label(n, -1);
    int comps = 0;
    std::vector<int> stack;
    for (int s = 0; s < n; ++s) {
        if (label[s] >= 0) continue;
        ++comps;
        stack.push_back(s);
        label[s] = comps;
        while (!stack.empty()) {
            int u = stack.back();
            stack.pop_back();
            for (SparseRowMat::InnerIterator it(W, u); it; ++it) {
                int v = static_cast<int>(it.col());
                if (label[v] < 0) {
                    label[v] = comps;
                    stack.push_back(v);
                }
            }
        }
    }
    return comps;
}

enum class ConnectivityPolicy { Require, Allow };

/// Parses "u v [w]" lines; '#' starts a comment line; ids are 0-based.
/// Missing weight defaults to 1. Duplicates collapse keeping the last weight,
/// loops are dropped.
inline Graph load_edge_list(std::istream& in, ConnectivityPolicy policy) {
    std::vector<Edge> edges;
    int max_id = -1;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        long long u, v;
        double w = 1.0;
        if (!(ls >> u >> v)) throw ParseError("expected \"u v [w]\"", lineno);
        ls >> w;
        std::string rest;
        if (ls >> rest) throw ParseError("trailing tokens after edge", lineno);
        if (u < 0 || v < 0) throw ParseError("negative node id", lineno);
        if (!(w > 0.0)) throw ParseError("weight must be positive", lineno);
        edges.push_back({static_cast<int>(u), static_cast<int>(v), w});
        max_id = std::max(max_id, static_cast<int>(std::max(u, v)));
    }
    if (max_id < 0) throw ParseError("edge list is empty");
    Graph g(max_id + 1, edges);
    if (policy == ConnectivityPolicy::Require) {
        const int comps = count_components(g);
        if (comps != 1)
            throw ConnectivityError("graph is disconnected: " +
                                        std::to_string(comps) + " components",
                                    comps);
    }
    return g;
}

inline Graph load_edge_list(const std::string& path,
                            ConnectivityPolicy policy = ConnectivityPolicy::Require) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open edge list: " + path);
    return load_edge_list(in, policy);
}

inline void save_edge_list(const Graph& g, std::ostream& out) {
    out.precision(17);
    for (const Edge& e : g.edge_list()) out << e.u << " " << e.v << " " << e.w << "\n";
}

inline void save_edge_list(const Graph& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open for writing: " + path);
    save_edge_list(g, out);
}

inline DegreeVector degree_vector(const Graph& g) { return g.degrees(); }

/// L = D - W as a sparse matrix; normalized: I - D^{-1/2} W D^{-1/2}.
/// Normalization needs positive degrees.
inline SparseMat laplacian_matrix(const Graph& g, bool normalized = false) {
    const int n = g.node_count();
    const SparseMat W(g.adjacency());
    const DegreeVector& d = g.degrees();
    SparseMat L(n, n);
    if (!normalized) {
        SparseMat D(n, n);
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(n);
        for (int i = 0; i < n; ++i) trip.emplace_back(i, i, d[i]);
        D.setFromTriplets(trip.begin(), trip.end());
        L = D - W;
    } else {
        Eigen::VectorXd dinv_sqrt(n);
        for (int i = 0; i < n; ++i) {
            if (!(d[i] > 0.0))
                throw DimensionError("normalized Laplacian needs positive degrees");
            dinv_sqrt[i] = 1.0 / std::sqrt(d[i]);
        }
        SparseMat I(n, n);
        I.setIdentity();
        L = I - SparseMat(dinv_sqrt.asDiagonal() * W * dinv_sqrt.asDiagonal());
    }
    L.makeCompressed();
    return L;
}

template <typename Derived>
Eigen::MatrixXd laplacian_apply(const Graph& g, const Eigen::MatrixBase<Derived>& x,
                                bool normalized = false) {
    if (x.rows() != g.node_count())
        throw DimensionError("laplacian_apply: vector length " +
                             std::to_string(x.rows()) + " != node count " +
                             std::to_string(g.node_count()));
    const DegreeVector& d = g.degrees();
    if (!normalized) return d.asDiagonal() * x - g.adjacency() * x;
    Eigen::VectorXd dinv_sqrt = d.array().sqrt().inverse();
    Eigen::MatrixXd xs = dinv_sqrt.asDiagonal() * x;
    return x - dinv_sqrt.asDiagonal() * (g.adjacency() * xs).eval();
}

/// Disjoint sorted index sets covering all nodes. input_nodes are the
/// observed side, output_nodes the prediction targets.
struct NodePartition {
    std::vector<int> input_nodes;
    std::vector<int> output_nodes;
    std::uint64_t seed = 0;
};

/// Uniformly random split, reproducible by seed: shuffle, take the first
/// round(fraction*n) nodes as inputs, sort both sides.
inline NodePartition partition_nodes(const Graph& g, double input_fraction,
                                     std::uint64_t seed) {
    const int n = g.node_count();
    const int k = static_cast<int>(std::lround(input_fraction * n));
    if (!(input_fraction > 0.0 && input_fraction < 1.0) || k < 1 || k > n - 1)
        throw DimensionError("input_fraction must leave at least one node per side");
    std::vector<int> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(seed);
    rng.shuffle(ids);
    NodePartition part;
    part.seed = seed;
    part.input_nodes.assign(ids.begin(), ids.begin() + k);
    part.output_nodes.assign(ids.begin() + k, ids.end());
    std::sort(part.input_nodes.begin(), part.input_nodes.end());
    std::sort(part.output_nodes.begin(), part.output_nodes.end());
    return part;
}

} // namespace steingp
