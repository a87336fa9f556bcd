#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gesc/rng.hpp"

namespace gesc::graph {

/// Undirected edge, stored canonically with a < b. The edge phase theta is
/// the transport phase of the arc a -> b; the arc b -> a carries -theta.
struct Edge {
    std::uint32_t a;
    std::uint32_t b;
    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Directed arc source -> target, as seen from the target's in-arc row.
struct Arc {
    std::uint32_t source;
    std::uint32_t edge;
    std::int8_t orientation;  // +1 for a -> b, -1 for b -> a
    friend bool operator==(const Arc&, const Arc&) = default;
};

/// Keep flags over undirected edges (1 = keep). Dropping an edge removes both arcs.
using EdgeMask = std::vector<std::uint8_t>;

class Graph {
public:
    Graph() = default;

    /// Builds the arc CSR. Edges may be given in either orientation; they are
    /// canonicalised to a < b and kept in input order. Self-loops, duplicates
    /// and out-of-range endpoints throw DataError.
    static Graph build(std::size_t num_nodes, std::vector<Edge> edges);

    std::size_t num_nodes() const noexcept { return num_nodes_; }
    std::size_t num_edges() const noexcept { return edges_.size(); }
    std::size_t num_arcs() const noexcept { return arcs_.size(); }

    std::span<const Edge> edges() const noexcept { return edges_; }
    std::span<const Arc> arcs() const noexcept { return arcs_; }
    std::span<const std::size_t> row_ptr() const noexcept { return row_ptr_; }

    /// In-arcs of node i, ordered by source id.
    std::span<const Arc> in_arcs(std::size_t i) const noexcept {
        return std::span<const Arc>(arcs_).subspan(row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]);
    }
    std::size_t degree(std::size_t i) const noexcept { return row_ptr_[i + 1] - row_ptr_[i]; }
    std::size_t max_degree() const noexcept;
    std::size_t arc_target(std::size_t arc) const noexcept { return arc_target_[arc]; }
    /// Index of the arc with the same edge and opposite orientation.
    std::size_t reverse_arc(std::size_t arc) const noexcept { return reverse_[arc]; }

    friend bool operator==(const Graph& x, const Graph& y) {
        return x.num_nodes_ == y.num_nodes_ && x.edges_ == y.edges_;
    }

private:
    std::size_t num_nodes_ = 0;
    std::vector<Edge> edges_;
    std::vector<std::size_t> row_ptr_{0};
    std::vector<Arc> arcs_;
    std::vector<std::uint32_t> arc_target_;
    std::vector<std::size_t> reverse_;
};

struct RealMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    RealMatrix() = default;
    RealMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const noexcept {
        return std::span<const double>(data).subspan(r * cols, cols);
    }

    friend bool operator==(const RealMatrix&, const RealMatrix&) = default;
};

using NodeMask = std::vector<std::uint8_t>;

struct Dataset {
    Graph graph;
    RealMatrix features;               // N x d_in
    std::vector<std::int32_t> labels;  // class index, or -1 for unlabeled
    int num_classes = 0;
    NodeMask train_mask;
    NodeMask val_mask;
    NodeMask test_mask;

    std::size_t num_nodes() const noexcept { return graph.num_nodes(); }
    std::size_t feature_dim() const noexcept { return features.cols; }
    bool has_splits() const noexcept;

    /// Checks every type invariant; throws DataError / DimensionError.
    /// Splits are only required to be non-empty when `require_splits` is set.
    void validate(bool require_splits = false) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

std::size_t count(const NodeMask& mask) noexcept;

struct SyntheticSpec {
    std::size_t num_nodes = 1000;
    int num_classes = 5;
    std::size_t feature_dim = 32;
    double target_homophily = 0.2;
    double mean_degree = 10.0;
    double feature_signal_strength = 0.5;
    std::uint64_t rng_seed = 0;
};

/// Fraction of undirected edges whose endpoints share a label.
/// Throws DataError("undefined-metric") on an edge-free graph.
double global_homophily(const Dataset& d);

/// Exactly `per_class_train` training nodes per class; the remaining labeled
/// nodes are shuffled and split in half into validation (floor) and test.
Dataset make_splits(const Dataset& d, std::size_t per_class_train, std::uint64_t rng_seed);

/// Block-model graph whose edges are intra-class with probability
/// `target_homophily`, with class-mean Gaussian mixture features.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Independent Bernoulli(1 - p_drop) keep flag per undirected edge.
EdgeMask sample_edge_drop_mask(const Graph& g, double p_drop, Rng& rng);

}  // namespace gesc::graph
