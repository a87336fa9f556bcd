#include "gesc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_set>

#include "gesc/errors.hpp"

namespace gesc::graph {

namespace {

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) noexcept {
    return (static_cast<std::uint64_t>(a) << 32) | b;
}

void shuffle(std::vector<std::uint32_t>& v, Rng& rng) {
    for (std::size_t k = v.size(); k > 1; --k) {
        const std::size_t j = rng.below(k);
        std::swap(v[k - 1], v[j]);
    }
}

}  // namespace

Graph Graph::build(std::size_t num_nodes, std::vector<Edge> edges) {
    Graph g;
    g.num_nodes_ = num_nodes;
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(edges.size() * 2);
    for (std::size_t e = 0; e < edges.size(); ++e) {
        Edge& ed = edges[e];
        if (ed.a >= num_nodes || ed.b >= num_nodes) {
            throw DataError("edge-out-of-range", "edge " + std::to_string(e) + " references node " +
                                                     std::to_string(std::max(ed.a, ed.b)) +
                                                     " but N=" + std::to_string(num_nodes));
        }
        if (ed.a == ed.b) {
            throw DataError("self-loop", "edge " + std::to_string(e) + " is a self-loop on node " +
                                             std::to_string(ed.a));
        }
        if (ed.a > ed.b) std::swap(ed.a, ed.b);
        if (!seen.insert(edge_key(ed.a, ed.b)).second) {
            throw DataError("duplicate-edge", "edge {" + std::to_string(ed.a) + "," +
                                                  std::to_string(ed.b) + "} appears twice");
        }
    }
    g.edges_ = std::move(edges);

    std::vector<std::size_t> deg(num_nodes, 0);
    for (const Edge& ed : g.edges_) {
        ++deg[ed.a];
        ++deg[ed.b];
    }
    g.row_ptr_.assign(num_nodes + 1, 0);
    for (std::size_t i = 0; i < num_nodes; ++i) g.row_ptr_[i + 1] = g.row_ptr_[i] + deg[i];

    g.arcs_.resize(2 * g.edges_.size());
    g.arc_target_.resize(g.arcs_.size());
    std::vector<std::size_t> fill(g.row_ptr_.begin(), g.row_ptr_.end() - 1);
    for (std::size_t e = 0; e < g.edges_.size(); ++e) {
        const Edge& ed = g.edges_[e];
        // a -> b lands in b's row with orientation +1; b -> a in a's row with -1.
        g.arcs_[fill[ed.b]++] = Arc{ed.a, static_cast<std::uint32_t>(e), +1};
        g.arcs_[fill[ed.a]++] = Arc{ed.b, static_cast<std::uint32_t>(e), -1};
    }
    for (std::size_t i = 0; i < num_nodes; ++i) {
        auto first = g.arcs_.begin() + static_cast<std::ptrdiff_t>(g.row_ptr_[i]);
        auto last = g.arcs_.begin() + static_cast<std::ptrdiff_t>(g.row_ptr_[i + 1]);
        std::sort(first, last, [](const Arc& x, const Arc& y) { return x.source < y.source; });
        for (std::size_t a = g.row_ptr_[i]; a < g.row_ptr_[i + 1]; ++a) {
            g.arc_target_[a] = static_cast<std::uint32_t>(i);
        }
    }

    // Pair each arc with its reverse through the edge id.
    std::vector<std::size_t> plus(g.edges_.size()), minus(g.edges_.size());
    for (std::size_t a = 0; a < g.arcs_.size(); ++a) {
        (g.arcs_[a].orientation > 0 ? plus : minus)[g.arcs_[a].edge] = a;
    }
    g.reverse_.resize(g.arcs_.size());
    for (std::size_t e = 0; e < g.edges_.size(); ++e) {
        g.reverse_[plus[e]] = minus[e];
        g.reverse_[minus[e]] = plus[e];
    }
    return g;
}

std::size_t Graph::max_degree() const noexcept {
    std::size_t m = 0;
    for (std::size_t i = 0; i < num_nodes_; ++i) m = std::max(m, degree(i));
    return m;
}

std::size_t count(const NodeMask& mask) noexcept {
    return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(),
                                                  [](std::uint8_t v) { return v != 0; }));
}

bool Dataset::has_splits() const noexcept {
    return train_mask.size() == num_nodes() && count(train_mask) > 0;
}

void Dataset::validate(bool require_splits) const {
    const std::size_t n = num_nodes();
    if (features.rows != n) {
        throw DimensionError("feature rows " + std::to_string(features.rows) + " != N " +
                             std::to_string(n));
    }
    if (features.data.size() != features.rows * features.cols) {
        throw DimensionError("feature payload size does not match rows x cols");
    }
    for (double x : features.data) {
        if (!std::isfinite(x)) throw DataError("non-finite-feature", "feature matrix has NaN/Inf");
    }
    if (labels.size() != n) {
        throw DimensionError("labels length " + std::to_string(labels.size()) + " != N " +
                             std::to_string(n));
    }
    if (num_classes < 1) throw DataError("label-range", "num_classes must be >= 1");
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= num_classes || labels[i] < -1) {
            throw DataError("label-range", "node " + std::to_string(i) + " has label " +
                                               std::to_string(labels[i]) + " outside [0, " +
                                               std::to_string(num_classes) + ")");
        }
    }
    const NodeMask* masks[3] = {&train_mask, &val_mask, &test_mask};
    for (const NodeMask* m : masks) {
        if (!m->empty() && m->size() != n) throw DimensionError("split mask length != N");
    }
    if (train_mask.size() == n) {
        for (std::size_t i = 0; i < n; ++i) {
            int members = 0;
            for (const NodeMask* m : masks) {
                if (m->size() == n && (*m)[i]) {
                    ++members;
                    if (labels[i] < 0) {
                        throw DataError("split", "unlabeled node " + std::to_string(i) +
                                                     " is in a split");
                    }
                }
            }
            if (members > 1) {
                throw DataError("split", "node " + std::to_string(i) + " is in several splits");
            }
        }
    }
    if (require_splits && !has_splits()) throw DataError("split", "train mask is empty");
}

double global_homophily(const Dataset& d) {
    const auto edges = d.graph.edges();
    if (edges.empty()) throw DataError("undefined-metric", "homophily of a graph with no edges");
    std::size_t same = 0;
    for (const Edge& e : edges) {
        if (d.labels[e.a] == d.labels[e.b]) ++same;
    }
    return static_cast<double>(same) / static_cast<double>(edges.size());
}

Dataset make_splits(const Dataset& d, std::size_t per_class_train, std::uint64_t rng_seed) {
    Rng rng(rng_seed, 0x5b1175);
    const std::size_t n = d.num_nodes();
    std::vector<std::vector<std::uint32_t>> members(static_cast<std::size_t>(d.num_classes));
    for (std::size_t i = 0; i < n; ++i) {
        if (d.labels[i] >= 0) members[static_cast<std::size_t>(d.labels[i])].push_back(
            static_cast<std::uint32_t>(i));
    }
    Dataset out = d;
    out.train_mask.assign(n, 0);
    out.val_mask.assign(n, 0);
    out.test_mask.assign(n, 0);
    std::vector<std::uint32_t> rest;
    for (std::size_t c = 0; c < members.size(); ++c) {
        if (members[c].size() < per_class_train) {
            throw DataError("split", "class " + std::to_string(c) + " has " +
                                         std::to_string(members[c].size()) + " nodes, need " +
                                         std::to_string(per_class_train));
        }
        shuffle(members[c], rng);
        for (std::size_t k = 0; k < members[c].size(); ++k) {
            if (k < per_class_train) {
                out.train_mask[members[c][k]] = 1;
            } else {
                rest.push_back(members[c][k]);
            }
        }
    }
    std::sort(rest.begin(), rest.end());
    shuffle(rest, rng);
    const std::size_t half = rest.size() / 2;
    for (std::size_t k = 0; k < rest.size(); ++k) {
        (k < half ? out.val_mask : out.test_mask)[rest[k]] = 1;
    }
    return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    const std::size_t n = spec.num_nodes;
    const auto c = static_cast<std::size_t>(spec.num_classes);
    if (!(spec.target_homophily >= 0.0 && spec.target_homophily <= 1.0)) {
        throw ParameterError("target_homophily must lie in [0, 1]");
    }
    if (!(spec.mean_degree >= 1.0)) throw ParameterError("mean_degree must be >= 1");
    if (!(spec.feature_signal_strength >= 0.0 && spec.feature_signal_strength <= 1.0)) {
        throw ParameterError("feature_signal_strength must lie in [0, 1]");
    }
    if (n < 2 || spec.num_classes < 1 || c > n || spec.feature_dim == 0) {
        throw DataError("generation", "need N >= 2, 1 <= C <= N and feature_dim >= 1");
    }

    Rng rng(spec.rng_seed, 0x5e7);
    Rng label_rng = rng.fork(1);
    Rng edge_rng = rng.fork(2);
    Rng feat_rng = rng.fork(3);

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    shuffle(order, label_rng);
    std::vector<std::int32_t> labels(n);
    std::vector<std::vector<std::uint32_t>> members(c);
    for (std::size_t k = 0; k < n; ++k) {
        labels[order[k]] = static_cast<std::int32_t>(k % c);
    }
    for (std::size_t i = 0; i < n; ++i) {
        members[static_cast<std::size_t>(labels[i])].push_back(static_cast<std::uint32_t>(i));
    }

    const auto target_edges =
        static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.mean_degree / 2.0));
    double intra_pairs = 0.0;
    for (const auto& m : members) {
        intra_pairs += 0.5 * static_cast<double>(m.size()) * static_cast<double>(m.size() - 1);
    }
    const double all_pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    const double inter_pairs = all_pairs - intra_pairs;
    const double h = spec.target_homophily;
    // Leave headroom so rejection sampling of fresh pairs stays cheap.
    if ((h > 0.0 && h * static_cast<double>(target_edges) > 0.5 * intra_pairs) ||
        (h < 1.0 && (1.0 - h) * static_cast<double>(target_edges) > 0.5 * inter_pairs)) {
        throw DataError("generation", "mean degree " + std::to_string(spec.mean_degree) +
                                          " is infeasible for homophily " + std::to_string(h) +
                                          " with these class sizes");
    }

    std::unordered_set<std::uint64_t> seen;
    std::vector<Edge> edges;
    std::vector<std::size_t> deg(n, 0);
    edges.reserve(target_edges + n);

    // Partner for u: intra-class with probability h, otherwise a uniformly
    // chosen node from another class. Returns false on a rejected draw.
    auto try_add = [&](std::uint32_t u) {
        const auto& own = members[static_cast<std::size_t>(labels[u])];
        std::uint32_t v;
        if (edge_rng.uniform() < h) {
            if (own.size() < 2) return false;
            v = own[edge_rng.below(own.size())];
        } else {
            if (c < 2) return false;
            // redraw within the inter-class branch so rejections do not tilt the h split
            do {
                v = static_cast<std::uint32_t>(edge_rng.below(n));
            } while (labels[v] == labels[u]);
        }
        if (v == u) return false;
        const std::uint32_t a = std::min(u, v);
        const std::uint32_t b = std::max(u, v);
        if (!seen.insert(edge_key(a, b)).second) return false;
        edges.push_back({a, b});
        ++deg[a];
        ++deg[b];
        return true;
    };

    const std::size_t max_attempts = 100 * (target_edges + n) + 1000;
    std::size_t attempts = 0;
    for (std::uint32_t u = 0; u < n; ++u) {
        while (deg[u] == 0) {
            if (++attempts > max_attempts) throw DataError("generation", "edge sampling stalled");
            try_add(u);
        }
    }
    while (edges.size() < target_edges) {
        if (++attempts > max_attempts) throw DataError("generation", "edge sampling stalled");
        try_add(static_cast<std::uint32_t>(edge_rng.below(n)));
    }

    Dataset d;
    d.graph = Graph::build(n, std::move(edges));
    d.labels = std::move(labels);
    d.num_classes = spec.num_classes;
    d.features = RealMatrix(n, spec.feature_dim);
    RealMatrix means(c, spec.feature_dim);
    for (double& x : means.data) x = feat_rng.normal();
    const double s = spec.feature_signal_strength;
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = static_cast<std::size_t>(d.labels[i]);
        for (std::size_t k = 0; k < spec.feature_dim; ++k) {
            d.features(i, k) = s * means(y, k) + (1.0 - s) * feat_rng.normal();
        }
    }
    return d;
}

EdgeMask sample_edge_drop_mask(const Graph& g, double p_drop, Rng& rng) {
    if (!(p_drop >= 0.0 && p_drop < 1.0)) throw ParameterError("p_drop must lie in [0, 1)");
    EdgeMask keep(g.num_edges(), 1);
    if (p_drop == 0.0) return keep;
    for (auto& k : keep) k = rng.uniform() >= p_drop ? 1 : 0;
    return keep;
}

}  // namespace gesc::graph
