#pragma once
// Small hand-built instances shared by the test files.
#include <cmath>
#include <vector>

#include "gesc/graph.hpp"
#include "gesc/model.hpp"
#include "gesc/rng.hpp"
#include "gesc/verify.hpp"

namespace testing_support {

using namespace gesc;

// 6 nodes, 8 edges, 3 classes, random features. Every node has a split.
inline graph::Dataset tiny_dataset(std::uint64_t seed, std::size_t input_dim = 3) {
    graph::Dataset d;
    d.graph = graph::Graph::build(
        6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}, {0, 3}, {1, 4}});
    d.features = graph::RealMatrix(6, input_dim);
    Rng rng(seed, 77);
    for (auto& x : d.features.data) x = rng.normal();
    d.labels = {0, 1, 2, 0, 1, 2};
    d.num_classes = 3;
    d.train_mask = {1, 1, 1, 0, 0, 0};
    d.val_mask = {0, 0, 0, 1, 1, 0};
    d.test_mask = {0, 0, 0, 0, 0, 1};
    return d;
}

inline model::ModelConfig tiny_config() {
    model::ModelConfig c;
    c.layer.dim = 4;
    c.layer.heads = 2;
    c.layers = 2;
    return c;
}

// Initialised and moved off the neutral gate point.
inline model::ModelParams random_params(const model::ModelConfig& cfg, const graph::Dataset& d,
                                        std::uint64_t seed) {
    Rng rng(seed, 5);
    auto p = model::ModelParams::init(cfg, d.feature_dim(), static_cast<std::size_t>(d.num_classes),
                                      d.graph.num_edges(), rng);
    verify::perturb_parameters(p, rng);
    for (auto& t : p.tensors()) {
        if (t.name.find("ln_") != std::string::npos || t.name.find("cls_bias") != std::string::npos) {
            for (auto& v : t.data) v += 0.3 * rng.normal();
        }
    }
    p.project_constraints();
    return p;
}

inline core::ComplexMatrix random_state(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
    core::ComplexMatrix h(n, d);
    for (auto& v : h.re()) v = scale * rng.normal();
    for (auto& v : h.im()) v = scale * rng.normal();
    return h;
}

inline double max_abs_diff(const core::ComplexMatrix& a, const core::ComplexMatrix& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.re().size(); ++k) {
        m = std::max(m, std::abs(a.re()[k] - b.re()[k]));
        m = std::max(m, std::abs(a.im()[k] - b.im()[k]));
    }
    return m;
}

}  // namespace testing_support
