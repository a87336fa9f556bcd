#include <doctest.h>

#include <cmath>
#include <numbers>

#include "gesc/errors.hpp"
#include "gesc/model.hpp"
#include "gesc/optimizer.hpp"
#include "gesc/train.hpp"
#include "support.hpp"

using namespace gesc;
using namespace gesc::model;
using testing_support::random_params;
using testing_support::tiny_config;
using testing_support::tiny_dataset;

namespace {

RealMatrix mat(std::size_t r, std::size_t c, std::vector<double> v) {
    RealMatrix m(r, c);
    m.data = std::move(v);
    return m;
}

// softmax / CE / JS written out directly
std::vector<double> softmax(std::span<const double> l, double t) {
    double mx = -1e300;
    for (double x : l) mx = std::max(mx, x / t);
    std::vector<double> p(l.size());
    double s = 0;
    for (std::size_t k = 0; k < l.size(); ++k) s += (p[k] = std::exp(l[k] / t - mx));
    for (double& x : p) x /= s;
    return p;
}

double ce_oracle(const RealMatrix& l, const std::vector<std::int32_t>& y, const graph::NodeMask& m) {
    double s = 0;
    int n = 0;
    for (std::size_t i = 0; i < l.rows; ++i) {
        if (!m[i]) continue;
        s -= std::log(softmax(l.row(i), 1.0)[y[i]]);
        ++n;
    }
    return s / n;
}

double js_oracle(const RealMatrix& a, const RealMatrix& b, double t) {
    double s = 0;
    for (std::size_t i = 0; i < a.rows; ++i) {
        const auto p = softmax(a.row(i), t), q = softmax(b.row(i), t);
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double m = 0.5 * (p[k] + q[k]);
            if (p[k] > 0) s += 0.5 * p[k] * std::log(p[k] / m);
            if (q[k] > 0) s += 0.5 * q[k] * std::log(q[k] / m);
        }
    }
    return s / a.rows;
}

bool all_finite(ModelParams& g) {
    for (auto& t : g.tensors())
        for (double v : t.data)
            if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

TEST_CASE("complex lift") {
    const auto x = mat(1, 1, {2.0});
    const auto h = complex_lift(x, mat(1, 1, {0.5}), mat(1, 1, {-0.25}));
    CHECK(h.at(0, 0) == core::cplx(1.0, -0.5));
    Rng rng(1);
    RealMatrix x2(3, 2), wr(2, 4), wi(2, 4);
    for (auto& v : x2.data) v = rng.normal();
    for (auto& v : wr.data) v = rng.normal();
    const auto real = complex_lift(x2, wr, wi);
    for (double v : real.im()) CHECK(v == 0.0);
    const auto zero = complex_lift(RealMatrix(3, 2), wr, wr);
    for (double v : zero.re()) CHECK(v == 0.0);
    CHECK_THROWS_AS(complex_lift(RealMatrix(3, 3), wr, wi), DimensionError);
}

TEST_CASE("cross entropy") {
    const std::vector<std::int32_t> y{0, 1, 2};
    const graph::NodeMask all{1, 1, 1};
    CHECK(cross_entropy(RealMatrix(3, 3), y, all) == doctest::Approx(std::log(3.0)));
    const auto sharp = mat(1, 2, {0.0, 80.0});
    CHECK(cross_entropy(sharp, {1}, {1}) < 1e-30);
    const auto l = mat(1, 2, {0.0, std::log(3.0)});
    CHECK(cross_entropy(l, {1}, {1}) == doctest::Approx(-std::log(0.75)).epsilon(1e-14));
    CHECK(cross_entropy(l, {1}, {1}) == doctest::Approx(0.2877).epsilon(1e-4));
    try {
        cross_entropy(l, {1}, {0});
        FAIL("empty mask accepted");
    } catch (const DataError& e) {
        CHECK(e.kind() == "split");
    }
    Rng rng(2);
    RealMatrix r(6, 4);
    for (auto& v : r.data) v = 4 * rng.normal();
    const std::vector<std::int32_t> y6{0, 3, 2, 1, 1, 0};
    const graph::NodeMask m6{1, 0, 1, 1, 0, 1};
    CHECK(cross_entropy(r, y6, m6) == doctest::Approx(ce_oracle(r, y6, m6)).epsilon(1e-13));
}

TEST_CASE("JS consistency") {
    Rng rng(3);
    RealMatrix a(5, 3), b(5, 3);
    for (auto& v : a.data) v = 3 * rng.normal();
    for (auto& v : b.data) v = 3 * rng.normal();
    CHECK(js_consistency(a, a, 1.0) == 0.0);
    const auto p = mat(1, 2, {1000, 0}), q = mat(1, 2, {0, 1000});
    CHECK(std::abs(js_consistency(p, q, 1.0) - std::numbers::ln2) < 1e-6);
    CHECK(js_consistency(a, b, 0.7) == js_consistency(b, a, 0.7));
    CHECK(js_consistency(a, b, 0.7) == doctest::Approx(js_oracle(a, b, 0.7)).epsilon(1e-12));
    for (int t = 0; t < 200; ++t) {
        for (auto& v : a.data) v = 20 * rng.normal();
        for (auto& v : b.data) v = 20 * rng.normal();
        const double js = js_consistency(a, b, rng.uniform(0.1, 3));
        CHECK(js >= 0.0);
        CHECK(js <= std::numbers::ln2);
    }
    CHECK_THROWS_AS(js_consistency(a, RealMatrix(5, 2), 1.0), DimensionError);
}

TEST_CASE("total loss composition") {
    auto cfg = tiny_config();
    const auto d = tiny_dataset(4);
    const auto p = random_params(cfg, d, 4);
    SUBCASE("lambda 0 gives CE exactly") {
        cfg.lambda_js = 0.0;
        Rng rng(1);
        const auto t = total_loss(p, cfg, d, rng);
        CHECK(t.total == t.ce);
        CHECK_FALSE(t.has_js);
    }
    SUBCASE("no drop, no dropout: the JS passes coincide") {
        cfg.p_edge_drop = 0.0;
        cfg.dropout = 0.0;
        Rng rng(1);
        const auto t = total_loss(p, cfg, d, rng);
        CHECK(t.js == 0.0);
    }
    SUBCASE("CE + 0.5 JS against independent oracles") {
        cfg.lambda_js = 0.5;
        cfg.p_edge_drop = 0.5;
        Rng rng(1);
        const auto t = total_loss(p, cfg, d, rng);
        const double ce = ce_oracle(t.clean.logits, d.labels, d.train_mask);
        const double js = js_oracle(t.view1.logits, t.view2.logits, cfg.temperature);
        CHECK(t.ce == doctest::Approx(ce).epsilon(1e-13));
        CHECK(t.js == doctest::Approx(js).epsilon(1e-12));
        CHECK(t.total == doctest::Approx(ce + 0.5 * js).epsilon(1e-12));
        CHECK(t.mask1 != t.mask2);
        // the clean pass sees every edge
        CHECK(t.clean_mask.empty());
    }
}

TEST_CASE("forward determinism, readout layout and degenerate graphs") {
    auto cfg = tiny_config();
    const auto d = tiny_dataset(5);
    const auto p = random_params(cfg, d, 5);
    const auto a = model_forward(p, cfg, d.graph, d.features);
    const auto b = model_forward(p, cfg, d.graph, d.features);
    CHECK(a.logits == b.logits);

    // readout of one complex scalar
    model::ModelConfig c1;
    c1.layer.dim = 1;
    c1.layer.heads = 1;
    c1.layers = 1;
    c1.layernorm_eps = 1e-12;
    Rng rng(1);
    auto p1 = ModelParams::init(c1, 1, 2, 0, rng);
    core::ComplexMatrix h(1, 1);
    h.set(0, 0, {1, 2});
    // z = (1, 2); LayerNorm of (1, 2) is (-1, 1); the stub classifier reads it back
    p1.cls = mat(2, 2, {1, 0, 0, 1});
    p1.cls_bias = {0, 0};
    const auto l = readout_logits(p1, c1, h);
    CHECK(l(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(l(0, 1) == doctest::Approx(1.0).epsilon(1e-9));

    // isolated nodes
    graph::Dataset iso = d;
    iso.graph = graph::Graph::build(6, {});
    auto pi = random_params(cfg, iso, 6);
    Rng r2(3);
    auto tape = total_loss(pi, cfg, iso, r2);
    for (double v : tape.clean.logits.data) CHECK(std::isfinite(v));
    auto g = backward(pi, cfg, iso.graph, iso.features, tape);
    CHECK(all_finite(g));
    CHECK_THROWS_AS(backward(pi, cfg, iso.graph, iso.features, tape), Error);
}

TEST_CASE("readout z is [Re h, Im h]") {
    auto cfg = tiny_config();
    cfg.layers = 1;
    const auto d = tiny_dataset(6);
    const auto p = random_params(cfg, d, 6);
    const auto t = model_forward(p, cfg, d.graph, d.features);
    const auto& out = t.layers.back().output;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(t.z(i, k) == out.at(i, k).real());
            CHECK(t.z(i, 4 + k) == out.at(i, k).imag());
        }
}

TEST_CASE("parameters off the CE path get zero gradient") {
    // one layer; nodes 4-5 only touch each other and carry no training label
    auto cfg = tiny_config();
    cfg.layers = 1;
    cfg.lambda_js = 0.0;
    auto d = tiny_dataset(7);
    d.graph = graph::Graph::build(6, {{0, 1}, {1, 2}, {2, 3}, {4, 5}});
    auto p = random_params(cfg, d, 7);
    Rng rng(2);
    auto t = total_loss(p, cfg, d, rng);
    auto g = backward(p, cfg, d.graph, d.features, t);
    CHECK(g.layers[0].theta[3] == 0.0);
    CHECK(g.layers[0].theta[0] != 0.0);
}

TEST_CASE("Adam") {
    auto cfg = tiny_config();
    const auto d = tiny_dataset(8);
    auto p = random_params(cfg, d, 8);
    const auto p0 = p;
    optim::AdamConfig ac;
    ac.weight_decay = 0.0;
    optim::Adam zero(ac);
    auto g = p.zeros_like();
    zero.step(p, g);
    CHECK(p.tensors()[0].data[0] == p0.lift_re.data[0]);
    for (std::size_t t = 0; t < p.tensors().size(); ++t) {
        auto a = p.tensors()[t].data;
        auto b = const_cast<ModelParams&>(p0).tensors()[t].data;
        CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
    // first step moves each coordinate by ~lr against the gradient sign
    optim::Adam first(ac);
    Rng rng(4);
    for (auto& t : g.tensors())
        for (double& v : t.data) v = rng.normal();
    auto q = p0;
    first.step(q, g);
    auto qt = q.tensors(), gt = g.tensors();
    auto pt = const_cast<ModelParams&>(p0).tensors();
    for (std::size_t t = 0; t < qt.size(); ++t)
        for (std::size_t k = 0; k < qt[t].data.size(); ++k) {
            const double delta = qt[t].data[k] - pt[t].data[k];
            CHECK(delta == doctest::Approx(-1e-3 * (gt[t].data[k] > 0 ? 1 : -1)).epsilon(1e-4));
        }
    // decoupled decay hits only decay tensors
    ac.weight_decay = 0.1;
    ac.lr = 0.5;
    optim::Adam decay(ac);
    auto r = p0;
    auto zg = r.zeros_like();
    decay.step(r, zg);
    CHECK(r.lift_re.data[0] == doctest::Approx(p0.lift_re.data[0] * (1 - 0.05)));
    CHECK(r.cls_bias == p0.cls_bias);
    CHECK(r.layers[0].theta == p0.layers[0].theta);
}

TEST_CASE("training sanity") {
    SUBCASE("separable two-class graph reaches train accuracy 1") {
        graph::SyntheticSpec s{120, 2, 6, 0.9, 4.0, 1.0, 3};
        const auto d = graph::make_splits(graph::generate_synthetic(s), 10, 1);
        auto mc = tiny_config();
        mc.layer.dim = 8;
        config::TrainConfig tc;
        tc.max_epochs = 200;
        tc.patience = 1000;
        tc.adam.lr = 1e-2;
        const auto res = train::train(d, mc, tc);
        double best_train = 0;
        for (const auto& e : res.history) best_train = std::max(best_train, e.train_acc);
        CHECK(best_train == 1.0);
    }
    SUBCASE("patience 1 with lr 0 stops after two epochs") {
        const auto d = tiny_dataset(9);
        config::TrainConfig tc;
        tc.patience = 1;
        tc.adam.lr = 0.0;
        tc.adam.weight_decay = 0.0;
        const auto res = train::train(d, tiny_config(), tc);
        CHECK(res.history.size() == 2);
        CHECK(res.stopped_early);
        CHECK(res.best_epoch == 1);
    }
    SUBCASE("fixed seed reproduces the history") {
        const auto d = tiny_dataset(10);
        config::TrainConfig tc;
        tc.max_epochs = 15;
        tc.seed = 77;
        const auto a = train::train(d, tiny_config(), tc), b = train::train(d, tiny_config(), tc);
        REQUIRE(a.history.size() == b.history.size());
        for (std::size_t k = 0; k < a.history.size(); ++k) {
            CHECK(a.history[k].loss_ce == b.history[k].loss_ce);
            CHECK(a.history[k].loss_js == b.history[k].loss_js);
            CHECK(a.history[k].val_acc == b.history[k].val_acc);
        }
    }
    SUBCASE("loss decreases over 50 steps") {
        const auto d = tiny_dataset(11);
        auto mc = tiny_config();
        auto p = random_params(mc, d, 11);
        optim::Adam opt({});
        auto loss = [&](const ModelParams& q) {
            auto c = mc;
            c.dropout = 0.0;
            c.p_edge_drop = 0.0;
            Rng r(1);
            return total_loss(q, c, d, r).total;
        };
        const double before = loss(p);
        for (int k = 0; k < 50; ++k) {
            Rng r(100 + k);
            auto t = total_loss(p, mc, d, r);
            auto g = backward(p, mc, d.graph, d.features, t);
            opt.step(p, g);
        }
        CHECK(loss(p) < before);
    }
}

TEST_CASE("accuracy and tie rule") {
    const std::vector<std::int32_t> y{0, 1, 1, 0};
    const graph::NodeMask m{1, 1, 1, 1};
    CHECK(accuracy(mat(4, 2, {5, 0, 0, 5, 0, 5, 5, 0}), y, m) == 1.0);
    CHECK(accuracy(mat(4, 2, {0, 5, 5, 0, 5, 0, 0, 5}), y, m) == 0.0);
    CHECK(accuracy(RealMatrix(4, 2), y, m) == 0.5);
    for (auto c : predictions(RealMatrix(4, 2))) CHECK(c == 0);
    CHECK_THROWS_AS(accuracy(RealMatrix(4, 2), y, {0, 0, 0, 0}), DataError);
}
