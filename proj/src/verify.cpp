#include "gesc/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "gesc/errors.hpp"
#include "gesc/train.hpp"

namespace gesc::verify {

using core::ConstCView;
using core::CView;
using core::ComplexVector;
using core::cplx;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kGaugeStream = 0x6a09;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

double frob(const ComplexMatrix& m) {
    double s = 0.0;
    for (double v : m.re()) s += v * v;
    for (double v : m.im()) s += v * v;
    return std::sqrt(s);
}

void rotate_rows(ComplexMatrix& h, const std::vector<double>& phases, double sign) {
    for (std::size_t i = 0; i < h.rows(); ++i) {
        const cplx u = std::polar(1.0, sign * phases[i]);
        CView row = h.row(i);
        for (std::size_t k = 0; k < h.cols(); ++k) row.set(k, u * row[k]);
    }
}

struct Instance {
    layer::LayerConfig cfg;
    layer::LayerParams params;
    graph::Graph graph;
    ComplexMatrix h;
};

/// Random small layer with non-neutral gates, random phases and state scales.
Instance random_instance(Rng& rng) {
    Instance in;
    auto& cfg = in.cfg;
    const std::size_t n = 2 + rng.below(15);
    cfg.dim = 2 + rng.below(7);
    cfg.heads = 1 + rng.below(3);
    cfg.eta_sic = rng.uniform();
    const double eps_choices[] = {1e-6, 1e-4, 1e-2, 1.0};
    cfg.epsilon = eps_choices[rng.below(4)];
    cfg.lambda_mix = rng.uniform();
    cfg.attention = static_cast<layer::AttentionMode>(rng.below(3));
    cfg.kappa = 2.0 * rng.uniform();
    cfg.delta = 0.1 + 2.0 * rng.uniform();
    cfg.sic_position = rng.bernoulli(0.3) ? layer::SicPosition::post_attention
                                          : layer::SicPosition::pre_attention;
    cfg.sic_rank = 1 + rng.below(std::min<std::size_t>(cfg.dim, 4));
    if (rng.bernoulli(0.5)) cfg.sic_rank = 1;
    cfg.param_mode = rng.bernoulli(0.2) ? layer::ParamMode::diagonal : layer::ParamMode::full;
    cfg.additive = rng.bernoulli(0.1);

    std::vector<graph::Edge> edges;
    const double density = 0.1 + 0.6 * rng.uniform();
    for (std::uint32_t a = 0; a < n; ++a) {
        for (std::uint32_t b = a + 1; b < n; ++b) {
            if (rng.bernoulli(density)) edges.push_back({a, b});
        }
    }
    in.graph = graph::Graph::build(n, edges);
    in.params = layer::LayerParams::init(cfg, in.graph.num_edges(), rng);
    auto& p = in.params;
    const double wscale = 3.0 * rng.uniform();
    for (auto& w : p.W) {
        for (double& x : w.re()) x *= wscale;
        for (double& x : w.im()) x *= wscale;
    }
    for (auto& r : p.R_W) {
        for (double& x : r) x = 2.0 * rng.uniform();
    }
    for (auto& r : p.R_Q) {
        for (double& x : r) x = 2.0 * rng.uniform();
    }
    if (rng.bernoulli(0.05)) {
        for (auto& w : p.W) {
            for (double& x : w.re()) x = 0.0;
            for (double& x : w.im()) x = 0.0;
        }
        for (auto& r : p.R_W) std::fill(r.begin(), r.end(), 0.0);
    }
    for (double& t : p.theta) t = rng.uniform(-std::numbers::pi, std::numbers::pi);
    for (std::size_t m = 0; m < cfg.heads; ++m) {
        p.sign_scale[m] = rng.uniform(-5.0, 5.0);
        p.sign_shift[m] = rng.uniform(-3.0, 3.0);
        for (double& a : p.mix_weight[m]) a = rng.uniform(-2.0, 2.0);
        p.mix_bias[m] = rng.uniform(-2.0, 2.0);
        p.log_gamma[m] = rng.uniform(-2.0, 2.0);
    }
    for (double& b : p.modrelu_bias) b = rng.uniform(-1.0, 1.0);

    in.h = ComplexMatrix(n, cfg.dim);
    for (std::size_t i = 0; i < n; ++i) {
        if (rng.bernoulli(0.05)) continue;
        const double scale = std::exp(rng.uniform(-3.0, 3.0));
        CView row = in.h.row(i);
        for (std::size_t k = 0; k < cfg.dim; ++k) {
            row.set(k, scale * cplx(rng.normal(), rng.normal()));
        }
    }
    return in;
}

/// Frozen-coefficient linearisation of the residual + aggregation map.
class FrozenMap {
public:
    FrozenMap(const layer::LayerParams& p, const layer::LayerConfig& cfg, const graph::Graph& g,
              const layer::LayerTape& tape)
        : p_(p), cfg_(cfg), g_(g), tape_(tape) {
        for (std::size_t m = 0; m < cfg.heads; ++m) w_.push_back(layer::source_matrix(p, cfg, m));
        // alpha C U W per active arc and head, formed column by column
        const std::size_t d = cfg.dim;
        ComplexVector col(d);
        for (std::size_t m = 0; m < cfg.heads; ++m) {
            for (std::size_t i = 0; i < g.num_nodes(); ++i) {
                for (std::size_t a = g.row_ptr()[i]; a < g.row_ptr()[i + 1]; ++a) {
                    if (!tape.arc_active[a]) continue;
                    const auto& arc = g.arcs()[a];
                    const double ph = cfg.additive ? 0.0 : arc.orientation * p.theta[arc.edge];
                    const cplx u = std::polar(tape.heads[m].arcs[a].alpha, ph);
                    Block b{ComplexMatrix(d, d), arc.source, i};
                    for (std::size_t k = 0; k < d; ++k) {
                        for (std::size_t r = 0; r < d; ++r) col.set(r, u * w_[m].at(r, k));
                        const auto c = gate_op(m, a, i, col);
                        for (std::size_t r = 0; r < d; ++r) b.op.set(r, k, c[r]);
                    }
                    blocks_.push_back(std::move(b));
                }
            }
        }
    }

    /// C_ij x: the frozen gate/SIC operator of arc `a` (target i) in head m.
    ComplexVector gate_op(std::size_t m, std::size_t a, std::size_t i, ConstCView x) const {
        const auto& rec = tape_.heads[m].arcs[a];
        const double eta = cfg_.effective_eta();
        ComplexVector out(x);
        if (cfg_.additive) return out;
        ComplexVector px;
        if (eta > 0.0) px = layer::sic_project(cfg_, tape_.input.row(i), x);
        if (cfg_.sic_position == layer::SicPosition::pre_attention) {
            // g xi (x - eta P x) + (1 - g) x
            for (std::size_t k = 0; k < x.size(); ++k) {
                cplx v = x[k];
                if (eta > 0.0) v = rec.g * rec.xi * (x[k] - eta * px[k]) + (1.0 - rec.g) * x[k];
                else v = (rec.g * rec.xi + 1.0 - rec.g) * x[k];
                out.set(k, v);
            }
        } else {
            const double c = rec.g * rec.xi + 1.0 - rec.g;
            for (std::size_t k = 0; k < x.size(); ++k) {
                out.set(k, c * (eta > 0.0 ? x[k] - eta * px[k] : x[k]));
            }
        }
        return out;
    }

    ComplexMatrix apply(const ComplexMatrix& x) const {
        ComplexMatrix y = x;
        ComplexVector t(cfg_.dim);
        for (const auto& b : blocks_) {
            core::matvec(b.op, x.row(b.source), t.view());
            core::axpy(1.0, t, y.row(b.target));
        }
        return y;
    }

    ComplexMatrix adjoint(const ComplexMatrix& y) const {
        ComplexMatrix x = y;
        ComplexVector t(cfg_.dim);
        for (const auto& b : blocks_) {
            core::matvec_adjoint(b.op, y.row(b.target), t.view());
            core::axpy(1.0, t, x.row(b.source));
        }
        return x;
    }

    const ComplexMatrix& w(std::size_t m) const { return w_[m]; }

private:
    const layer::LayerParams& p_;
    const layer::LayerConfig& cfg_;
    const graph::Graph& g_;
    const layer::LayerTape& tape_;
    std::vector<ComplexMatrix> w_;
    struct Block {
        ComplexMatrix op;
        std::size_t source;
        std::size_t target;
    };
    std::vector<Block> blocks_;
};

ComplexMatrix random_like(std::size_t n, std::size_t d, Rng& rng) {
    ComplexMatrix m(n, d);
    for (double& v : m.re()) v = rng.normal();
    for (double& v : m.im()) v = rng.normal();
    return m;
}

/// Largest ratio |A x| / |x| found by power iteration on A^H A and by sampling.
template <typename Apply, typename Adjoint>
double operator_ratio(Apply&& apply, Adjoint&& adjoint, std::size_t n, std::size_t d,
                      std::size_t samples, Rng& rng) {
    double best = 0.0;
    auto ratio = [&](const ComplexMatrix& x) {
        const double nx = frob(x);
        return nx > 0.0 ? frob(apply(x)) / nx : 0.0;
    };
    for (std::size_t s = 0; s < samples; ++s) best = std::max(best, ratio(random_like(n, d, rng)));
    ComplexMatrix x = random_like(n, d, rng);
    for (std::size_t it = 0; it < 300; ++it) {
        const double nx = frob(x);
        if (nx == 0.0) break;
        for (double& v : x.re()) v /= nx;
        for (double& v : x.im()) v /= nx;
        best = std::max(best, ratio(x));
        x = adjoint(apply(x));
    }
    return best;
}

}  // namespace

// ---- gauge --------------------------------------------------------------------

void perturb_parameters(model::ModelParams& p, Rng& rng) {
    for (auto& lp : p.layers) {
        for (double& t : lp.theta) t = rng.uniform(-std::numbers::pi, std::numbers::pi);
        for (double& c : lp.sign_scale) c = rng.uniform(-3.0, 3.0);
        for (double& d : lp.sign_shift) d = rng.uniform(-1.0, 1.0);
        for (auto& a : lp.mix_weight) {
            for (double& x : a) x = rng.uniform(-1.0, 1.0);
        }
        for (double& b : lp.mix_bias) b = rng.uniform(-1.0, 1.0);
        for (double& g : lp.log_gamma) g = rng.uniform(-1.0, 1.0);
        for (double& b : lp.modrelu_bias) b = rng.uniform(-0.5, 0.5);
    }
}

GaugePerturbation GaugePerturbation::sample(std::size_t num_nodes, double alpha_scale,
                                            std::uint64_t seed) {
    if (!(alpha_scale >= 0.0 && alpha_scale <= 1.0)) {
        throw ParameterError("alpha_scale must lie in [0, 1]");
    }
    GaugePerturbation g;
    g.alpha_scale = alpha_scale;
    g.rng_seed = seed;
    Rng rng(seed, kGaugeStream);
    g.node_phases.resize(num_nodes);
    for (double& phi : g.node_phases) phi = 2.0 * std::numbers::pi * rng.uniform() * alpha_scale;
    return g;
}

GaugePerturbation GaugePerturbation::inverse() const {
    GaugePerturbation g = *this;
    for (double& phi : g.node_phases) phi = -phi;
    return g;
}

void apply_gauge(const GaugePerturbation& g, const graph::Graph& graph, ComplexMatrix& h,
                 std::vector<double>& theta) {
    if (g.node_phases.size() != graph.num_nodes() || h.rows() != graph.num_nodes() ||
        theta.size() != graph.num_edges()) {
        throw DimensionError("apply_gauge: shapes disagree with the graph");
    }
    rotate_rows(h, g.node_phases, 1.0);
    const auto edges = graph.edges();
    for (std::size_t e = 0; e < edges.size(); ++e) {
        theta[e] += g.node_phases[edges[e].b] - g.node_phases[edges[e].a];
    }
}

StackRun run_layers(const model::ModelParams& p, const model::ModelConfig& cfg,
                    const graph::Graph& g, const ComplexMatrix& h0, const graph::EdgeMask* mask) {
    StackRun r;
    ComplexMatrix h = h0;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        r.tapes.push_back(layer::layer_forward(p.layers[l], cfg.layer, g, h, mask));
        h = r.tapes.back().output;
    }
    r.output = std::move(h);
    return r;
}

nlohmann::ordered_json Report::to_json() const {
    nlohmann::ordered_json j;
    j["property"] = property;
    j["trials"] = trials;
    j["max_deviation"] = std::isfinite(max_deviation) ? nlohmann::ordered_json(max_deviation)
                                                      : nlohmann::ordered_json(nullptr);
    j["threshold"] = std::isfinite(threshold) ? nlohmann::ordered_json(threshold)
                                              : nlohmann::ordered_json("inf");
    j["pass"] = pass;
    nlohmann::ordered_json a = nlohmann::ordered_json::object();
    for (const auto& [k, v] : aux) a[k] = v;
    j["aux"] = a;
    return j;
}

Report Report::from_json(const nlohmann::json& j) {
    Report r;
    r.property = j.at("property").get<std::string>();
    r.trials = j.at("trials").get<std::size_t>();
    r.max_deviation = j.at("max_deviation").is_null() ? kInf : j.at("max_deviation").get<double>();
    r.threshold = j.at("threshold").is_string() ? kInf : j.at("threshold").get<double>();
    r.pass = j.at("pass").get<bool>();
    for (const auto& [k, v] : j.at("aux").items()) r.aux[k] = v.get<double>();
    return r;
}

std::vector<Report> gauge_fuzz(const model::ModelParams& p, const model::ModelConfig& cfg,
                               const graph::Graph& g, const graph::RealMatrix& features,
                               GaugeVariant variant, const GaugeOptions& opts) {
    const bool full = variant == GaugeVariant::full;
    const std::string name = full ? "gauge_equivariance" : "gauge_without_transport";
    const ComplexMatrix h0 = model::complex_lift(features, p.lift_re, p.lift_im);
    const StackRun base = run_layers(p, cfg, g, h0);
    const auto logits0 = model::readout_logits(p, cfg, base.output);
    const auto pred0 = model::predictions(logits0);
    const double base_norm = frob(base.output);
    const std::size_t n = g.num_nodes();

    std::vector<Report> out;
    std::vector<double> means;
    for (std::size_t s = 0; s < opts.alpha_scales.size(); ++s) {
        const double scale = opts.alpha_scales[s];
        Report r;
        r.property = name + "/alpha_scale=" + fmt(scale);
        r.trials = opts.trials;
        r.threshold = full ? opts.threshold : kInf;
        double hid_max = 0.0, kl_max = 0.0, rel_sum = 0.0, l2_max = 0.0;
        double agree_min = 1.0, agree_sum = 0.0;
        for (std::size_t t = 0; t < opts.trials; ++t) {
            const auto pert = GaugePerturbation::sample(
                n, scale, opts.seed ^ splitmix64((s << 32) + t));
            model::ModelParams q = p;
            ComplexMatrix h = h0;
            if (full) {
                for (auto& lp : q.layers) {
                    ComplexMatrix scratch(n, cfg.layer.dim);
                    apply_gauge(pert, g, scratch, lp.theta);
                }
            }
            rotate_rows(h, pert.node_phases, 1.0);
            const StackRun run = run_layers(q, cfg, g, h);

            ComplexMatrix expect = base.output;
            rotate_rows(expect, pert.node_phases, 1.0);
            double dev = 0.0, diff2 = 0.0;
            for (std::size_t x = 0; x < expect.re().size(); ++x) {
                const double dr = run.output.re()[x] - expect.re()[x];
                const double di = run.output.im()[x] - expect.im()[x];
                dev = std::max(dev, std::hypot(dr, di));
                diff2 += dr * dr + di * di;
            }
            hid_max = std::max(hid_max, dev);
            rel_sum += base_norm > 0.0 ? std::sqrt(diff2) / base_norm : 0.0;

            for (std::size_t l = 0; l < cfg.layers; ++l) {
                for (std::size_t m = 0; m < cfg.layer.heads; ++m) {
                    const auto& a0 = base.tapes[l].heads[m].arcs;
                    const auto& a1 = run.tapes[l].heads[m].arcs;
                    for (std::size_t i = 0; i < n; ++i) {
                        double kl = 0.0;
                        for (std::size_t a = g.row_ptr()[i]; a < g.row_ptr()[i + 1]; ++a) {
                            const double pa = a0[a].alpha;
                            const double qa = std::max(a1[a].alpha, 1e-300);
                            if (pa > 0.0) kl += pa * std::log(pa / qa);
                        }
                        kl_max = std::max(kl_max, kl);
                    }
                }
            }

            ComplexMatrix back = run.output;
            rotate_rows(back, pert.node_phases, -1.0);
            const auto logits1 = model::readout_logits(p, cfg, back);
            const auto pred1 = model::predictions(logits1);
            std::size_t agree = 0;
            double l2 = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                agree += pred0[i] == pred1[i];
                double row = 0.0;
                for (std::size_t k = 0; k < logits0.cols; ++k) {
                    const double dl = logits0(i, k) - logits1(i, k);
                    row += dl * dl;
                }
                l2 += std::sqrt(row);
            }
            const double frac = n ? static_cast<double>(agree) / static_cast<double>(n) : 1.0;
            agree_min = std::min(agree_min, frac);
            agree_sum += frac;
            l2_max = std::max(l2_max, n ? l2 / static_cast<double>(n) : 0.0);
        }
        const double trials = static_cast<double>(std::max<std::size_t>(opts.trials, 1));
        r.aux["hidden_max_deviation"] = hid_max;
        r.aux["hidden_mean_relative_deviation"] = rel_sum / trials;
        r.aux["attention_kl_max"] = kl_max;
        r.aux["prediction_agreement_min"] = agree_min;
        r.aux["prediction_agreement_mean"] = agree_sum / trials;
        r.aux["logit_l2_max"] = l2_max;
        r.max_deviation = full ? std::max({hid_max, kl_max, 1.0 - agree_min}) : hid_max;
        r.finalize();
        means.push_back(rel_sum / trials);
        out.push_back(std::move(r));
    }
    if (!full) {
        Report trend;
        trend.property = name + "/trend";
        trend.trials = opts.trials;
        trend.threshold = 0.0;
        double violations = 0.0;
        for (std::size_t s = 1; s < means.size(); ++s) {
            if (!(means[s] > means[s - 1])) violations += 1.0;
        }
        trend.max_deviation = violations;
        for (std::size_t s = 0; s < means.size(); ++s) {
            trend.aux["mean_relative_deviation@" + fmt(opts.alpha_scales[s])] = means[s];
        }
        trend.finalize();
        out.push_back(std::move(trend));
    }
    return out;
}

// ---- bounds -------------------------------------------------------------------

double spectral_norm(const ComplexMatrix& w, std::size_t min_iters, std::size_t max_iters) {
    const std::size_t d = w.cols();
    if (d == 0) return 0.0;
    Rng rng(0x5eed, 0x5bec);
    ComplexVector v(d), t(w.rows()), u(d);
    for (std::size_t k = 0; k < d; ++k) v.set(k, {rng.normal(), rng.normal()});
    double est = 0.0;
    for (std::size_t it = 0; it < max_iters; ++it) {
        const double nv = core::norm2(v);
        if (nv == 0.0) return 0.0;
        for (std::size_t k = 0; k < d; ++k) v.set(k, v[k] / nv);
        core::matvec(w, v, t.view());
        const double next = core::norm2(t);
        core::matvec_adjoint(w, t, u.view());
        v = u;
        const bool settled = std::abs(next - est) <= 1e-15 * std::max(next, 1e-300);
        est = next;
        if (it + 1 >= min_iters && settled) break;
    }
    return est;
}

BoundSlack layer_bound_slack(const layer::LayerParams& p, const layer::LayerConfig& cfg,
                             const graph::Graph& g, const ComplexMatrix& h) {
    const auto tape = layer::layer_forward(p, cfg, g, h);
    BoundSlack s;
    const std::size_t n = g.num_nodes();
    std::vector<double> wnorm(cfg.heads);
    for (std::size_t m = 0; m < cfg.heads; ++m) {
        wnorm[m] = spectral_norm(layer::source_matrix(p, cfg, m));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (g.degree(i) == 0) continue;
        double hmax = 0.0;
        for (const auto& arc : g.in_arcs(i)) hmax = std::max(hmax, core::norm2(h.row(arc.source)));
        double budget = core::norm2(layer::sic_project(cfg, h.row(i), h.row(i)));
        for (std::size_t m = 0; m < cfg.heads; ++m) {
            const auto& ht = tape.heads[m];
            s.perhead = std::max(s.perhead, core::norm2(ht.aggregate.row(i)) - wnorm[m] * hmax);
            for (std::size_t a = g.row_ptr()[i]; a < g.row_ptr()[i + 1]; ++a) {
                const auto& arc = g.arcs()[a];
                const auto tr = layer::transport(p, cfg, m, arc, h.row(arc.source));
                budget += ht.arcs[a].alpha * core::norm2(layer::sic_project(cfg, h.row(i), tr));
                s.convexity = std::max(s.convexity, ht.arcs[a].m_norm - core::norm2(tr));
            }
        }
        const double self =
            core::norm2(layer::sic_project(cfg, h.row(i), tape.pre_norm.row(i)));
        s.self_component = std::max(s.self_component, self - budget);
    }
    return s;
}

std::vector<Report> check_bounds(const BoundOptions& opts) {
    Report per{"perhead_bound", opts.trials, -kInf, opts.tolerance, false, {}};
    Report self{"self_component_bound", opts.trials, -kInf, opts.tolerance, false, {}};
    Report conv{"message_convexity", opts.trials, -kInf, opts.tolerance, false, {}};
    for (std::size_t t = 0; t < opts.trials; ++t) {
        Rng rng(opts.seed ^ splitmix64(t), 0xb0d5);
        const auto in = random_instance(rng);
        const auto s = layer_bound_slack(in.params, in.cfg, in.graph, in.h);
        per.max_deviation = std::max(per.max_deviation, s.perhead);
        self.max_deviation = std::max(self.max_deviation, s.self_component);
        conv.max_deviation = std::max(conv.max_deviation, s.convexity);
    }
    for (Report* r : {&per, &self, &conv}) r->finalize();
    return {per, self, conv};
}

// ---- Lipschitz ----------------------------------------------------------------

LipschitzResult lipschitz_instance(const layer::LayerParams& p, const layer::LayerConfig& cfg,
                                   const graph::Graph& g, const ComplexMatrix& h,
                                   std::size_t samples, Rng& rng) {
    const auto tape = layer::layer_forward(p, cfg, g, h);
    const FrozenMap f(p, cfg, g, tape);
    const std::size_t n = g.num_nodes();
    const std::size_t d = cfg.dim;
    LipschitzResult res;
    res.max_in_degree = g.max_degree();
    res.g_min = 1.0;
    res.xi_min = 1.0;
    res.lambda_min = 1.0;
    bool any_arc = false;
    for (std::size_t m = 0; m < cfg.heads; ++m) {
        for (std::size_t a = 0; a < g.num_arcs(); ++a) {
            const auto& rec = tape.heads[m].arcs[a];
            res.alpha_max = std::max(res.alpha_max, rec.alpha);
            res.g_min = std::min(res.g_min, rec.g);
            res.xi_min = std::min(res.xi_min, rec.xi);
            any_arc = true;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (g.degree(i) == 0) continue;
        const double hn = core::squared_norm(h.row(i));
        if (hn > 0.0) res.lambda_min = std::min(res.lambda_min, hn / (hn + cfg.epsilon));
    }
    if (!any_arc) res.g_min = res.xi_min = 0.0;
    const double eta = cfg.effective_eta();
    const double factor = 1.0 - res.g_min * res.xi_min * eta * res.lambda_min;
    res.analytic = 1.0;
    res.directional_analytic = 1.0;
    for (std::size_t m = 0; m < cfg.heads; ++m) {
        const double wn = spectral_norm(f.w(m));
        res.analytic += res.alpha_max * static_cast<double>(res.max_in_degree) * wn;
        res.directional_analytic +=
            res.alpha_max * static_cast<double>(res.max_in_degree) * factor * wn;
    }

    res.empirical = operator_ratio([&](const ComplexMatrix& x) { return f.apply(x); },
                                   [&](const ComplexMatrix& y) { return f.adjoint(y); }, n, d,
                                   samples, rng);

    // Directional map: c (one coefficient per node along h_i) -> components of F along h_i.
    std::vector<ComplexVector> unit(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double hn = core::norm2(h.row(i));
        unit[i] = ComplexVector(d);
        if (hn > 0.0) {
            for (std::size_t k = 0; k < d; ++k) unit[i].set(k, h.row(i)[k] / hn);
        }
    }
    auto lift = [&](const ComplexMatrix& c) {
        ComplexMatrix x(n, d);
        for (std::size_t i = 0; i < n; ++i) core::axpy(c.at(i, 0), unit[i], x.row(i));
        return x;
    };
    auto reduce = [&](const ComplexMatrix& x) {
        ComplexMatrix c(n, 1);
        for (std::size_t i = 0; i < n; ++i) c.set(i, 0, core::inner_product(unit[i], x.row(i)));
        return c;
    };
    res.directional_empirical = operator_ratio(
        [&](const ComplexMatrix& c) { return reduce(f.apply(lift(c))); },
        [&](const ComplexMatrix& w) { return reduce(f.adjoint(lift(w))); }, n, 1, samples, rng);

    // Unfrozen map, auxiliary.
    auto pre = [&](const ComplexMatrix& x) { return layer::layer_forward(p, cfg, g, x).pre_norm; };
    const ComplexMatrix base = tape.pre_norm;
    for (std::size_t s = 0; s < samples; ++s) {
        ComplexMatrix dx = random_like(n, d, rng);
        const double step = std::exp(rng.uniform(-8.0, 0.0)) * (frob(h) + 1.0) / (frob(dx) + 1e-300);
        for (double& v : dx.re()) v *= step;
        for (double& v : dx.im()) v *= step;
        ComplexMatrix x = h;
        for (std::size_t k = 0; k < x.re().size(); ++k) {
            x.re()[k] += dx.re()[k];
            x.im()[k] += dx.im()[k];
        }
        ComplexMatrix y = pre(x);
        for (std::size_t k = 0; k < y.re().size(); ++k) {
            y.re()[k] -= base.re()[k];
            y.im()[k] -= base.im()[k];
        }
        const double nd = frob(dx);
        if (nd > 0.0) res.nonlinear_ratio = std::max(res.nonlinear_ratio, frob(y) / nd);
    }
    return res;
}

std::vector<Report> check_lipschitz(const BoundOptions& opts) {
    Report lip{"lipschitz", opts.trials, -kInf, opts.tolerance, false, {}};
    Report dir{"lipschitz_directional", 0, -kInf, opts.tolerance, false, {}};
    double nonlinear_over = 0.0, tight_sum = 0.0;
    std::size_t nonlinear_exceed = 0;
    for (std::size_t t = 0; t < opts.trials; ++t) {
        Rng rng(opts.seed ^ splitmix64(t), 0x11b5);
        const auto in = random_instance(rng);
        const auto r = lipschitz_instance(in.params, in.cfg, in.graph, in.h, 8, rng);
        lip.max_deviation = std::max(lip.max_deviation, r.empirical - r.analytic);
        if (in.cfg.sic_rank == 1) {
            ++dir.trials;
            dir.max_deviation =
                std::max(dir.max_deviation, r.directional_empirical - r.directional_analytic);
            tight_sum += r.analytic - r.directional_analytic;
        }
        nonlinear_over = std::max(nonlinear_over, r.nonlinear_ratio / r.analytic);
        if (r.nonlinear_ratio > r.analytic + opts.tolerance) ++nonlinear_exceed;
    }
    lip.aux["nonlinear_ratio_over_bound_max"] = nonlinear_over;
    lip.aux["nonlinear_exceedances"] = static_cast<double>(nonlinear_exceed);
    dir.aux["mean_tightening"] = dir.trials ? tight_sum / static_cast<double>(dir.trials) : 0.0;
    lip.finalize();
    dir.finalize();
    return {lip, dir};
}

// ---- spectral probe -----------------------------------------------------------

void laplacian_spectrum(const graph::Graph& g, std::vector<double>& values,
                        std::vector<double>& vectors) {
    const std::size_t n = g.num_nodes();
    Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n),
                                                    static_cast<Eigen::Index>(n));
    std::vector<double> inv_sqrt(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (g.degree(i)) inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(g.degree(i)));
    }
    for (const auto& e : g.edges()) {
        const double w = inv_sqrt[e.a] * inv_sqrt[e.b];
        lap(e.a, e.b) -= w;
        lap(e.b, e.a) -= w;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap);
    if (es.info() != Eigen::Success) throw NumericError("Laplacian eigendecomposition failed");
    values.assign(es.eigenvalues().data(), es.eigenvalues().data() + n);
    vectors.assign(es.eigenvectors().data(), es.eigenvectors().data() + n * n);  // column-major
}

std::vector<BandEnergy> spectral_notch_probe(const graph::Graph& g,
                                             const graph::RealMatrix& features,
                                             const model::ModelConfig& cfg, std::size_t depth,
                                             std::uint64_t seed) {
    const std::size_t n = g.num_nodes();
    if (n > 2000) throw ParameterError("spectral probe is limited to N <= 2000 (got " +
                                       std::to_string(n) + ")");
    std::vector<double> vals, vecs;
    laplacian_spectrum(g, vals, vecs);
    const Eigen::Map<const Eigen::MatrixXd> u(vecs.data(), static_cast<Eigen::Index>(n),
                                              static_cast<Eigen::Index>(n));
    auto band_of = [&](std::size_t k) { return n ? 3 * k / n : 0; };
    const char* names[3] = {"low", "mid", "high"};

    std::vector<BandEnergy> rows;
    for (double eta : {0.0, 0.5}) {
        model::ModelConfig c = cfg;
        c.layers = std::max<std::size_t>(depth, 1);
        c.layer.eta_sic = eta;
        Rng rng(seed);
        const auto p = model::ModelParams::init(c, features.cols, 2, g.num_edges(), rng);
        ComplexMatrix h = model::complex_lift(features, p.lift_re, p.lift_im);
        for (std::size_t t = 0; t <= depth; ++t) {
            if (t > 0) h = layer::layer_forward(p.layers[t - 1], c.layer, g, h).output;
            const std::size_t d = h.cols();
            Eigen::MatrixXd hr(n, d), hi(n, d);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t k = 0; k < d; ++k) {
                    hr(i, k) = h.re()[i * d + k];
                    hi(i, k) = h.im()[i * d + k];
                }
            }
            const Eigen::MatrixXd cr = u.transpose() * hr;
            const Eigen::MatrixXd ci = u.transpose() * hi;
            double e[3] = {0, 0, 0};
            double lo[3] = {kInf, kInf, kInf}, hi_v[3] = {-kInf, -kInf, -kInf};
            double total = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const double ek = cr.row(k).squaredNorm() + ci.row(k).squaredNorm();
                e[band_of(k)] += ek;
                total += ek;
                lo[band_of(k)] = std::min(lo[band_of(k)], vals[k]);
                hi_v[band_of(k)] = std::max(hi_v[band_of(k)], vals[k]);
            }
            for (int b = 0; b < 3; ++b) {
                BandEnergy be;
                be.depth = t;
                be.eta_sic = eta;
                be.band = names[b];
                be.energy = std::sqrt(e[b]);
                be.fraction = total > 0.0 ? e[b] / total : 0.0;
                be.lap_min = std::isfinite(lo[b]) ? lo[b] : 0.0;
                be.lap_max = std::isfinite(hi_v[b]) ? hi_v[b] : 0.0;
                rows.push_back(be);
            }
        }
    }
    return rows;
}

void write_csv(std::ostream& out, const std::vector<BandEnergy>& rows) {
    // adjacency eigenvalue = 1 - Laplacian eigenvalue, so "low" Laplacian is "high" adjacency
    out << "depth,eta_sic,band,adjacency_band,energy,fraction,lap_min,lap_max\n";
    for (const auto& r : rows) {
        const std::string adj = r.band == "low" ? "high" : r.band == "high" ? "low" : "mid";
        out << r.depth << ',' << fmt(r.eta_sic) << ',' << r.band << ',' << adj << ','
            << fmt(r.energy) << ',' << fmt(r.fraction) << ',' << fmt(r.lap_min) << ','
            << fmt(r.lap_max) << '\n';
    }
}

// ---- experiment drivers ---------------------------------------------------------

double SweepRow::mean_test() const {
    if (test_acc.empty()) return 0.0;
    double s = 0.0;
    for (double v : test_acc) s += v;
    return s / static_cast<double>(test_acc.size());
}

namespace {

SweepRow run_setting(const graph::Dataset& d, config::RunConfig c, const std::string& label,
                     const std::vector<std::uint64_t>& seeds) {
    SweepRow row;
    row.label = label;
    row.depth = c.model.layers;
    row.eta_sic = c.model.layer.effective_eta();
    row.epsilon = c.model.layer.epsilon;
    row.rank = c.model.layer.sic_rank;
    row.position = c.model.layer.additive ? "none" : layer::to_string(c.model.layer.sic_position);
    for (auto seed : seeds) {
        c.train.seed = seed;
        const auto res = train::train(d, c.model, c.train);
        row.test_acc.push_back(res.best_test);
        row.val_acc.push_back(res.best_val);
    }
    return row;
}

}  // namespace

std::vector<SweepRow> depth_sweep(const graph::Dataset& d, const config::RunConfig& base,
                                  const std::vector<std::size_t>& depths,
                                  const std::vector<std::uint64_t>& seeds) {
    std::vector<SweepRow> rows;
    for (std::size_t depth : depths) {
        for (bool additive : {false, true}) {
            config::RunConfig c = base;
            c.model.layers = depth;
            c.model.layer.additive = additive;
            rows.push_back(run_setting(d, c, additive ? "additive" : "full", seeds));
        }
    }
    return rows;
}

std::vector<SweepRow> sic_ablation_grid(const graph::Dataset& d, const config::RunConfig& base,
                                        const std::vector<std::uint64_t>& seeds) {
    struct Setting {
        const char* label;
        double eta;
        double eps;
        std::size_t rank;
        layer::SicPosition pos;
    };
    using layer::SicPosition;
    const Setting grid[] = {
        {"A1", 0.0, 1e-4, 1, SicPosition::pre_attention},
        {"A2", 0.25, 1e-4, 1, SicPosition::pre_attention},
        {"A3", 0.5, 1e-4, 1, SicPosition::pre_attention},
        {"A4", 0.75, 1e-4, 1, SicPosition::pre_attention},
        {"A5", 1.0, 1e-4, 1, SicPosition::pre_attention},
        {"B1", 0.5, 1e-6, 1, SicPosition::pre_attention},
        {"B2", 0.5, 1e-2, 1, SicPosition::pre_attention},
        {"C1", 0.5, 1e-4, 1, SicPosition::post_attention},
        {"C2", 0.5, 1e-4, 4, SicPosition::pre_attention},
    };
    std::vector<SweepRow> rows;
    for (const auto& s : grid) {
        config::RunConfig c = base;
        c.model.layer.additive = false;
        c.model.layer.eta_sic = s.eta;
        c.model.layer.epsilon = s.eps;
        c.model.layer.sic_rank = std::min(s.rank, c.model.layer.dim);
        c.model.layer.sic_position = s.pos;
        rows.push_back(run_setting(d, c, s.label, seeds));
    }
    return rows;
}

void write_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
    out << "label,depth,eta_sic,epsilon,rank,position,mean_test_acc,seeds,test_acc,val_acc\n";
    for (const auto& r : rows) {
        out << r.label << ',' << r.depth << ',' << fmt(r.eta_sic) << ',' << fmt(r.epsilon) << ','
            << r.rank << ',' << r.position << ',' << fmt(r.mean_test()) << ','
            << r.test_acc.size() << ',';
        for (std::size_t k = 0; k < r.test_acc.size(); ++k) {
            out << (k ? ";" : "") << fmt(r.test_acc[k]);
        }
        out << ',';
        for (std::size_t k = 0; k < r.val_acc.size(); ++k) {
            out << (k ? ";" : "") << fmt(r.val_acc[k]);
        }
        out << '\n';
    }
}

}  // namespace gesc::verify
