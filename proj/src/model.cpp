#include "gesc/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "gesc/errors.hpp"

namespace gesc::model {

namespace {

constexpr std::uint64_t kLiftStream = 0x11f7;
constexpr std::uint64_t kLayerStream = 0x1a7e;
constexpr std::uint64_t kClassifierStream = 0xc1a5;

void fill_uniform(std::span<double> xs, double bound, Rng& rng) {
    for (double& x : xs) x = rng.uniform(-bound, bound);
}

/// Row-wise log-softmax of logits / t.
void log_softmax_row(std::span<const double> row, double t, std::span<double> out) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v / t);
    double sum = 0.0;
    for (double v : row) sum += std::exp(v / t - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t k = 0; k < row.size(); ++k) out[k] = row[k] / t - lse;
}

double log_add_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double mx = std::max(a, b);
    return mx + std::log1p(std::exp(-std::abs(a - b)));
}

void add_into(std::vector<layer::LayerParams::Tensor>& dst,
              std::vector<layer::LayerParams::Tensor>&& src) {
    for (auto& t : src) dst.push_back(std::move(t));
}

}  // namespace

void ModelConfig::validate() const {
    layer.validate();
    if (layers < 1) throw ParameterError("layers must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("dropout must lie in [0, 1)");
    if (!(lambda_js >= 0.0)) throw ParameterError("lambda_js must be >= 0");
    if (!(temperature > 0.0)) throw ParameterError("temperature T must be > 0");
    if (!(p_edge_drop >= 0.0 && p_edge_drop < 1.0)) {
        throw ParameterError("p_edge_drop must lie in [0, 1)");
    }
    if (!(layernorm_eps > 0.0)) throw ParameterError("layernorm_eps must be > 0");
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::size_t input_dim,
                              std::size_t num_classes, std::size_t num_edges, Rng& rng) {
    cfg.validate();
    if (input_dim == 0) throw DimensionError("input feature dimension is 0");
    if (num_classes < 2) throw ParameterError("need at least 2 classes");
    const std::size_t d = cfg.layer.dim;
    ModelParams p;
    Rng lift_rng = rng.fork(kLiftStream);
    const double lift_bound = std::sqrt(3.0 / (2.0 * static_cast<double>(input_dim)));
    p.lift_re = RealMatrix(input_dim, d);
    p.lift_im = RealMatrix(input_dim, d);
    fill_uniform(p.lift_re.data, lift_bound, lift_rng);
    fill_uniform(p.lift_im.data, lift_bound, lift_rng);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        Rng lr = rng.fork(kLayerStream + l);
        p.layers.push_back(layer::LayerParams::init(cfg.layer, num_edges, lr));
    }
    p.ln_scale.assign(2 * d, 1.0);
    p.ln_shift.assign(2 * d, 0.0);
    Rng cls_rng = rng.fork(kClassifierStream);
    p.cls = RealMatrix(2 * d, num_classes);
    fill_uniform(p.cls.data, std::sqrt(6.0 / static_cast<double>(2 * d + num_classes)), cls_rng);
    p.cls_bias.assign(num_classes, 0.0);
    return p;
}

ModelParams ModelParams::zeros_like() const {
    ModelParams z = *this;
    for (auto& t : z.tensors()) std::fill(t.data.begin(), t.data.end(), 0.0);
    return z;
}

std::vector<layer::LayerParams::Tensor> ModelParams::tensors() {
    std::vector<layer::LayerParams::Tensor> out;
    out.push_back({"lift_re", lift_re.data, true});
    out.push_back({"lift_im", lift_im.data, true});
    for (std::size_t l = 0; l < layers.size(); ++l) {
        add_into(out, layers[l].tensors("layer" + std::to_string(l) + "."));
    }
    out.push_back({"ln_scale", ln_scale, false});
    out.push_back({"ln_shift", ln_shift, false});
    out.push_back({"cls", cls.data, true});
    out.push_back({"cls_bias", cls_bias, false});
    return out;
}

std::size_t ModelParams::size() const {
    std::size_t n = 0;
    for (auto& t : const_cast<ModelParams*>(this)->tensors()) n += t.data.size();
    return n;
}

void ModelParams::project_constraints() {
    for (auto& lp : layers) {
        for (auto* group : {&lp.R_W, &lp.R_Q}) {
            for (auto& r : *group) {
                for (double& x : r) x = std::max(x, 0.0);
            }
        }
    }
}

ComplexMatrix complex_lift(const RealMatrix& x, const RealMatrix& w_re, const RealMatrix& w_im) {
    if (x.cols != w_re.rows || w_re.rows != w_im.rows || w_re.cols != w_im.cols) {
        throw DimensionError("lift: features are " + std::to_string(x.cols) +
                             " wide but lift weights expect " + std::to_string(w_re.rows));
    }
    const std::size_t n = x.rows;
    const std::size_t din = x.cols;
    const std::size_t d = w_re.cols;
    ComplexMatrix h(n, d);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        double* hr = h.re().data() + i * d;
        double* hi = h.im().data() + i * d;
        for (std::size_t a = 0; a < din; ++a) {
            const double xv = x(i, a);
            if (xv == 0.0) continue;
            const double* wr = w_re.data.data() + a * d;
            const double* wi = w_im.data.data() + a * d;
            for (std::size_t k = 0; k < d; ++k) {
                hr[k] += xv * wr[k];
                hi[k] += xv * wi[k];
            }
        }
    }
    return h;
}

ForwardTape model_forward(const ModelParams& p, const ModelConfig& cfg, const graph::Graph& g,
                          const RealMatrix& features, const PassOptions& opts) {
    if (features.rows != g.num_nodes()) {
        throw DimensionError("feature rows do not match node count");
    }
    if (p.layers.size() != cfg.layers) throw DimensionError("layer count differs from config");
    ForwardTape t;
    ComplexMatrix h = complex_lift(features, p.lift_re, p.lift_im);
    if (!h.is_finite()) throw NumericError("non-finite values after complex lift");
    t.layers.reserve(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        t.layers.push_back(layer::layer_forward(p.layers[l], cfg.layer, g, h, opts.mask));
        h = t.layers.back().output;
    }

    const std::size_t n = g.num_nodes();
    const std::size_t d = cfg.layer.dim;
    const std::size_t w = 2 * d;
    const std::size_t c = p.num_classes();
    t.z = RealMatrix(n, w);
    t.normalized = RealMatrix(n, w);
    t.rstd.assign(n, 0.0);
    t.readout = RealMatrix(n, w);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            t.z(i, k) = h.re()[i * d + k];
            t.z(i, d + k) = h.im()[i * d + k];
        }
        double mean = 0.0;
        for (std::size_t k = 0; k < w; ++k) mean += t.z(i, k);
        mean /= static_cast<double>(w);
        double var = 0.0;
        for (std::size_t k = 0; k < w; ++k) var += (t.z(i, k) - mean) * (t.z(i, k) - mean);
        var /= static_cast<double>(w);
        t.rstd[i] = 1.0 / std::sqrt(var + cfg.layernorm_eps);
        for (std::size_t k = 0; k < w; ++k) {
            t.normalized(i, k) = (t.z(i, k) - mean) * t.rstd[i];
            t.readout(i, k) = t.normalized(i, k) * p.ln_scale[k] + p.ln_shift[k];
        }
    }
    if (opts.training && cfg.dropout > 0.0) {
        if (!opts.rng) throw ParameterError("training pass with dropout needs an rng");
        t.keep = RealMatrix(n, w);
        const double scale = 1.0 / (1.0 - cfg.dropout);
        for (double& k : t.keep.data) k = opts.rng->uniform() >= cfg.dropout ? scale : 0.0;
        for (std::size_t x = 0; x < t.readout.data.size(); ++x) t.readout.data[x] *= t.keep.data[x];
    }

    t.logits = RealMatrix(n, c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < c; ++k) t.logits(i, k) = p.cls_bias[k];
        for (std::size_t a = 0; a < w; ++a) {
            const double v = t.readout(i, a);
            for (std::size_t k = 0; k < c; ++k) t.logits(i, k) += v * p.cls(a, k);
        }
    }
    for (double v : t.logits.data) {
        if (!std::isfinite(v)) throw NumericError("non-finite values in classifier logits");
    }
    return t;
}

RealMatrix readout_logits(const ModelParams& p, const ModelConfig& cfg, const ComplexMatrix& h) {
    const std::size_t n = h.rows();
    const std::size_t d = cfg.layer.dim;
    const std::size_t w = 2 * d;
    const std::size_t c = p.num_classes();
    if (h.cols() != d) throw DimensionError("readout: state width differs from dim");
    RealMatrix logits(n, c);
    std::vector<double> z(w);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            z[k] = h.re()[i * d + k];
            z[d + k] = h.im()[i * d + k];
        }
        double mean = 0.0;
        for (double v : z) mean += v;
        mean /= static_cast<double>(w);
        double var = 0.0;
        for (double v : z) var += (v - mean) * (v - mean);
        const double rstd = 1.0 / std::sqrt(var / static_cast<double>(w) + cfg.layernorm_eps);
        for (std::size_t k = 0; k < c; ++k) logits(i, k) = p.cls_bias[k];
        for (std::size_t a = 0; a < w; ++a) {
            const double v = (z[a] - mean) * rstd * p.ln_scale[a] + p.ln_shift[a];
            for (std::size_t k = 0; k < c; ++k) logits(i, k) += v * p.cls(a, k);
        }
    }
    return logits;
}

double cross_entropy(const RealMatrix& logits, const std::vector<std::int32_t>& labels,
                     const graph::NodeMask& mask, RealMatrix* grad) {
    if (labels.size() != logits.rows || mask.size() != logits.rows) {
        throw DimensionError("cross_entropy: label/mask length differs from logits");
    }
    const std::size_t n_lab = graph::count(mask);
    if (n_lab == 0) throw DataError("split", "cross-entropy over an empty mask");
    if (grad) *grad = RealMatrix(logits.rows, logits.cols);
    std::vector<double> lsm(logits.cols);
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        if (!mask[i]) continue;
        const auto y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= logits.cols) {
            throw DataError("label-range", "masked node " + std::to_string(i) + " has no valid label");
        }
        log_softmax_row(logits.row(i), 1.0, lsm);
        loss -= lsm[static_cast<std::size_t>(y)];
        if (grad) {
            for (std::size_t k = 0; k < logits.cols; ++k) {
                (*grad)(i, k) = (std::exp(lsm[k]) - (static_cast<std::int32_t>(k) == y ? 1.0 : 0.0)) /
                                static_cast<double>(n_lab);
            }
        }
    }
    return loss / static_cast<double>(n_lab);
}

double js_consistency(const RealMatrix& l1, const RealMatrix& l2, double temperature,
                      RealMatrix* grad1, RealMatrix* grad2) {
    if (l1.rows != l2.rows || l1.cols != l2.cols) throw DimensionError("js: logit shapes differ");
    if (!(temperature > 0.0)) throw ParameterError("temperature T must be > 0");
    const std::size_t n = l1.rows;
    const std::size_t c = l1.cols;
    if (grad1) *grad1 = RealMatrix(n, c);
    if (grad2) *grad2 = RealMatrix(n, c);
    if (n == 0) return 0.0;
    std::vector<double> lp(c), lq(c), lm(c), dp(c), dq(c);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        log_softmax_row(l1.row(i), temperature, lp);
        log_softmax_row(l2.row(i), temperature, lq);
        double js = 0.0;
        double mean_p = 0.0, mean_q = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            lm[k] = log_add_exp(lp[k], lq[k]) - std::numbers::ln2;
            const double p = std::exp(lp[k]);
            const double q = std::exp(lq[k]);
            // dJS/dp_k = 0.5 log(p_k / m_k)
            dp[k] = p > 0.0 ? 0.5 * (lp[k] - lm[k]) : 0.0;
            dq[k] = q > 0.0 ? 0.5 * (lq[k] - lm[k]) : 0.0;
            js += p * dp[k] + q * dq[k];
            mean_p += p * dp[k];
            mean_q += q * dq[k];
        }
        total += std::clamp(js, 0.0, std::numbers::ln2);
        const double scale = 1.0 / (temperature * static_cast<double>(n));
        for (std::size_t k = 0; k < c; ++k) {
            if (grad1) (*grad1)(i, k) = scale * std::exp(lp[k]) * (dp[k] - mean_p);
            if (grad2) (*grad2)(i, k) = scale * std::exp(lq[k]) * (dq[k] - mean_q);
        }
    }
    return total / static_cast<double>(n);
}

LossTape total_loss(const ModelParams& p, const ModelConfig& cfg, const graph::Dataset& d,
                    Rng& rng) {
    cfg.validate();
    const auto& g = d.graph;
    LossTape t;
    Rng drop_clean = rng.fork(1);
    PassOptions clean{nullptr, true, &drop_clean};
    if (cfg.ce_edge_drop && cfg.p_edge_drop > 0.0) {
        Rng mask_rng = rng.fork(2);
        t.clean_mask = graph::sample_edge_drop_mask(g, cfg.p_edge_drop, mask_rng);
        clean.mask = &t.clean_mask;
    }
    t.clean = model_forward(p, cfg, g, d.features, clean);
    t.ce = cross_entropy(t.clean.logits, d.labels, d.train_mask, &t.grad_clean);
    t.total = t.ce;

    if (cfg.lambda_js > 0.0) {
        Rng m1 = rng.fork(3), m2 = rng.fork(4);
        Rng f1 = rng.fork(5), f2 = rng.fork(6);
        t.mask1 = graph::sample_edge_drop_mask(g, cfg.p_edge_drop, m1);
        t.mask2 = graph::sample_edge_drop_mask(g, cfg.p_edge_drop, m2);
        t.view1 = model_forward(p, cfg, g, d.features, {&t.mask1, true, &f1});
        t.view2 = model_forward(p, cfg, g, d.features, {&t.mask2, true, &f2});
        t.js = js_consistency(t.view1.logits, t.view2.logits, cfg.temperature, &t.grad1, &t.grad2);
        t.has_js = true;
        t.total += cfg.lambda_js * t.js;
        for (double& x : t.grad1.data) x *= cfg.lambda_js;
        for (double& x : t.grad2.data) x *= cfg.lambda_js;
    }
    return t;
}

void backward_pass(const ModelParams& p, const ModelConfig& cfg, const graph::Graph& g,
                   const RealMatrix& features, const ForwardTape& tape,
                   const RealMatrix& grad_logits, ModelParams& grads) {
    const std::size_t n = g.num_nodes();
    const std::size_t d = cfg.layer.dim;
    const std::size_t w = 2 * d;
    const std::size_t c = p.num_classes();

    // classifier
    RealMatrix g_read(n, w);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < c; ++k) {
            const double gl = grad_logits(i, k);
            if (gl == 0.0) continue;
            grads.cls_bias[k] += gl;
            for (std::size_t a = 0; a < w; ++a) {
                grads.cls(a, k) += tape.readout(i, a) * gl;
                g_read(i, a) += p.cls(a, k) * gl;
            }
        }
    }
    if (!tape.keep.data.empty()) {
        for (std::size_t x = 0; x < g_read.data.size(); ++x) g_read.data[x] *= tape.keep.data[x];
    }

    // LayerNorm and the Re/Im split
    ComplexMatrix g_h(n, d);
    std::vector<double> gx(w);
    for (std::size_t i = 0; i < n; ++i) {
        double mean_g = 0.0, mean_gx = 0.0;
        for (std::size_t k = 0; k < w; ++k) {
            const double gy = g_read(i, k);
            grads.ln_scale[k] += gy * tape.normalized(i, k);
            grads.ln_shift[k] += gy;
            gx[k] = gy * p.ln_scale[k];
            mean_g += gx[k];
            mean_gx += gx[k] * tape.normalized(i, k);
        }
        mean_g /= static_cast<double>(w);
        mean_gx /= static_cast<double>(w);
        for (std::size_t k = 0; k < w; ++k) {
            const double gz = tape.rstd[i] * (gx[k] - mean_g - tape.normalized(i, k) * mean_gx);
            if (k < d) {
                g_h.re()[i * d + k] = gz;
            } else {
                g_h.im()[i * d + k - d] = gz;
            }
        }
    }

    for (std::size_t l = cfg.layers; l-- > 0;) {
        g_h = layer::layer_backward(p.layers[l], cfg.layer, g, tape.layers[l], g_h, grads.layers[l]);
    }

    // lift: H = X W_re + i X W_im
    const std::size_t din = features.cols;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < din; ++a) {
            const double xv = features(i, a);
            if (xv == 0.0) continue;
            double* gr = grads.lift_re.data.data() + a * d;
            double* gi = grads.lift_im.data.data() + a * d;
            for (std::size_t k = 0; k < d; ++k) {
                gr[k] += xv * g_h.re()[i * d + k];
                gi[k] += xv * g_h.im()[i * d + k];
            }
        }
    }
}

ModelParams backward(const ModelParams& p, const ModelConfig& cfg, const graph::Graph& g,
                     const RealMatrix& features, LossTape& tape) {
    if (tape.consumed) throw Error("loss tape already consumed by a previous backward");
    tape.consumed = true;
    ModelParams grads = p.zeros_like();
    backward_pass(p, cfg, g, features, tape.clean, tape.grad_clean, grads);
    if (tape.has_js) {
        backward_pass(p, cfg, g, features, tape.view1, tape.grad1, grads);
        backward_pass(p, cfg, g, features, tape.view2, tape.grad2, grads);
    }
    for (auto& t : grads.tensors()) {
        for (double v : t.data) {
            if (!std::isfinite(v)) throw NumericError("non-finite gradient for " + t.name);
        }
    }
    return grads;
}

std::vector<std::int32_t> predictions(const RealMatrix& logits) {
    std::vector<std::int32_t> out(logits.rows, 0);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < logits.cols; ++k) {
            if (logits(i, k) > logits(i, best)) best = k;
        }
        out[i] = static_cast<std::int32_t>(best);
    }
    return out;
}

double accuracy(const RealMatrix& logits, const std::vector<std::int32_t>& labels,
                const graph::NodeMask& mask) {
    if (labels.size() != logits.rows || mask.size() != logits.rows) {
        throw DimensionError("accuracy: label/mask length differs from logits");
    }
    const std::size_t n = graph::count(mask);
    if (n == 0) throw DataError("split", "accuracy over an empty mask");
    const auto pred = predictions(logits);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        if (mask[i] && pred[i] == labels[i]) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(n);
}

double evaluate(const ModelParams& p, const ModelConfig& cfg, const graph::Dataset& d,
                const graph::NodeMask& mask) {
    const auto t = model_forward(p, cfg, d.graph, d.features, {});
    return accuracy(t.logits, d.labels, mask);
}

}  // namespace gesc::model
