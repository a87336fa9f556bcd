#include "gesc/layer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "gesc/errors.hpp"

namespace gesc::layer {

using core::CView;

std::string to_string(AttentionMode m) {
    switch (m) {
        case AttentionMode::hybrid: return "hybrid";
        case AttentionMode::phase_aided: return "phase_aided";
        case AttentionMode::phase_norm: return "phase_norm";
    }
    return "?";
}

std::string to_string(SicPosition p) {
    return p == SicPosition::pre_attention ? "pre" : "post";
}

std::string to_string(ParamMode p) { return p == ParamMode::full ? "full" : "diagonal"; }

AttentionMode attention_mode_from_string(const std::string& s) {
    if (s == "hybrid") return AttentionMode::hybrid;
    if (s == "phase_aided" || s == "phase-aided") return AttentionMode::phase_aided;
    if (s == "phase_norm" || s == "phase-norm") return AttentionMode::phase_norm;
    throw ParameterError("unknown attention mode '" + s + "'");
}

SicPosition sic_position_from_string(const std::string& s) {
    if (s == "pre") return SicPosition::pre_attention;
    if (s == "post") return SicPosition::post_attention;
    throw ParameterError("unknown SIC position '" + s + "'");
}

ParamMode param_mode_from_string(const std::string& s) {
    if (s == "full") return ParamMode::full;
    if (s == "diagonal") return ParamMode::diagonal;
    throw ParameterError("unknown param_mode '" + s + "'");
}

void LayerConfig::validate() const {
    if (dim == 0 || heads == 0) throw ParameterError("dim and heads must be >= 1");
    if (!(eta_sic >= 0.0 && eta_sic <= 1.0)) throw ParameterError("eta_sic must lie in [0, 1]");
    if (!(lambda_mix >= 0.0 && lambda_mix <= 1.0)) {
        throw ParameterError("lambda_mix must lie in [0, 1]");
    }
    if (!(epsilon > 0.0) || !(norm_epsilon > 0.0)) throw ParameterError("epsilons must be > 0");
    if (!(kappa >= 0.0)) throw ParameterError("kappa must be >= 0");
    if (!(delta > 0.0)) throw ParameterError("delta must be > 0");
    if (sic_rank < 1 || sic_rank > kMaxSicRank || sic_rank > dim) {
        throw ParameterError("sic_rank must lie in [1, min(d, 8)]");
    }
}

// ---- parameters -----------------------------------------------------------------

LayerParams LayerParams::init(const LayerConfig& cfg, std::size_t num_edges, Rng& rng) {
    cfg.validate();
    const std::size_t d = cfg.dim;
    const std::size_t heads = cfg.heads;
    LayerParams p;
    const double bound = std::sqrt(3.0 / (2.0 * static_cast<double>(d)));
    if (cfg.param_mode == ParamMode::full) {
        for (std::size_t m = 0; m < heads; ++m) {
            for (auto* mats : {&p.W, &p.Q}) {
                ComplexMatrix a(d, d);
                for (double& x : a.re()) x = rng.uniform(-bound, bound);
                for (double& x : a.im()) x = rng.uniform(-bound, bound);
                mats->push_back(std::move(a));
            }
        }
    } else {
        for (std::size_t m = 0; m < heads; ++m) {
            p.R_W.emplace_back(d, 1.0);
            p.R_Q.emplace_back(d, 1.0);
            std::vector<double> pw(d), pq(d);
            for (double& x : pw) x = rng.uniform(-std::numbers::pi, std::numbers::pi);
            for (double& x : pq) x = rng.uniform(-std::numbers::pi, std::numbers::pi);
            p.Phi_W.push_back(std::move(pw));
            p.Phi_Q.push_back(std::move(pq));
        }
    }
    p.theta.assign(num_edges, 0.0);
    p.sign_scale.assign(heads, 1.0);
    p.sign_shift.assign(heads, 0.0);
    p.mix_weight.assign(heads, {0.0, 0.0, 0.0});
    p.mix_bias.assign(heads, 0.0);
    p.log_gamma.assign(heads, 0.0);
    p.modrelu_bias.assign(d, 0.0);
    return p;
}

LayerParams LayerParams::zeros_like() const {
    LayerParams z = *this;
    for (auto& t : z.tensors("")) std::fill(t.data.begin(), t.data.end(), 0.0);
    return z;
}

double LayerParams::gamma(std::size_t m) const { return std::exp(log_gamma[m]); }

std::vector<LayerParams::Tensor> LayerParams::tensors(const std::string& prefix) {
    std::vector<Tensor> out;
    for (std::size_t m = 0; m < W.size(); ++m) {
        const std::string h = std::to_string(m);
        out.push_back({prefix + "W" + h + ".re", W[m].re(), true});
        out.push_back({prefix + "W" + h + ".im", W[m].im(), true});
        out.push_back({prefix + "Q" + h + ".re", Q[m].re(), true});
        out.push_back({prefix + "Q" + h + ".im", Q[m].im(), true});
    }
    for (std::size_t m = 0; m < R_W.size(); ++m) {
        const std::string h = std::to_string(m);
        out.push_back({prefix + "R_W" + h, R_W[m], true});
        out.push_back({prefix + "Phi_W" + h, Phi_W[m], false});
        out.push_back({prefix + "R_Q" + h, R_Q[m], true});
        out.push_back({prefix + "Phi_Q" + h, Phi_Q[m], false});
    }
    out.push_back({prefix + "theta", theta, false});
    out.push_back({prefix + "sign_scale", sign_scale, false});
    out.push_back({prefix + "sign_shift", sign_shift, false});
    out.push_back({prefix + "mix_weight",
                   std::span<double>(mix_weight.empty() ? nullptr : mix_weight.front().data(),
                                     3 * mix_weight.size()),
                   false});
    out.push_back({prefix + "mix_bias", mix_bias, false});
    out.push_back({prefix + "log_gamma", log_gamma, false});
    out.push_back({prefix + "modrelu_bias", modrelu_bias, false});
    return out;
}

std::size_t LayerParams::size() const {
    std::size_t n = 0;
    for (auto& t : const_cast<LayerParams*>(this)->tensors("")) n += t.data.size();
    return n;
}

namespace {

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline cplx cdot(const double* ur, const double* ui, const double* vr, const double* vi,
                 std::size_t d) noexcept {
    double sr = 0.0, si = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        sr += ur[k] * vr[k] + ui[k] * vi[k];
        si += ur[k] * vi[k] - ui[k] * vr[k];
    }
    return {sr, si};
}

inline cplx cdot(ConstCView u, ConstCView v) noexcept {
    return cdot(u.re.data(), u.im.data(), v.re.data(), v.im.data(), u.size());
}

inline double sqnorm(ConstCView u) noexcept { return core::squared_norm(u); }

inline void caxpy(cplx a, ConstCView x, CView y) noexcept {
    const double ar = a.real(), ai = a.imag();
    for (std::size_t k = 0; k < x.size(); ++k) {
        y.re[k] += ar * x.re[k] - ai * x.im[k];
        y.im[k] += ar * x.im[k] + ai * x.re[k];
    }
}

inline void raxpy(double a, ConstCView x, CView y) noexcept {
    for (std::size_t k = 0; k < x.size(); ++k) {
        y.re[k] += a * x.re[k];
        y.im[k] += a * x.im[k];
    }
}

inline void zero(CView y) noexcept {
    std::fill(y.re.begin(), y.re.end(), 0.0);
    std::fill(y.im.begin(), y.im.end(), 0.0);
}

bool finite(const ComplexMatrix& m) { return m.is_finite(); }

void check_stage(const ComplexMatrix& m, const char* stage) {
    if (!finite(m)) throw NumericError(std::string("non-finite values after ") + stage);
}

/// Anchors V[:, k] = h * w_k with w_k[t] = exp(2 pi i k t / d); Tikhonov
/// projector V (V^H V + eps I)^{-1} V^H. Rank 1 reduces to h h^H / (|h|^2 + eps).
class SicProjector {
public:
    SicProjector(std::size_t rank, std::size_t dim) : rank_(rank), dim_(dim) {
        mod_re_.resize(rank * dim);
        mod_im_.resize(rank * dim);
        for (std::size_t k = 0; k < rank; ++k) {
            for (std::size_t t = 0; t < dim; ++t) {
                const double ang = 2.0 * std::numbers::pi * static_cast<double>(k * t) /
                                   static_cast<double>(dim);
                mod_re_[k * dim + t] = k == 0 ? 1.0 : std::cos(ang);
                mod_im_[k * dim + t] = k == 0 ? 0.0 : std::sin(ang);
            }
        }
    }

    std::size_t rank() const noexcept { return rank_; }

    cplx omega(std::size_t k, std::size_t t) const noexcept {
        return {mod_re_[k * dim_ + t], mod_im_[k * dim_ + t]};
    }

    /// (V^H V + eps I)^{-1}, row-major r x r.
    void gram_inverse(ConstCView h, double eps, cplx* out) const {
        if (rank_ == 1) {
            out[0] = 1.0 / (sqnorm(h) + eps);
            return;
        }
        Eigen::MatrixXcd v(dim_, rank_);
        for (std::size_t k = 0; k < rank_; ++k) {
            for (std::size_t t = 0; t < dim_; ++t) v(t, k) = omega(k, t) * h[t];
        }
        Eigen::MatrixXcd gram = v.adjoint() * v;
        gram += eps * Eigen::MatrixXcd::Identity(rank_, rank_);
        const Eigen::MatrixXcd inv = gram.inverse();
        for (std::size_t a = 0; a < rank_; ++a) {
            for (std::size_t b = 0; b < rank_; ++b) out[a * rank_ + b] = inv(a, b);
        }
    }

    /// y = P x (overwrites y); z receives the r coefficients with P x = V z.
    void apply(ConstCView h, const cplx* ginv, ConstCView x, CView y, cplx* z) const {
        std::array<cplx, kMaxSicRank> b{};
        if (rank_ == 1) {
            b[0] = cdot(h, x);
        } else {
            for (std::size_t k = 0; k < rank_; ++k) {
                cplx acc = 0.0;
                for (std::size_t t = 0; t < dim_; ++t) acc += std::conj(omega(k, t) * h[t]) * x[t];
                b[k] = acc;
            }
        }
        for (std::size_t a = 0; a < rank_; ++a) {
            cplx acc = 0.0;
            for (std::size_t c = 0; c < rank_; ++c) acc += ginv[a * rank_ + c] * b[c];
            z[a] = acc;
        }
        if (rank_ == 1) {
            zero(y);
            caxpy(z[0], h, y);
            return;
        }
        for (std::size_t t = 0; t < dim_; ++t) {
            cplx acc = 0.0;
            for (std::size_t k = 0; k < rank_; ++k) acc += omega(k, t) * z[k];
            y.set(t, h[t] * acc);
        }
    }

    /// Given dL/dy for y = P(h) x, accumulates dL/dx into gx and dL/dh into gh.
    void backward(ConstCView h, const cplx* ginv, ConstCView x, const cplx* z, ConstCView gy,
                  CView gx, CView gh) const {
        const std::size_t r = rank_;
        if (r == 1) {
            // y = h z, z = ginv <h, x>, ginv = 1 / (|h|^2 + eps)
            const double gi = ginv[0].real();
            const cplx z0 = z[0];
            const cplx gb0 = gi * cdot(h, gy);
            const cplx m0 = -2.0 * (gb0 * std::conj(z0)).real();
            for (std::size_t t = 0; t < dim_; ++t) {
                const cplx ht = h[t];
                const cplx gxt = ht * gb0;
                const cplx ght = gy[t] * std::conj(z0) + x[t] * std::conj(gb0) + ht * m0;
                gx.re[t] += gxt.real();
                gx.im[t] += gxt.imag();
                gh.re[t] += ght.real();
                gh.im[t] += ght.imag();
            }
            return;
        }
        std::array<cplx, kMaxSicRank> gz{}, gb{};
        for (std::size_t k = 0; k < r; ++k) {
            cplx acc = 0.0;
            for (std::size_t t = 0; t < dim_; ++t) acc += std::conj(omega(k, t) * h[t]) * gy[t];
            gz[k] = acc;
        }
        for (std::size_t a = 0; a < r; ++a) {
            cplx acc = 0.0;
            for (std::size_t c = 0; c < r; ++c) acc += ginv[a * r + c] * gz[c];
            gb[a] = acc;
        }
        // M = G_G + G_G^H with G_G = -gb z^H.
        std::array<cplx, kMaxSicRank * kMaxSicRank> msym{};
        for (std::size_t a = 0; a < r; ++a) {
            for (std::size_t c = 0; c < r; ++c) {
                msym[a * r + c] = -gb[a] * std::conj(z[c]) - std::conj(gb[c] * std::conj(z[a]));
            }
        }
        for (std::size_t t = 0; t < dim_; ++t) {
            const cplx ht = h[t];
            cplx gxt = 0.0;
            cplx ght = 0.0;
            for (std::size_t k = 0; k < r; ++k) {
                const cplx w = omega(k, t);
                gxt += w * ht * gb[k];
                cplx gv = gy[t] * std::conj(z[k]) + x[t] * std::conj(gb[k]);
                for (std::size_t l = 0; l < r; ++l) gv += omega(l, t) * ht * msym[l * r + k];
                ght += std::conj(w) * gv;
            }
            gx.re[t] += gxt.real();
            gx.im[t] += gxt.imag();
            gh.re[t] += ght.real();
            gh.im[t] += ght.imag();
        }
    }

private:
    std::size_t rank_;
    std::size_t dim_;
    std::vector<double> mod_re_;
    std::vector<double> mod_im_;
};

struct LogitParts {
    double logit;
    double nu_post;
};

LogitParts logit_from_score(const LayerConfig& cfg, double gamma, cplx s, double m_norm,
                            double q_norm) {
    const double sqrt_d = std::sqrt(static_cast<double>(cfg.dim));
    const double mag = std::abs(s);
    switch (cfg.attention) {
        case AttentionMode::hybrid: {
            const double nu = q_norm * m_norm + cfg.norm_epsilon;
            const double lam = cfg.lambda_mix;
            return {gamma * (lam * mag / sqrt_d + (1.0 - lam) * s.real() / nu), nu};
        }
        case AttentionMode::phase_aided: {
            const double cosine = mag > 0.0 ? s.real() / mag : 0.0;
            return {gamma * (mag + cfg.kappa * cosine) / sqrt_d, 0.0};
        }
        case AttentionMode::phase_norm: {
            // cos(arg s) * min(1, |s| / delta)
            const double v = mag <= cfg.delta ? s.real() / cfg.delta : s.real() / mag;
            return {gamma * v, 0.0};
        }
    }
    return {0.0, 0.0};
}

struct LogitGrad {
    cplx g_score;
    double g_m_norm;
    double g_q_norm;
};

LogitGrad logit_backward(const LayerConfig& cfg, double gamma, const ArcRecord& rec,
                         double q_norm, double g_logit) {
    const double sqrt_d = std::sqrt(static_cast<double>(cfg.dim));
    const cplx s = rec.score_post;
    const double mag = std::abs(s);
    const cplx unit = mag > 0.0 ? s / mag : cplx(0.0);
    // d cos(arg s) as a complex gradient: (1 - u Re u) / |s|
    auto dcos = [&]() { return mag > 0.0 ? (1.0 - unit * unit.real()) / mag : cplx(0.0); };
    LogitGrad out{0.0, 0.0, 0.0};
    switch (cfg.attention) {
        case AttentionMode::hybrid: {
            const double lam = cfg.lambda_mix;
            const double nu = rec.nu_post;
            out.g_score = g_logit * gamma * (lam / sqrt_d * unit + cplx((1.0 - lam) / nu));
            const double g_nu = -g_logit * gamma * (1.0 - lam) * s.real() / (nu * nu);
            out.g_m_norm = g_nu * q_norm;
            out.g_q_norm = g_nu * rec.m_norm;
            break;
        }
        case AttentionMode::phase_aided:
            out.g_score = g_logit * gamma / sqrt_d * (unit + cfg.kappa * dcos());
            break;
        case AttentionMode::phase_norm:
            out.g_score = mag <= cfg.delta ? cplx(g_logit * gamma / cfg.delta)
                                           : g_logit * gamma * dcos();
            break;
    }
    return out;
}

/// Per-thread buffers for the arcs of one target node.
struct NodeScratch {
    ComplexMatrix ht, r, mh, v;
    std::vector<cplx> z_pre, z_post;
    std::vector<double> logits, alpha, g_alpha;
    ComplexVector tmp, g_mh, g_r, g_ht, g_q, g_h, g_v;

    NodeScratch(std::size_t max_deg, std::size_t d, std::size_t rank)
        : ht(max_deg, d), r(max_deg, d), mh(max_deg, d), v(max_deg, d),
          z_pre(max_deg * rank), z_post(max_deg * rank), logits(max_deg), alpha(max_deg),
          g_alpha(max_deg), tmp(d), g_mh(d), g_r(d), g_ht(d), g_q(d), g_h(d), g_v(d) {}
};

/// Shared read-only context for the arcs of one head.
struct HeadContext {
    const LayerParams& p;
    const LayerConfig& cfg;
    const graph::Graph& g;
    const LayerTape& tape;
    const SicProjector& proj;
    std::size_t head;
    double eta;
    double gamma;
};

const cplx* gram_at(const LayerTape& tape, std::size_t i, std::size_t rank) {
    return tape.sic_gram_inverse.data() + i * rank * rank;
}

/// Recomputes h~, r, m^ and the aggregated message v for in-arc slot k of
/// node i, filling `rec` except for alpha.
void compute_arc(const HeadContext& ctx, std::size_t i, std::size_t k, const graph::Arc& arc,
                 NodeScratch& s, ArcRecord& rec) {
    const auto& cfg = ctx.cfg;
    const auto& ht_in = ctx.tape.heads[ctx.head];
    const std::size_t d = cfg.dim;
    const std::size_t rank = ctx.proj.rank();
    const ConstCView h_i = ctx.tape.input.row(i);
    const ConstCView q = ht_in.target.row(i);
    const double qn = ht_in.target_norm[i];
    const cplx* ginv = gram_at(ctx.tape, i, rank);

    // transport
    const ConstCView pj = ht_in.source.row(arc.source);
    CView ht = s.ht.row(k);
    const double phase = cfg.additive ? 0.0 : arc.orientation * ctx.p.theta[arc.edge];
    const double cr = std::cos(phase), ci = std::sin(phase);
    for (std::size_t t = 0; t < d; ++t) {
        ht.re[t] = cr * pj.re[t] - ci * pj.im[t];
        ht.im[t] = cr * pj.im[t] + ci * pj.re[t];
    }

    // pre-attention SIC
    CView r = s.r.row(k);
    std::copy(ht.re.begin(), ht.re.end(), r.re.begin());
    std::copy(ht.im.begin(), ht.im.end(), r.im.begin());
    const bool pre = cfg.sic_position == SicPosition::pre_attention && ctx.eta > 0.0;
    const bool post = cfg.sic_position == SicPosition::post_attention && ctx.eta > 0.0;
    if (pre) {
        ctx.proj.apply(h_i, ginv, ht, s.tmp.view(), &s.z_pre[k * rank]);
        raxpy(-ctx.eta, s.tmp, r);
    }

    rec.score = cdot(q, r);
    rec.r_norm = std::sqrt(sqnorm(r));
    rec.nu = qn * rec.r_norm + cfg.norm_epsilon;
    rec.rho = rec.score.real() / rec.nu;
    const std::size_t m = ctx.head;
    rec.xi = cfg.additive ? 1.0 : sigmoid(ctx.p.sign_scale[m] * rec.rho + ctx.p.sign_shift[m]);
    rec.mix_features = {std::log1p(rec.xi * rec.r_norm), std::log1p(std::sqrt(sqnorm(ht))),
                        std::log1p(std::abs(rec.score))};
    const auto& a = ctx.p.mix_weight[m];
    rec.g = cfg.additive ? 0.0
                         : sigmoid(a[0] * rec.mix_features[0] + a[1] * rec.mix_features[1] +
                                   a[2] * rec.mix_features[2] + ctx.p.mix_bias[m]);

    CView mh = s.mh.row(k);
    const double wr = rec.g * rec.xi;
    const double wh = 1.0 - rec.g;
    for (std::size_t t = 0; t < d; ++t) {
        mh.re[t] = wr * r.re[t] + wh * ht.re[t];
        mh.im[t] = wr * r.im[t] + wh * ht.im[t];
    }

    rec.score_post = cdot(q, mh);
    rec.m_norm = std::sqrt(sqnorm(mh));
    const LogitParts lp = logit_from_score(cfg, ctx.gamma, rec.score_post, rec.m_norm, qn);
    rec.logit = lp.logit;
    rec.nu_post = lp.nu_post;

    CView v = s.v.row(k);
    std::copy(mh.re.begin(), mh.re.end(), v.re.begin());
    std::copy(mh.im.begin(), mh.im.end(), v.im.begin());
    if (post) {
        ctx.proj.apply(h_i, ginv, mh, s.tmp.view(), &s.z_post[k * rank]);
        raxpy(-ctx.eta, s.tmp, v);
    }
}

std::size_t gather_active(const graph::Graph& g, const LayerTape& tape, std::size_t i,
                          std::vector<std::size_t>& out) {
    out.clear();
    for (std::size_t a = g.row_ptr()[i]; a < g.row_ptr()[i + 1]; ++a) {
        if (tape.arc_active[a]) out.push_back(a);
    }
    return out.size();
}

}  // namespace

// ---- building blocks ----------------------------------------------------------

void apply_head_transform(const LayerParams& p, const LayerConfig& cfg, std::size_t head,
                          bool target, const ComplexMatrix& in, ComplexMatrix& out) {
    const std::size_t n = in.rows();
    const std::size_t d = cfg.dim;
    if (in.cols() != d) throw DimensionError("state width does not match layer dim");
    out = ComplexMatrix(n, d);
    if (cfg.param_mode == ParamMode::full) {
        const ComplexMatrix& w = target ? p.Q[head] : p.W[head];
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i) core::matvec(w, in.row(i), out.row(i));
    } else {
        const auto& mag = target ? p.R_Q[head] : p.R_W[head];
        const auto& phs = target ? p.Phi_Q[head] : p.Phi_W[head];
        std::vector<cplx> w(d);
        for (std::size_t k = 0; k < d; ++k) w[k] = std::polar(mag[k], phs[k]);
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i) {
            ConstCView x = in.row(i);
            CView y = out.row(i);
            for (std::size_t k = 0; k < d; ++k) y.set(k, w[k] * x[k]);
        }
    }
}

ComplexMatrix source_matrix(const LayerParams& p, const LayerConfig& cfg, std::size_t head) {
    if (cfg.param_mode == ParamMode::full) return p.W[head];
    ComplexMatrix w(cfg.dim, cfg.dim);
    for (std::size_t k = 0; k < cfg.dim; ++k) {
        w.set(k, k, std::polar(p.R_W[head][k], p.Phi_W[head][k]));
    }
    return w;
}

ComplexVector transport(const LayerParams& p, const LayerConfig& cfg, std::size_t head,
                        const graph::Arc& arc, ConstCView h_j) {
    ComplexMatrix one(1, h_j.size());
    std::copy(h_j.re.begin(), h_j.re.end(), one.re().begin());
    std::copy(h_j.im.begin(), h_j.im.end(), one.im().begin());
    ComplexMatrix out;
    apply_head_transform(p, cfg, head, false, one, out);
    const double phase = cfg.additive ? 0.0 : arc.orientation * p.theta.at(arc.edge);
    return core::phase_rotate(out.row(0), phase);
}

ComplexVector sic_residual(const LayerConfig& cfg, ConstCView h_i, ConstCView transported) {
    const core::ProjectorHandle proj{ComplexVector(h_i), cfg.epsilon};
    return core::sic_apply(proj, cfg.effective_eta(), transported);
}

ComplexVector sic_project(const LayerConfig& cfg, ConstCView h_i, ConstCView x) {
    if (h_i.size() != cfg.dim || x.size() != cfg.dim) throw DimensionError("sic_project length");
    const SicProjector proj(cfg.sic_rank, cfg.dim);
    std::vector<cplx> ginv(cfg.sic_rank * cfg.sic_rank);
    std::vector<cplx> z(cfg.sic_rank);
    proj.gram_inverse(h_i, cfg.epsilon, ginv.data());
    ComplexVector out(cfg.dim);
    proj.apply(h_i, ginv.data(), x, out.view(), z.data());
    return out;
}

SignGate sign_gate(const LayerParams& p, const LayerConfig& cfg, std::size_t head,
                   ConstCView q_hi, ConstCView r) {
    const cplx s = core::inner_product(q_hi, r);
    const double nu = core::norm2(q_hi) * core::norm2(r) + cfg.norm_epsilon;
    const double rho = s.real() / nu;
    return {rho, sigmoid(p.sign_scale[head] * rho + p.sign_shift[head])};
}

double residual_gate(const LayerParams& p, std::size_t head, ConstCView r_bar,
                     ConstCView transported, cplx s) {
    const auto& a = p.mix_weight[head];
    const double z = a[0] * std::log1p(core::norm2(r_bar)) +
                     a[1] * std::log1p(core::norm2(transported)) + a[2] * std::log1p(std::abs(s)) +
                     p.mix_bias[head];
    return sigmoid(z);
}

ComplexVector post_gate_message(double xi, double g, ConstCView r, ConstCView transported) {
    if (r.size() != transported.size()) throw DimensionError("post_gate_message length");
    ComplexVector out(r.size());
    for (std::size_t k = 0; k < r.size(); ++k) {
        out.set(k, g * xi * r[k] + (1.0 - g) * transported[k]);
    }
    return out;
}

double attention_logit(const LayerParams& p, const LayerConfig& cfg, std::size_t head,
                       ConstCView q_hi, ConstCView message) {
    const cplx s = core::inner_product(q_hi, message);
    return logit_from_score(cfg, p.gamma(head), s, core::norm2(message), core::norm2(q_hi)).logit;
}

std::vector<double> softmax_attention(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    if (logits.empty()) return out;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        out[k] = std::exp(logits[k] - mx);
        sum += out[k];
    }
    for (double& x : out) x /= sum;
    return out;
}

ComplexVector node_norm(ConstCView h, double eps) {
    const std::size_t d = h.size();
    cplx mu = 0.0;
    for (std::size_t k = 0; k < d; ++k) mu += h[k];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t k = 0; k < d; ++k) var += std::norm(h[k] - mu);
    const double sd = std::sqrt(var / static_cast<double>(d));
    const double scale = 1.0 / (sd + eps);
    ComplexVector out(d);
    for (std::size_t k = 0; k < d; ++k) out.set(k, (h[k] - mu) * scale);
    return out;
}

ComplexVector mod_relu(ConstCView h, std::span<const double> bias, double eps) {
    if (bias.size() != h.size()) throw DimensionError("modReLU bias length");
    ComplexVector out(h.size());
    for (std::size_t k = 0; k < h.size(); ++k) {
        const double mag = std::abs(h[k]);
        const double lifted = std::max(mag + bias[k], 0.0);
        // eps only matters at z = 0, where the result is 0 either way
        (void)eps;
        out.set(k, mag == 0.0 ? cplx(0.0) : lifted / mag * h[k]);
    }
    return out;
}

// ---- layer forward ------------------------------------------------------------

LayerTape layer_forward(const LayerParams& p, const LayerConfig& cfg, const graph::Graph& g,
                        const ComplexMatrix& input, const graph::EdgeMask* mask) {
    cfg.validate();
    const std::size_t n = g.num_nodes();
    const std::size_t d = cfg.dim;
    if (input.rows() != n || input.cols() != d) {
        throw DimensionError("layer input must be N x d");
    }
    if (p.theta.size() != g.num_edges()) {
        throw DimensionError("theta has " + std::to_string(p.theta.size()) +
                             " entries for " + std::to_string(g.num_edges()) + " edges");
    }
    if (mask && mask->size() != g.num_edges()) throw DimensionError("edge mask length");
    if (!input.is_finite()) throw NumericError("non-finite layer input");

    LayerTape tape;
    tape.input = input;
    tape.arc_active.assign(g.num_arcs(), 1);
    if (mask) {
        for (std::size_t a = 0; a < g.num_arcs(); ++a) {
            tape.arc_active[a] = (*mask)[g.arcs()[a].edge];
        }
    }

    const std::size_t rank = cfg.sic_rank;
    const SicProjector proj(rank, d);
    tape.sic_gram_inverse.resize(n * rank * rank);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        proj.gram_inverse(input.row(i), cfg.epsilon, tape.sic_gram_inverse.data() + i * rank * rank);
    }

    tape.pre_norm = input;
    tape.heads.resize(cfg.heads);
    const std::size_t max_deg = std::max<std::size_t>(g.max_degree(), 1);
    const double eta = cfg.effective_eta();

    for (std::size_t m = 0; m < cfg.heads; ++m) {
        HeadTape& ht = tape.heads[m];
        apply_head_transform(p, cfg, m, false, input, ht.source);
        apply_head_transform(p, cfg, m, true, input, ht.target);
        check_stage(ht.source, "source transform");
        ht.target_norm.resize(n);
        for (std::size_t i = 0; i < n; ++i) ht.target_norm[i] = core::norm2(ht.target.row(i));
        ht.arcs.assign(g.num_arcs(), ArcRecord{});
        ht.aggregate = ComplexMatrix(n, d);

        const HeadContext ctx{p, cfg, g, tape, proj, m, eta, p.gamma(m)};
#pragma omp parallel
        {
            NodeScratch s(max_deg, d, rank);
            std::vector<std::size_t> active;
#pragma omp for schedule(static)
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k_n = gather_active(g, tape, i, active);
                if (k_n == 0) continue;
                for (std::size_t k = 0; k < k_n; ++k) {
                    ArcRecord& rec = ht.arcs[active[k]];
                    compute_arc(ctx, i, k, g.arcs()[active[k]], s, rec);
                    s.logits[k] = rec.logit;
                }
                const auto alpha =
                    softmax_attention(std::span<const double>(s.logits.data(), k_n));
                CView agg = ht.aggregate.row(i);
                for (std::size_t k = 0; k < k_n; ++k) {
                    ht.arcs[active[k]].alpha = alpha[k];
                    raxpy(alpha[k], s.v.row(k), agg);
                }
            }
        }
        check_stage(ht.aggregate, "attention aggregation");
        for (std::size_t x = 0; x < n * d; ++x) {
            tape.pre_norm.re()[x] += ht.aggregate.re()[x];
            tape.pre_norm.im()[x] += ht.aggregate.im()[x];
        }
    }

    tape.normalized = ComplexMatrix(n, d);
    tape.output = ComplexMatrix(n, d);
    tape.norm_scale.resize(n);
    tape.norm_dev.resize(n);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        const ConstCView x = tape.pre_norm.row(i);
        cplx mu = 0.0;
        for (std::size_t k = 0; k < d; ++k) mu += x[k];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t k = 0; k < d; ++k) var += std::norm(x[k] - mu);
        const double sd = std::sqrt(var / static_cast<double>(d));
        const double scale = 1.0 / (sd + cfg.norm_epsilon);
        tape.norm_dev[i] = sd;
        tape.norm_scale[i] = scale;
        CView nrm = tape.normalized.row(i);
        for (std::size_t k = 0; k < d; ++k) nrm.set(k, (x[k] - mu) * scale);
        CView out = tape.output.row(i);
        for (std::size_t k = 0; k < d; ++k) {
            const cplx z = nrm[k];
            const double mag = std::abs(z);
            const double lifted = std::max(mag + p.modrelu_bias[k], 0.0);
            out.set(k, mag == 0.0 ? cplx(0.0) : lifted / mag * z);
        }
    }
    check_stage(tape.normalized, "NodeNorm");
    check_stage(tape.output, "modReLU");
    return tape;
}

// ---- layer backward -----------------------------------------------------------

namespace {

void transform_backward(const LayerParams& p, const LayerConfig& cfg, std::size_t head,
                        bool target, const ComplexMatrix& in, const ComplexMatrix& g_out,
                        LayerParams& grads, ComplexMatrix& g_in) {
    const std::size_t n = in.rows();
    const std::size_t d = cfg.dim;
    if (cfg.param_mode == ParamMode::full) {
        const ComplexMatrix& w = target ? p.Q[head] : p.W[head];
        ComplexMatrix& gw = target ? grads.Q[head] : grads.W[head];
        // dW[k][l] = sum_j gP[j][k] conj(h[j][l])
#pragma omp parallel for schedule(static)
        for (std::size_t k = 0; k < d; ++k) {
            double* gr = gw.re().data() + k * d;
            double* gi = gw.im().data() + k * d;
            for (std::size_t j = 0; j < n; ++j) {
                const double ar = g_out.re()[j * d + k];
                const double ai = g_out.im()[j * d + k];
                if (ar == 0.0 && ai == 0.0) continue;
                const double* hr = in.re().data() + j * d;
                const double* hi = in.im().data() + j * d;
                for (std::size_t l = 0; l < d; ++l) {
                    gr[l] += ar * hr[l] + ai * hi[l];
                    gi[l] += ai * hr[l] - ar * hi[l];
                }
            }
        }
#pragma omp parallel
        {
            ComplexVector tmp(d);
#pragma omp for schedule(static)
            for (std::size_t j = 0; j < n; ++j) {
                core::matvec_adjoint(w, g_out.row(j), tmp.view());
                raxpy(1.0, tmp, g_in.row(j));
            }
        }
    } else {
        const auto& mag = target ? p.R_Q[head] : p.R_W[head];
        const auto& phs = target ? p.Phi_Q[head] : p.Phi_W[head];
        auto& gmag = target ? grads.R_Q[head] : grads.R_W[head];
        auto& gphs = target ? grads.Phi_Q[head] : grads.Phi_W[head];
        std::vector<cplx> w(d);
        for (std::size_t k = 0; k < d; ++k) w[k] = std::polar(mag[k], phs[k]);
        for (std::size_t k = 0; k < d; ++k) {
            cplx gw = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                gw += std::conj(in.at(j, k)) * g_out.at(j, k);
            }
            gmag[k] += (std::conj(gw) * std::polar(1.0, phs[k])).real();
            gphs[k] += -(std::conj(gw) * w[k]).imag();
        }
#pragma omp parallel for schedule(static)
        for (std::size_t j = 0; j < n; ++j) {
            CView gi = g_in.row(j);
            for (std::size_t k = 0; k < d; ++k) {
                gi.set(k, gi[k] + std::conj(w[k]) * g_out.at(j, k));
            }
        }
    }
}

}  // namespace

ComplexMatrix layer_backward(const LayerParams& p, const LayerConfig& cfg, const graph::Graph& g,
                             const LayerTape& tape, const ComplexMatrix& grad_output,
                             LayerParams& grads) {
    const std::size_t n = g.num_nodes();
    const std::size_t d = cfg.dim;
    const std::size_t rank = cfg.sic_rank;
    const double eta = cfg.effective_eta();
    if (grad_output.rows() != n || grad_output.cols() != d) {
        throw DimensionError("layer output gradient must be N x d");
    }

    // modReLU and NodeNorm, node by node.
    ComplexMatrix g_pre(n, d);
    std::vector<double> g_bias_part(n * d, 0.0);
#pragma omp parallel
    {
        std::vector<cplx> gn(d);
#pragma omp for schedule(static)
        for (std::size_t i = 0; i < n; ++i) {
            const ConstCView nrm = tape.normalized.row(i);
            const ConstCView go = grad_output.row(i);
            for (std::size_t k = 0; k < d; ++k) {
                const cplx z = nrm[k];
                const cplx gz = go[k];
                const double mag = std::abs(z);
                const double b = p.modrelu_bias[k];
                if (mag == 0.0) {
                    gn[k] = std::max(b, 0.0) / cfg.norm_epsilon * gz;
                } else if (mag + b > 0.0) {
                    const cplx u = z / mag;
                    gn[k] = gz + b * (gz - u * (std::conj(u) * gz).real()) / mag;
                    g_bias_part[i * d + k] = (std::conj(u) * gz).real();
                } else {
                    gn[k] = 0.0;
                }
            }
            const double scale = tape.norm_scale[i];
            const double sd = tape.norm_dev[i];
            // dev = normalized / scale
            double g_sd = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                g_sd -= scale * (std::conj(nrm[k]) * gn[k]).real();
            }
            cplx mean_g = 0.0;
            std::vector<cplx> gdev(d);
            for (std::size_t k = 0; k < d; ++k) {
                gdev[k] = scale * gn[k];
                if (sd > 0.0) gdev[k] += g_sd * (nrm[k] / scale) / (static_cast<double>(d) * sd);
                mean_g += gdev[k];
            }
            mean_g /= static_cast<double>(d);
            CView gp = g_pre.row(i);
            for (std::size_t k = 0; k < d; ++k) gp.set(k, gdev[k] - mean_g);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) grads.modrelu_bias[k] += g_bias_part[i * d + k];
    }

    // Residual path.
    ComplexMatrix g_in = g_pre;
    const SicProjector proj(rank, d);
    const std::size_t max_deg = std::max<std::size_t>(g.max_degree(), 1);

    std::vector<double> g_theta_arc(g.num_arcs(), 0.0);
    ComplexMatrix g_source_arc(g.num_arcs(), d);
    ComplexMatrix g_target(n, d);
    // c, d, a0, a1, a2, b, log_gamma per node
    constexpr std::size_t kScalars = 7;
    std::vector<double> scalar_part(n * kScalars);

    for (std::size_t m = 0; m < cfg.heads; ++m) {
        const HeadTape& ht = tape.heads[m];
        const double gamma = p.gamma(m);
        const HeadContext ctx{p, cfg, g, tape, proj, m, eta, gamma};
        const double c_m = p.sign_scale[m];
        const auto& a_m = p.mix_weight[m];
        std::fill(scalar_part.begin(), scalar_part.end(), 0.0);
        std::fill(g_target.re().begin(), g_target.re().end(), 0.0);
        std::fill(g_target.im().begin(), g_target.im().end(), 0.0);
        std::fill(g_theta_arc.begin(), g_theta_arc.end(), 0.0);

#pragma omp parallel
        {
            NodeScratch s(max_deg, d, rank);
            std::vector<std::size_t> active;
#pragma omp for schedule(static)
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k_n = gather_active(g, tape, i, active);
                if (k_n == 0) continue;
                const ConstCView h_i = tape.input.row(i);
                const ConstCView q = ht.target.row(i);
                const double qn = ht.target_norm[i];
                const cplx* ginv = gram_at(tape, i, rank);
                const ConstCView g_agg = g_pre.row(i);
                double* sp = scalar_part.data() + i * kScalars;
                ArcRecord scratch_rec;
                for (std::size_t k = 0; k < k_n; ++k) {
                    compute_arc(ctx, i, k, g.arcs()[active[k]], s, scratch_rec);
                    s.alpha[k] = ht.arcs[active[k]].alpha;
                    s.g_alpha[k] = cdot(s.v.row(k), g_agg).real();
                }
                double weighted = 0.0;
                for (std::size_t k = 0; k < k_n; ++k) weighted += s.alpha[k] * s.g_alpha[k];

                CView g_q = s.g_q.view();
                CView g_h = s.g_h.view();
                zero(g_q);
                zero(g_h);
                double g_qn = 0.0;

                for (std::size_t k = 0; k < k_n; ++k) {
                    const std::size_t arc_id = active[k];
                    const graph::Arc& arc = g.arcs()[arc_id];
                    const ArcRecord& rec = ht.arcs[arc_id];
                    const double g_logit = s.alpha[k] * (s.g_alpha[k] - weighted);
                    const ConstCView ht_k = s.ht.row(k);
                    const ConstCView r_k = s.r.row(k);
                    const ConstCView mh_k = s.mh.row(k);

                    // aggregated message v -> m^
                    CView g_mh = s.g_mh.view();
                    zero(g_mh);
                    if (cfg.sic_position == SicPosition::post_attention && eta > 0.0) {
                        for (std::size_t t = 0; t < d; ++t) {
                            g_mh.re[t] = s.alpha[k] * g_agg.re[t];
                            g_mh.im[t] = s.alpha[k] * g_agg.im[t];
                            s.g_v.re()[t] = -eta * s.alpha[k] * g_agg.re[t];
                            s.g_v.im()[t] = -eta * s.alpha[k] * g_agg.im[t];
                        }
                        proj.backward(h_i, ginv, mh_k, &s.z_post[k * rank], s.g_v, g_mh, g_h);
                    } else {
                        raxpy(s.alpha[k], g_agg, g_mh);
                    }

                    // attention logit
                    const LogitGrad lg = logit_backward(cfg, gamma, rec, qn, g_logit);
                    sp[6] += g_logit * rec.logit;
                    g_qn += lg.g_q_norm;
                    if (rec.m_norm > 0.0) raxpy(lg.g_m_norm / rec.m_norm, mh_k, g_mh);
                    caxpy(lg.g_score, q, g_mh);
                    caxpy(std::conj(lg.g_score), mh_k, g_q);

                    // m^ = g xi r + (1 - g) h~
                    CView g_r = s.g_r.view();
                    CView g_ht = s.g_ht.view();
                    zero(g_r);
                    zero(g_ht);
                    raxpy(rec.g * rec.xi, g_mh, g_r);
                    raxpy(1.0 - rec.g, g_mh, g_ht);
                    cplx g_s = 0.0;
                    double g_nr = 0.0;
                    if (!cfg.additive) {
                        const double g_gate =
                            rec.xi * cdot(g_mh, r_k).real() - cdot(g_mh, ht_k).real();
                        double g_xi = rec.g * cdot(g_mh, r_k).real();

                        const double gz = g_gate * rec.g * (1.0 - rec.g);
                        sp[2] += gz * rec.mix_features[0];
                        sp[3] += gz * rec.mix_features[1];
                        sp[4] += gz * rec.mix_features[2];
                        sp[5] += gz;
                        const double ht_norm = std::expm1(rec.mix_features[1]);
                        const double s_abs = std::abs(rec.score);
                        const double f1_den = 1.0 + rec.xi * rec.r_norm;
                        g_xi += gz * a_m[0] * rec.r_norm / f1_den;
                        g_nr += gz * a_m[0] * rec.xi / f1_den;
                        if (ht_norm > 0.0) {
                            raxpy(gz * a_m[1] / ((1.0 + ht_norm) * ht_norm), ht_k, g_ht);
                        }
                        if (s_abs > 0.0) g_s += gz * a_m[2] / ((1.0 + s_abs) * s_abs) * rec.score;

                        // xi = sigmoid(c rho + d), rho = Re(s) / nu
                        const double gzx = g_xi * rec.xi * (1.0 - rec.xi);
                        sp[0] += gzx * rec.rho;
                        sp[1] += gzx;
                        const double g_rho = gzx * c_m;
                        g_s += g_rho / rec.nu;
                        const double g_nu = -g_rho * rec.score.real() / (rec.nu * rec.nu);
                        g_qn += g_nu * rec.r_norm;
                        g_nr += g_nu * qn;
                    }
                    if (rec.r_norm > 0.0) raxpy(g_nr / rec.r_norm, r_k, g_r);
                    // s = q^H r
                    caxpy(g_s, q, g_r);
                    caxpy(std::conj(g_s), r_k, g_q);

                    // r = h~ - eta P h~
                    raxpy(1.0, g_r, g_ht);
                    if (cfg.sic_position == SicPosition::pre_attention && eta > 0.0) {
                        for (std::size_t t = 0; t < d; ++t) {
                            s.g_v.re()[t] = -eta * g_r.re[t];
                            s.g_v.im()[t] = -eta * g_r.im[t];
                        }
                        proj.backward(h_i, ginv, ht_k, &s.z_pre[k * rank], s.g_v, g_ht, g_h);
                    }

                    // h~ = e^{i phi} p_j
                    if (!cfg.additive) {
                        g_theta_arc[arc_id] = -arc.orientation * cdot(g_ht, ht_k).imag();
                    }
                    const double phase = cfg.additive ? 0.0 : arc.orientation * p.theta[arc.edge];
                    const cplx rot = std::polar(1.0, -phase);
                    CView gs = g_source_arc.row(arc_id);
                    for (std::size_t t = 0; t < d; ++t) gs.set(t, rot * g_ht[t]);
                }

                if (qn > 0.0) raxpy(g_qn / qn, q, g_q);
                raxpy(1.0, g_q, g_target.row(i));
                raxpy(1.0, g_h, g_in.row(i));
            }
        }

        for (std::size_t i = 0; i < n; ++i) {
            const double* sp = scalar_part.data() + i * kScalars;
            grads.sign_scale[m] += sp[0];
            grads.sign_shift[m] += sp[1];
            grads.mix_weight[m][0] += sp[2];
            grads.mix_weight[m][1] += sp[3];
            grads.mix_weight[m][2] += sp[4];
            grads.mix_bias[m] += sp[5];
            grads.log_gamma[m] += sp[6];
        }
        if (!cfg.additive) {
            for (std::size_t a = 0; a < g.num_arcs(); ++a) {
                if (tape.arc_active[a]) grads.theta[g.arcs()[a].edge] += g_theta_arc[a];
            }
        }

        // Source gradients: node j collects from its out-arcs (reverse of its in-arcs).
        ComplexMatrix g_source(n, d);
#pragma omp parallel for schedule(static)
        for (std::size_t j = 0; j < n; ++j) {
            CView gj = g_source.row(j);
            for (std::size_t a = g.row_ptr()[j]; a < g.row_ptr()[j + 1]; ++a) {
                const std::size_t out_arc = g.reverse_arc(a);
                if (!tape.arc_active[out_arc]) continue;
                raxpy(1.0, g_source_arc.row(out_arc), gj);
            }
        }
        transform_backward(p, cfg, m, false, tape.input, g_source, grads, g_in);
        transform_backward(p, cfg, m, true, tape.input, g_target, grads, g_in);
    }

    if (!g_in.is_finite()) throw NumericError("non-finite gradient in layer backward");
    return g_in;
}

}  // namespace gesc::layer
