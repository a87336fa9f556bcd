#pragma once

// One gauge-equivariant self-interference-cancelling (GESC) message-passing layer.
//
// For each head m and in-arc j -> i:
//   h~  = e^{i o theta_e} W h_j                  transported source
//   r   = h~ - eta P_eps(h_i) h~                 SIC residual
//   s   = (Q h_i)^H r,  rho = Re(s / nu),  xi = sigmoid(c rho + d)
//   g   = sigmoid(a . log1p[|xi r|, |h~|, |s|] + b)
//   m^  = g xi r + (1 - g) h~
//   l   = attention logit from s~ = (Q h_i)^H m^
//   alpha = softmax over in-arcs of i
// and h_out = modReLU(NodeNorm(h_i + sum_m sum_j alpha m^)).

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gesc/complex.hpp"
#include "gesc/graph.hpp"
#include "gesc/rng.hpp"

namespace gesc::layer {

using core::ComplexMatrix;
using core::ComplexVector;
using core::ConstCView;
using core::cplx;

enum class AttentionMode { hybrid, phase_aided, phase_norm };
enum class SicPosition { pre_attention, post_attention };
enum class ParamMode { full, diagonal };

std::string to_string(AttentionMode m);
std::string to_string(SicPosition p);
std::string to_string(ParamMode p);
AttentionMode attention_mode_from_string(const std::string& s);
SicPosition sic_position_from_string(const std::string& s);
ParamMode param_mode_from_string(const std::string& s);

inline constexpr std::size_t kMaxSicRank = 8;

struct LayerConfig {
    std::size_t dim = 64;
    std::size_t heads = 4;
    double eta_sic = 0.5;
    double epsilon = 1e-4;       // SIC Tikhonov regulariser
    double norm_epsilon = 1e-6;  // gate/attention normalisers, NodeNorm, modReLU guard
    double lambda_mix = 0.5;
    AttentionMode attention = AttentionMode::hybrid;
    double kappa = 0.5;
    double delta = 1.0;
    SicPosition sic_position = SicPosition::pre_attention;
    /// Rank-r SIC projects onto span{h, h * w_1, ..., h * w_{r-1}} where
    /// w_k[t] = exp(2 pi i k t / d), with the Tikhonov form V (V^H V + eps I)^-1 V^H.
    /// Rank 1 is exactly h h^H / (|h|^2 + eps).
    std::size_t sic_rank = 1;
    ParamMode param_mode = ParamMode::full;
    /// Degenerate baseline: eta = 0, xi = 1, g = 0, theta frozen at 0.
    bool additive = false;

    void validate() const;
    double effective_eta() const noexcept { return additive ? 0.0 : eta_sic; }
};

/// Learnable quantities of one layer. W/Q are used in full mode, the R/Phi
/// vectors (W = diag(R e^{i Phi})) in diagonal mode; the other set stays empty.
struct LayerParams {
    std::vector<ComplexMatrix> W;
    std::vector<ComplexMatrix> Q;
    std::vector<std::vector<double>> R_W, Phi_W, R_Q, Phi_Q;
    std::vector<double> theta;                     // one per undirected edge
    std::vector<double> sign_scale;                // c_m
    std::vector<double> sign_shift;                // d_m
    std::vector<std::array<double, 3>> mix_weight;  // a_m
    std::vector<double> mix_bias;                  // b_m
    std::vector<double> log_gamma;                 // gamma_m = exp(log_gamma_m)
    std::vector<double> modrelu_bias;              // length d

    /// theta = 0, gates neutral (c=1, d=0, a=0, b=0), gamma = 1, modReLU bias 0;
    /// W, Q entries have real and imaginary parts uniform with variance 1/(2d).
    static LayerParams init(const LayerConfig& cfg, std::size_t num_edges, Rng& rng);
    LayerParams zeros_like() const;

    double gamma(std::size_t m) const;

    struct Tensor {
        std::string name;
        std::span<double> data;
        bool decay;
    };
    /// Every real tensor, in a fixed order. `decay` marks the W/Q magnitudes.
    std::vector<Tensor> tensors(const std::string& prefix);
    std::size_t size() const;
};

// ---- per-arc building blocks -------------------------------------------------

/// e^{i o theta_e} W^(m) h_j for the given arc.
ComplexVector transport(const LayerParams& p, const LayerConfig& cfg, std::size_t head,
                        const graph::Arc& arc, ConstCView h_j);

/// h~ - eta P_eps(h_i) h~ via the complex-core projector.
ComplexVector sic_residual(const LayerConfig& cfg, ConstCView h_i, ConstCView transported);

/// P x for the layer's SIC projector anchored at h_i (honours sic_rank).
ComplexVector sic_project(const LayerConfig& cfg, ConstCView h_i, ConstCView x);

struct SignGate {
    double rho;
    double xi;
};
SignGate sign_gate(const LayerParams& p, const LayerConfig& cfg, std::size_t head,
                   ConstCView q_hi, ConstCView r);

double residual_gate(const LayerParams& p, std::size_t head, ConstCView r_bar,
                     ConstCView transported, cplx s);

/// g (xi r) + (1 - g) h~
ComplexVector post_gate_message(double xi, double g, ConstCView r, ConstCView transported);

double attention_logit(const LayerParams& p, const LayerConfig& cfg, std::size_t head,
                       ConstCView q_hi, ConstCView message);

/// Max-shifted softmax. Empty input gives an empty result.
std::vector<double> softmax_attention(std::span<const double> logits);

ComplexVector node_norm(ConstCView h, double eps);
ComplexVector mod_relu(ConstCView h, std::span<const double> bias, double eps);

// ---- full layer ---------------------------------------------------------------

/// Per-arc scalars retained for the backward pass and for verification.
struct ArcRecord {
    cplx score;        // s
    double r_norm;     // |r|
    double nu;         // gate normaliser
    double rho;
    double xi;
    std::array<double, 3> mix_features;
    double g;
    cplx score_post;   // s~
    double m_norm;     // |m^|
    double nu_post;
    double logit;
    double alpha;
};

struct HeadTape {
    ComplexMatrix source;              // W h_j, N x d
    ComplexMatrix target;              // Q h_i, N x d
    std::vector<double> target_norm;   // |Q h_i|
    std::vector<ArcRecord> arcs;       // indexed by arc id; dropped arcs hold zeros
    ComplexMatrix aggregate;           // sum_j alpha m^ per node
};

struct LayerTape {
    ComplexMatrix input;
    std::vector<std::uint8_t> arc_active;
    /// Per node, row-major r x r inverse Gram matrix of the SIC anchors.
    std::vector<cplx> sic_gram_inverse;
    std::vector<HeadTape> heads;
    ComplexMatrix pre_norm;            // h + sum of head aggregates
    std::vector<double> norm_scale;    // 1 / (varsigma_i + eps)
    std::vector<double> norm_dev;      // varsigma_i
    ComplexMatrix normalized;
    ComplexMatrix output;
};

/// Arcs whose edge is dropped by `mask` are excluded from every in-neighbourhood.
/// Nodes left without in-arcs take the residual-only path.
LayerTape layer_forward(const LayerParams& p, const LayerConfig& cfg, const graph::Graph& g,
                        const ComplexMatrix& input, const graph::EdgeMask* mask = nullptr);

/// Reverse accumulation through one layer. Adds parameter gradients into
/// `grads` (shaped like `p`) and returns dL/d(input) as a complex gradient
/// (dL/dRe + i dL/dIm).
ComplexMatrix layer_backward(const LayerParams& p, const LayerConfig& cfg, const graph::Graph& g,
                             const LayerTape& tape, const ComplexMatrix& grad_output,
                             LayerParams& grads);

/// The two node-wise steps after aggregation, exposed for the linear-path
/// verification tools.
void apply_head_transform(const LayerParams& p, const LayerConfig& cfg, std::size_t head,
                          bool target, const ComplexMatrix& in, ComplexMatrix& out);

/// Dense W^(m) (diagonal mode expands R e^{i Phi}).
ComplexMatrix source_matrix(const LayerParams& p, const LayerConfig& cfg, std::size_t head);

}  // namespace gesc::layer
