#pragma once
// Stacked GESC model: complex lift, L layers, real readout, losses and the
// hand-written reverse pass.
//
// Readout: z = [Re h, Im h] (2d reals), logits = W_cls Dropout(LayerNorm(z)) + b.
#include <cstddef>
#include <vector>

#include "gesc/graph.hpp"
#include "gesc/layer.hpp"
#include "gesc/rng.hpp"

namespace gesc::model {

using core::ComplexMatrix;
using graph::RealMatrix;

struct ModelConfig {
    layer::LayerConfig layer;
    std::size_t layers = 2;
    double dropout = 0.5;       // readout feature dropout
    double lambda_js = 0.5;
    double temperature = 1.0;   // JS softening T
    double p_edge_drop = 0.2;
    bool ce_edge_drop = false;  // also drop edges in the CE pass
    double layernorm_eps = 1e-5;

    void validate() const;
};

struct ModelParams {
    RealMatrix lift_re;  // d_in x d
    RealMatrix lift_im;
    std::vector<layer::LayerParams> layers;
    std::vector<double> ln_scale;  // 2d
    std::vector<double> ln_shift;
    RealMatrix cls;                // 2d x C
    std::vector<double> cls_bias;  // C

    static ModelParams init(const ModelConfig& cfg, std::size_t input_dim, std::size_t num_classes,
                            std::size_t num_edges, Rng& rng);
    ModelParams zeros_like() const;
    /// Fixed order: lift, layers, readout norm, classifier.
    std::vector<layer::LayerParams::Tensor> tensors();
    std::size_t size() const;
    /// Diagonal magnitudes are kept non-negative by clamping.
    void project_constraints();

    std::size_t input_dim() const noexcept { return lift_re.rows; }
    std::size_t num_classes() const noexcept { return cls_bias.size(); }
};

/// X W_re + i X W_im
ComplexMatrix complex_lift(const RealMatrix& x, const RealMatrix& w_re, const RealMatrix& w_im);

struct PassOptions {
    const graph::EdgeMask* mask = nullptr;  // shared by all layers of the pass
    bool training = false;                  // enables readout dropout
    Rng* rng = nullptr;                     // required when training with dropout > 0
};

struct ForwardTape {
    std::vector<layer::LayerTape> layers;
    RealMatrix z;            // N x 2d
    RealMatrix normalized;   // LayerNorm(z) before affine
    std::vector<double> rstd;
    RealMatrix keep;         // dropout multipliers (0 or 1/(1-p)); empty when inactive
    RealMatrix readout;      // classifier input
    RealMatrix logits;       // N x C
};

ForwardTape model_forward(const ModelParams& p, const ModelConfig& cfg, const graph::Graph& g,
                          const RealMatrix& features, const PassOptions& opts = {});

/// Inference readout of a final hidden state (no dropout).
RealMatrix readout_logits(const ModelParams& p, const ModelConfig& cfg, const ComplexMatrix& h);

/// Mean -log softmax(true class) over masked nodes. `grad` (optional) receives
/// dCE/dlogits. Throws DataError("split") on an empty mask.
double cross_entropy(const RealMatrix& logits, const std::vector<std::int32_t>& labels,
                     const graph::NodeMask& mask, RealMatrix* grad = nullptr);

/// Mean over nodes of JS(softmax(l1/T), softmax(l2/T)), natural log.
double js_consistency(const RealMatrix& l1, const RealMatrix& l2, double temperature,
                      RealMatrix* grad1 = nullptr, RealMatrix* grad2 = nullptr);

/// CE from a clean training pass plus lambda_js * JS over two edge-dropped
/// passes. The JS passes are skipped when lambda_js = 0.
struct LossTape {
    ForwardTape clean;
    ForwardTape view1;
    ForwardTape view2;
    graph::EdgeMask clean_mask;
    graph::EdgeMask mask1;
    graph::EdgeMask mask2;
    RealMatrix grad_clean;
    RealMatrix grad1;
    RealMatrix grad2;
    double ce = 0.0;
    double js = 0.0;
    double total = 0.0;
    bool has_js = false;
    bool consumed = false;
};

LossTape total_loss(const ModelParams& p, const ModelConfig& cfg, const graph::Dataset& d,
                    Rng& rng);

/// Gradients of the tape's scalar loss. A tape may be consumed once.
ModelParams backward(const ModelParams& p, const ModelConfig& cfg, const graph::Graph& g,
                     const RealMatrix& features, LossTape& tape);

/// Back-propagates dL/dlogits of a single forward pass, accumulating into `grads`.
void backward_pass(const ModelParams& p, const ModelConfig& cfg, const graph::Graph& g,
                   const RealMatrix& features, const ForwardTape& tape,
                   const RealMatrix& grad_logits, ModelParams& grads);

/// argmax accuracy over masked nodes; ties go to the lowest class index.
double accuracy(const RealMatrix& logits, const std::vector<std::int32_t>& labels,
                const graph::NodeMask& mask);
std::vector<std::int32_t> predictions(const RealMatrix& logits);

double evaluate(const ModelParams& p, const ModelConfig& cfg, const graph::Dataset& d,
                const graph::NodeMask& mask);

}  // namespace gesc::model
