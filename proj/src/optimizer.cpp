#include "gesc/optimizer.hpp"

#include <cmath>

#include "gesc/errors.hpp"

namespace gesc::optim {

void Adam::step(model::ModelParams& params, model::ModelParams& grads) {
    auto pt = params.tensors();
    auto gt = grads.tensors();
    if (pt.size() != gt.size()) throw DimensionError("gradient tensors do not match parameters");
    std::size_t total = 0;
    for (std::size_t k = 0; k < pt.size(); ++k) {
        if (pt[k].data.size() != gt[k].data.size()) {
            throw DimensionError("gradient shape differs for " + pt[k].name);
        }
        total += pt[k].data.size();
    }
    if (m_.empty()) {
        m_.assign(total, 0.0);
        v_.assign(total, 0.0);
    } else if (m_.size() != total) {
        throw DimensionError("optimizer state was built for a different model");
    }
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    std::size_t off = 0;
    for (std::size_t k = 0; k < pt.size(); ++k) {
        auto p = pt[k].data;
        auto g = gt[k].data;
        const double wd = pt[k].decay ? cfg_.weight_decay : 0.0;
        for (std::size_t x = 0; x < p.size(); ++x, ++off) {
            m_[off] = b1 * m_[off] + (1.0 - b1) * g[x];
            v_[off] = b2 * v_[off] + (1.0 - b2) * g[x] * g[x];
            const double update = (m_[off] / c1) / (std::sqrt(v_[off] / c2) + cfg_.eps);
            p[x] -= cfg_.lr * (update + wd * p[x]);
        }
    }
}

}  // namespace gesc::optim
