#pragma once
// Adam with decoupled weight decay.
//
//   m <- b1 m + (1 - b1) g
//   v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps) - lr * wd * p   [wd only on decay tensors]
//
// The decay term uses the parameter value before the step.
#include <cstddef>
#include <vector>

#include "gesc/model.hpp"

namespace gesc::optim {

struct AdamConfig {
    double lr = 1e-3;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    void step(model::ModelParams& params, model::ModelParams& grads);

    std::size_t steps() const noexcept { return t_; }
    const AdamConfig& config() const noexcept { return cfg_; }

private:
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

}  // namespace gesc::optim
