#include "gesc/train.hpp"

#include <json.hpp>

#include "gesc/errors.hpp"
#include "gesc/optimizer.hpp"

namespace gesc::train {

namespace {
constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kEpochStream = 0xe90c;
}  // namespace

void write_jsonl(std::ostream& out, const EpochMetrics& m) {
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["loss_ce"] = m.loss_ce;
    j["loss_js"] = m.loss_js;
    j["train_acc"] = m.train_acc;
    j["val_acc"] = m.val_acc;
    j["test_acc"] = m.test_acc;
    out << j.dump() << '\n';
}

model::ModelParams initial_params(const graph::Dataset& d, const model::ModelConfig& mc,
                                  std::uint64_t seed) {
    Rng rng = Rng(seed).fork(kInitStream);
    return model::ModelParams::init(mc, d.feature_dim(), static_cast<std::size_t>(d.num_classes),
                                    d.graph.num_edges(), rng);
}

TrainResult train(const graph::Dataset& d, const model::ModelConfig& mc,
                  const config::TrainConfig& tc, std::ostream* metrics) {
    return train_from(initial_params(d, mc, tc.seed), d, mc, tc, metrics);
}

TrainResult train_from(model::ModelParams params, const graph::Dataset& d,
                       const model::ModelConfig& mc, const config::TrainConfig& tc,
                       std::ostream* metrics) {
    mc.validate();
    d.validate(true);
    optim::Adam opt(tc.adam);
    const Rng epoch_base = Rng(tc.seed).fork(kEpochStream);
    TrainResult res;
    res.best = params;
    double best_val = -1.0;
    std::size_t waited = 0;
    for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        EpochMetrics em;
        em.epoch = epoch;
        try {
            Rng rng = epoch_base.fork(epoch);
            auto tape = model::total_loss(params, mc, d, rng);
            em.loss_ce = tape.ce;
            em.loss_js = tape.js;
            auto grads = model::backward(params, mc, d.graph, d.features, tape);
            opt.step(params, grads);
            params.project_constraints();
            const auto eval = model::model_forward(params, mc, d.graph, d.features, {});
            em.train_acc = model::accuracy(eval.logits, d.labels, d.train_mask);
            em.val_acc = model::accuracy(eval.logits, d.labels, d.val_mask);
            em.test_acc = model::accuracy(eval.logits, d.labels, d.test_mask);
        } catch (const NumericError& e) {
            throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
        }
        res.history.push_back(em);
        if (metrics) write_jsonl(*metrics, em);
        if (em.val_acc > best_val) {
            best_val = em.val_acc;
            res.best = params;
            res.best_epoch = epoch;
            res.best_val = em.val_acc;
            res.best_test = em.test_acc;
            waited = 0;
        } else if (++waited >= tc.patience) {
            res.stopped_early = true;
            break;
        }
    }
    return res;
}

}  // namespace gesc::train
