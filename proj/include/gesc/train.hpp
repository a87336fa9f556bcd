#pragma once
#include <functional>
#include <ostream>
#include <vector>

#include "gesc/config.hpp"
#include "gesc/model.hpp"

namespace gesc::train {

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    double loss_ce = 0.0;
    double loss_js = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    double test_acc = 0.0;
};

struct TrainResult {
    model::ModelParams best;
    std::size_t best_epoch = 0;
    double best_val = 0.0;
    double best_test = 0.0;
    std::vector<EpochMetrics> history;
    bool stopped_early = false;
};

/// One JSON object per line: {epoch, loss_ce, loss_js, train_acc, val_acc, test_acc}.
void write_jsonl(std::ostream& out, const EpochMetrics& m);

/// Full-batch training with early stopping on validation accuracy. An epoch
/// improves only when val_acc strictly exceeds the best so far; training stops
/// once `patience` consecutive epochs fail to improve.
TrainResult train(const graph::Dataset& d, const model::ModelConfig& mc,
                  const config::TrainConfig& tc, std::ostream* metrics = nullptr);

/// Same, starting from given parameters.
TrainResult train_from(model::ModelParams params, const graph::Dataset& d,
                       const model::ModelConfig& mc, const config::TrainConfig& tc,
                       std::ostream* metrics = nullptr);

model::ModelParams initial_params(const graph::Dataset& d, const model::ModelConfig& mc,
                                  std::uint64_t seed);

}  // namespace gesc::train
