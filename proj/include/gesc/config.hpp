#pragma once
// Run configuration and its JSON form.
//
// Flat keys: d, M, L, eta_sic, epsilon, norm_epsilon, lambda_mix, attention_mode,
// kappa, delta, sic_position, sic_rank, param_mode, additive, lambda_js, T,
// p_edge_drop, ce_edge_drop, dropout, layernorm_eps, lr, weight_decay, beta1,
// beta2, adam_eps, patience, max_epochs, seed, per_class_train, split_seed,
// and "dataset": {"bundle": DIR} | {"content": F, "cites": F} | {"synthetic": {...}}.
// Unknown keys are rejected so a snapshot always means what it says.
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "gesc/graph.hpp"
#include "gesc/model.hpp"
#include "gesc/optimizer.hpp"

namespace gesc::config {

struct TrainConfig {
    optim::AdamConfig adam;
    std::size_t patience = 100;
    std::size_t max_epochs = 1000;
    std::uint64_t seed = 0;
};

struct DatasetSource {
    std::optional<std::string> bundle;
    std::optional<std::string> content;
    std::optional<std::string> cites;
    std::optional<graph::SyntheticSpec> synthetic;
};

struct RunConfig {
    model::ModelConfig model;
    TrainConfig train;
    DatasetSource dataset;
    std::size_t per_class_train = 20;
    std::uint64_t split_seed = 0;

    void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& c);
nlohmann::ordered_json to_json(const graph::SyntheticSpec& s);
/// Missing keys keep the values already in `base`.
RunConfig from_json(const nlohmann::json& j, RunConfig base = {});
graph::SyntheticSpec synthetic_from_json(const nlohmann::json& j, graph::SyntheticSpec base = {});

RunConfig load_file(const std::filesystem::path& path, RunConfig base = {});

/// Loads or generates the dataset; draws splits when the source has none.
graph::Dataset load_dataset(const RunConfig& c);

}  // namespace gesc::config
