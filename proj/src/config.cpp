#include "gesc/config.hpp"

#include <fstream>
#include <set>

#include "gesc/bundle_io.hpp"
#include "gesc/errors.hpp"

namespace gesc::config {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <typename T>
void take(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParameterError(std::string("config key '") + key + "': " + e.what());
    }
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw ParameterError(where + " must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) throw ParameterError("unknown config key '" + k + "' in " + where);
    }
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    const int sources = (dataset.bundle ? 1 : 0) + (dataset.content || dataset.cites ? 1 : 0) +
                        (dataset.synthetic ? 1 : 0);
    if (sources > 1) throw ParameterError("exactly one dataset source may be given");
    if (static_cast<bool>(dataset.content) != static_cast<bool>(dataset.cites)) {
        throw ParameterError("content and cites must be given together");
    }
    if (train.max_epochs < 1) throw ParameterError("max_epochs must be >= 1");
    if (train.patience < 1) throw ParameterError("patience must be >= 1");
    if (!(train.adam.lr >= 0.0) || !(train.adam.weight_decay >= 0.0)) {
        throw ParameterError("lr and weight_decay must be >= 0");
    }
}

ordered_json to_json(const graph::SyntheticSpec& s) {
    ordered_json j;
    j["num_nodes"] = s.num_nodes;
    j["num_classes"] = s.num_classes;
    j["feature_dim"] = s.feature_dim;
    j["target_homophily"] = s.target_homophily;
    j["mean_degree"] = s.mean_degree;
    j["feature_signal_strength"] = s.feature_signal_strength;
    j["rng_seed"] = s.rng_seed;
    return j;
}

graph::SyntheticSpec synthetic_from_json(const json& j, graph::SyntheticSpec s) {
    reject_unknown(j,
                   {"num_nodes", "num_classes", "feature_dim", "target_homophily", "mean_degree",
                    "feature_signal_strength", "rng_seed"},
                   "synthetic spec");
    take(j, "num_nodes", s.num_nodes);
    take(j, "num_classes", s.num_classes);
    take(j, "feature_dim", s.feature_dim);
    take(j, "target_homophily", s.target_homophily);
    take(j, "mean_degree", s.mean_degree);
    take(j, "feature_signal_strength", s.feature_signal_strength);
    take(j, "rng_seed", s.rng_seed);
    return s;
}

ordered_json to_json(const RunConfig& c) {
    const auto& m = c.model;
    const auto& l = m.layer;
    ordered_json j;
    j["d"] = l.dim;
    j["M"] = l.heads;
    j["L"] = m.layers;
    j["eta_sic"] = l.eta_sic;
    j["epsilon"] = l.epsilon;
    j["norm_epsilon"] = l.norm_epsilon;
    j["lambda_mix"] = l.lambda_mix;
    j["attention_mode"] = layer::to_string(l.attention);
    j["kappa"] = l.kappa;
    j["delta"] = l.delta;
    j["sic_position"] = layer::to_string(l.sic_position);
    j["sic_rank"] = l.sic_rank;
    j["param_mode"] = layer::to_string(l.param_mode);
    j["additive"] = l.additive;
    j["lambda_js"] = m.lambda_js;
    j["T"] = m.temperature;
    j["p_edge_drop"] = m.p_edge_drop;
    j["ce_edge_drop"] = m.ce_edge_drop;
    j["dropout"] = m.dropout;
    j["layernorm_eps"] = m.layernorm_eps;
    j["lr"] = c.train.adam.lr;
    j["weight_decay"] = c.train.adam.weight_decay;
    j["beta1"] = c.train.adam.beta1;
    j["beta2"] = c.train.adam.beta2;
    j["adam_eps"] = c.train.adam.eps;
    j["patience"] = c.train.patience;
    j["max_epochs"] = c.train.max_epochs;
    j["seed"] = c.train.seed;
    j["per_class_train"] = c.per_class_train;
    j["split_seed"] = c.split_seed;
    ordered_json ds = ordered_json::object();
    if (c.dataset.bundle) ds["bundle"] = *c.dataset.bundle;
    if (c.dataset.content) ds["content"] = *c.dataset.content;
    if (c.dataset.cites) ds["cites"] = *c.dataset.cites;
    if (c.dataset.synthetic) ds["synthetic"] = to_json(*c.dataset.synthetic);
    j["dataset"] = ds;
    return j;
}

RunConfig from_json(const json& j, RunConfig c) {
    reject_unknown(j,
                   {"d", "M", "L", "eta_sic", "epsilon", "norm_epsilon", "lambda_mix",
                    "attention_mode", "kappa", "delta", "sic_position", "sic_rank", "param_mode",
                    "additive", "lambda_js", "T", "p_edge_drop", "ce_edge_drop", "dropout",
                    "layernorm_eps", "lr", "weight_decay", "beta1", "beta2", "adam_eps",
                    "patience", "max_epochs", "seed", "per_class_train", "split_seed", "dataset"},
                   "config");
    auto& m = c.model;
    auto& l = m.layer;
    take(j, "d", l.dim);
    take(j, "M", l.heads);
    take(j, "L", m.layers);
    take(j, "eta_sic", l.eta_sic);
    take(j, "epsilon", l.epsilon);
    take(j, "norm_epsilon", l.norm_epsilon);
    take(j, "lambda_mix", l.lambda_mix);
    if (j.contains("attention_mode")) {
        l.attention = layer::attention_mode_from_string(j.at("attention_mode").get<std::string>());
    }
    take(j, "kappa", l.kappa);
    take(j, "delta", l.delta);
    if (j.contains("sic_position")) {
        l.sic_position = layer::sic_position_from_string(j.at("sic_position").get<std::string>());
    }
    take(j, "sic_rank", l.sic_rank);
    if (j.contains("param_mode")) {
        l.param_mode = layer::param_mode_from_string(j.at("param_mode").get<std::string>());
    }
    take(j, "additive", l.additive);
    take(j, "lambda_js", m.lambda_js);
    take(j, "T", m.temperature);
    take(j, "p_edge_drop", m.p_edge_drop);
    take(j, "ce_edge_drop", m.ce_edge_drop);
    take(j, "dropout", m.dropout);
    take(j, "layernorm_eps", m.layernorm_eps);
    take(j, "lr", c.train.adam.lr);
    take(j, "weight_decay", c.train.adam.weight_decay);
    take(j, "beta1", c.train.adam.beta1);
    take(j, "beta2", c.train.adam.beta2);
    take(j, "adam_eps", c.train.adam.eps);
    take(j, "patience", c.train.patience);
    take(j, "max_epochs", c.train.max_epochs);
    take(j, "seed", c.train.seed);
    take(j, "per_class_train", c.per_class_train);
    take(j, "split_seed", c.split_seed);
    if (j.contains("dataset")) {
        const json& ds = j.at("dataset");
        reject_unknown(ds, {"bundle", "content", "cites", "synthetic"}, "dataset");
        c.dataset = {};
        if (ds.contains("bundle")) c.dataset.bundle = ds.at("bundle").get<std::string>();
        if (ds.contains("content")) c.dataset.content = ds.at("content").get<std::string>();
        if (ds.contains("cites")) c.dataset.cites = ds.at("cites").get<std::string>();
        if (ds.contains("synthetic")) c.dataset.synthetic = synthetic_from_json(ds.at("synthetic"));
    }
    return c;
}

RunConfig load_file(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw DataError("missing-file", "cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("parse", path.string() + ": " + e.what());
    }
    return from_json(j, std::move(base));
}

graph::Dataset load_dataset(const RunConfig& c) {
    graph::Dataset d;
    if (c.dataset.bundle) {
        d = io::load_bundle(*c.dataset.bundle);
    } else if (c.dataset.content) {
        d = io::load_content_cites(*c.dataset.content, *c.dataset.cites);
    } else if (c.dataset.synthetic) {
        d = graph::generate_synthetic(*c.dataset.synthetic);
    } else {
        throw ParameterError("no dataset source configured");
    }
    if (!d.has_splits()) d = graph::make_splits(d, c.per_class_train, c.split_seed);
    d.validate(true);
    return d;
}

}  // namespace gesc::config
