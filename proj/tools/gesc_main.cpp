// gesc: command-line driver.
//
//   gesc train       --config cfg.json [--seed N] [--out DIR] [overrides]
//   gesc eval        --checkpoint FILE [--config cfg.json] [--mask test] [--out DIR]
//   gesc verify SEL  [--config cfg.json] [--out DIR]     SEL: gauge|bounds|lipschitz|notch|depth|sic-grid|all
//   gesc gen-synth   --out DIR [--nodes N --classes C ...]
//   gesc depth-sweep --config cfg.json [--depths 2,4,8,12] [--seeds 3]
//
// Values resolve as flag > config file > built-in default. Exit codes: 0 ok,
// 1 a hard verification property failed, 2 usage/config/data error.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "gesc/bundle_io.hpp"
#include "gesc/checkpoint.hpp"
#include "gesc/config.hpp"
#include "gesc/errors.hpp"
#include "gesc/parallel.hpp"
#include "gesc/train.hpp"
#include "gesc/verify.hpp"

namespace fs = std::filesystem;
using namespace gesc;

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    std::optional<std::string> bundle;
    std::optional<double> eta_sic;
    std::optional<double> lambda_js;
    std::optional<std::size_t> layers;
    std::optional<std::size_t> heads;
    std::optional<std::size_t> dim;
    std::optional<std::string> attention_mode;
    std::optional<std::size_t> max_epochs;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON config file");
        app->add_option("--seed", seed, "training / verification seed");
        app->add_option("--out", out, "output directory");
        app->add_option("--bundle", bundle, "graph bundle directory (dataset source)");
        app->add_option("--eta-sic", eta_sic);
        app->add_option("--lambda-js", lambda_js);
        app->add_option("--layers", layers);
        app->add_option("--heads", heads);
        app->add_option("--dim", dim);
        app->add_option("--attention-mode", attention_mode, "hybrid | phase_aided | phase_norm");
        app->add_option("--max-epochs", max_epochs);
    }

    config::RunConfig resolve(config::RunConfig c = {}) const {
        if (!config_path.empty()) c = config::load_file(config_path, c);
        if (seed) c.train.seed = *seed;
        if (bundle) c.dataset = config::DatasetSource{*bundle, {}, {}, {}};
        if (eta_sic) c.model.layer.eta_sic = *eta_sic;
        if (lambda_js) c.model.lambda_js = *lambda_js;
        if (layers) c.model.layers = *layers;
        if (heads) c.model.layer.heads = *heads;
        if (dim) c.model.layer.dim = *dim;
        if (attention_mode) c.model.layer.attention = layer::attention_mode_from_string(*attention_mode);
        if (max_epochs) c.train.max_epochs = *max_epochs;
        c.validate();
        return c;
    }
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("io", "cannot write " + path.string());
    out << text;
}

void write_reports(const fs::path& path, const std::vector<verify::Report>& reports) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : reports) j.push_back(r.to_json());
    write_text(path, j.dump(2) + "\n");
}

bool all_pass(const std::vector<verify::Report>& reports) {
    for (const auto& r : reports) {
        if (!r.pass) return false;
    }
    return true;
}

void print_reports(const std::vector<verify::Report>& reports) {
    for (const auto& r : reports) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.property << "  max_deviation=" << r.max_deviation
                  << "  threshold=" << r.threshold << "  trials=" << r.trials << '\n';
    }
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t count) {
    std::vector<std::uint64_t> s;
    for (std::size_t k = 0; k < count; ++k) s.push_back(base + k);
    return s;
}

int cmd_train(const Overrides& o) {
    const auto cfg = o.resolve();
    const auto data = config::load_dataset(cfg);
    fs::create_directories(o.out);
    write_text(fs::path(o.out) / "config.json", config::to_json(cfg).dump(2) + "\n");
    std::ofstream metrics(fs::path(o.out) / "metrics.jsonl", std::ios::binary);
    const auto res = train::train(data, cfg.model, cfg.train, &metrics);
    ckpt::save(fs::path(o.out) / "checkpoint.bin", cfg, res.best);
    nlohmann::ordered_json s;
    s["epochs"] = res.history.size();
    s["best_epoch"] = res.best_epoch;
    s["best_val_acc"] = res.best_val;
    s["test_acc_at_best"] = res.best_test;
    s["stopped_early"] = res.stopped_early;
    write_text(fs::path(o.out) / "summary.json", s.dump(2) + "\n");
    std::cout << "epochs " << res.history.size() << "  best epoch " << res.best_epoch
              << "  val " << res.best_val << "  test " << res.best_test << '\n';
    return 0;
}

int cmd_eval(const Overrides& o, const std::string& checkpoint, const std::string& mask_name) {
    const auto ck = ckpt::load(checkpoint);
    auto cfg = ck.config;
    if (!o.config_path.empty() || o.bundle) {
        const auto other = o.resolve(ck.config);
        cfg.dataset = other.dataset;
        cfg.per_class_train = other.per_class_train;
        cfg.split_seed = other.split_seed;
    }
    const auto data = config::load_dataset(cfg);
    if (data.feature_dim() != ck.params.input_dim()) {
        throw DimensionError("checkpoint expects " + std::to_string(ck.params.input_dim()) +
                             " input features, dataset has " + std::to_string(data.feature_dim()));
    }
    if (data.graph.num_edges() != ck.params.layers.front().theta.size()) {
        throw DimensionError("checkpoint edge count differs from the dataset graph");
    }
    if (static_cast<std::size_t>(data.num_classes) != ck.params.num_classes()) {
        throw DimensionError("checkpoint class count differs from the dataset");
    }
    const graph::NodeMask* mask = mask_name == "train" ? &data.train_mask
                                  : mask_name == "val" ? &data.val_mask
                                  : mask_name == "test" ? &data.test_mask
                                                        : nullptr;
    if (!mask) throw ParameterError("mask must be train, val or test");
    const double acc = model::evaluate(ck.params, cfg.model, data, *mask);
    std::cout << "accuracy(" << mask_name << ") = " << acc << '\n';
    fs::create_directories(o.out);
    nlohmann::ordered_json j;
    j["checkpoint"] = checkpoint;
    j["mask"] = mask_name;
    j["accuracy"] = acc;
    write_text(fs::path(o.out) / "eval.json", j.dump(2) + "\n");
    return 0;
}

config::RunConfig verify_defaults() {
    config::RunConfig c;
    c.model.layer.dim = 16;
    c.model.layer.heads = 2;
    c.model.layers = 2;
    graph::SyntheticSpec s;
    s.num_nodes = 50;
    s.num_classes = 3;
    s.feature_dim = 8;
    s.mean_degree = 4.0;
    c.dataset.synthetic = s;
    c.per_class_train = 5;
    return c;
}

int cmd_verify(const Overrides& o, const std::string& sel, const std::vector<double>& scales,
               std::size_t trials, std::size_t bound_trials, const std::vector<std::size_t>& depths,
               std::size_t seeds) {
    static const std::vector<std::string> known = {"gauge", "bounds", "lipschitz", "notch",
                                                   "depth", "sic-grid", "all"};
    if (std::find(known.begin(), known.end(), sel) == known.end()) {
        throw CLI::ValidationError("verify", "unknown selector '" + sel + "'");
    }
    const auto cfg = o.resolve(verify_defaults());
    const std::uint64_t seed = cfg.train.seed;
    fs::create_directories(o.out);
    const fs::path out(o.out);
    const bool all = sel == "all";
    bool hard_ok = true;

    if (all || sel == "gauge") {
        const auto data = config::load_dataset(cfg);
        Rng rng = Rng(seed).fork(0x6a);
        auto p = model::ModelParams::init(cfg.model, data.feature_dim(),
                                          static_cast<std::size_t>(data.num_classes),
                                          data.graph.num_edges(), rng);
        verify::perturb_parameters(p, rng);
        verify::GaugeOptions go;
        go.alpha_scales = scales;
        go.trials = trials;
        go.seed = seed;
        const auto full = verify::gauge_fuzz(p, cfg.model, data.graph, data.features,
                                             verify::GaugeVariant::full, go);
        const auto wo = verify::gauge_fuzz(p, cfg.model, data.graph, data.features,
                                           verify::GaugeVariant::without_transport, go);
        write_reports(out / "gauge.json", full);
        write_reports(out / "gauge_without_transport.json", wo);
        print_reports(full);
        print_reports(wo);
        hard_ok = hard_ok && all_pass(full) && all_pass(wo);
    }
    if (all || sel == "bounds") {
        const auto r = verify::check_bounds({bound_trials, seed, 1e-9});
        write_reports(out / "bounds.json", r);
        print_reports(r);
        hard_ok = hard_ok && all_pass(r);
    }
    if (all || sel == "lipschitz") {
        const auto r = verify::check_lipschitz({bound_trials, seed, 1e-9});
        write_reports(out / "lipschitz.json", r);
        print_reports(r);
        hard_ok = hard_ok && all_pass(r);
    }
    if (all || sel == "notch") {
        config::RunConfig nc = cfg;
        if (o.config_path.empty() && !o.bundle) {
            graph::SyntheticSpec s;
            s.num_nodes = 300;
            s.num_classes = 3;
            s.feature_dim = 8;
            s.target_homophily = 0.8;
            s.mean_degree = 6.0;
            s.rng_seed = seed;
            nc.dataset.synthetic = s;
        }
        const auto data = config::load_dataset(nc);
        const std::size_t depth = 8;
        const auto rows = verify::spectral_notch_probe(data.graph, data.features, nc.model, depth, seed);
        std::ofstream csv(out / "notch.csv", std::ios::binary);
        verify::write_csv(csv, rows);
        verify::Report r;
        r.property = "notch_low_band_ratio";
        r.trials = 1;
        r.threshold = 1.0;
        double worst = 0.0;
        for (const auto& a : rows) {
            if (a.depth < 4 || a.band != "low" || a.eta_sic != 0.5) continue;
            for (const auto& b : rows) {
                if (b.depth == a.depth && b.band == "low" && b.eta_sic == 0.0 && b.fraction > 0.0) {
                    const double ratio = a.fraction / b.fraction;
                    r.aux["low_fraction_ratio@depth" + std::to_string(a.depth)] = ratio;
                    worst = std::max(worst, ratio);
                }
            }
        }
        // soft: recorded, not part of the exit status
        r.max_deviation = worst;
        r.finalize();
        write_reports(out / "notch.json", {r});
        print_reports({r});
    }
    if (all || sel == "depth" || sel == "sic-grid") {
        config::RunConfig dc = cfg;
        if (o.config_path.empty() && !o.bundle) {
            graph::SyntheticSpec s;
            s.num_nodes = 300;
            s.num_classes = 3;
            s.feature_dim = 16;
            s.target_homophily = 0.2;
            s.mean_degree = 6.0;
            s.rng_seed = seed;
            dc.dataset.synthetic = s;
            dc.train.max_epochs = 100;
            dc.train.patience = 30;
        }
        const auto data = config::load_dataset(dc);
        if (all || sel == "depth") {
            const auto rows = verify::depth_sweep(data, dc, depths, seed_list(seed, seeds));
            std::ofstream csv(out / "depth.csv", std::ios::binary);
            verify::write_csv(csv, rows);
            std::cout << "depth sweep written to " << (out / "depth.csv").string() << '\n';
        }
        if (all || sel == "sic-grid") {
            const auto rows = verify::sic_ablation_grid(data, dc, seed_list(seed, seeds));
            std::ofstream csv(out / "sic_grid.csv", std::ios::binary);
            verify::write_csv(csv, rows);
            std::cout << "SIC grid written to " << (out / "sic_grid.csv").string() << '\n';
        }
    }
    return hard_ok ? 0 : 1;
}

int cmd_gen_synth(const std::string& out, const graph::SyntheticSpec& spec, std::size_t per_class,
                  std::uint64_t split_seed) {
    auto d = graph::generate_synthetic(spec);
    d = graph::make_splits(d, per_class, split_seed);
    io::save_bundle(d, out);
    std::cout << "wrote " << d.num_nodes() << " nodes, " << d.graph.num_edges()
              << " edges, homophily " << graph::global_homophily(d) << " to " << out << '\n';
    return 0;
}

int cmd_depth_sweep(const Overrides& o, const std::vector<std::size_t>& depths, std::size_t seeds) {
    const auto cfg = o.resolve();
    const auto data = config::load_dataset(cfg);
    fs::create_directories(o.out);
    const auto rows = verify::depth_sweep(data, cfg, depths, seed_list(cfg.train.seed, seeds));
    std::ofstream csv(fs::path(o.out) / "depth_sweep.csv", std::ios::binary);
    verify::write_csv(csv, rows);
    for (const auto& r : rows) {
        std::cout << r.label << " depth " << r.depth << "  mean test " << r.mean_test() << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    configure_threads_from_env();
    CLI::App app{"GESC graph network: training, evaluation and verification"};
    app.require_subcommand(1);

    Overrides tr;
    auto* train_cmd = app.add_subcommand("train", "train a model and write metrics + checkpoint");
    tr.attach(train_cmd);

    Overrides ev;
    std::string checkpoint, mask = "test";
    auto* eval_cmd = app.add_subcommand("eval", "accuracy of a checkpoint on a split");
    ev.attach(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint)->required();
    eval_cmd->add_option("--mask", mask, "train | val | test");

    Overrides ve;
    std::string selector;
    std::vector<double> scales{0.25, 0.5, 0.75, 1.0};
    std::size_t trials = 100, bound_trials = 1000, seeds = 1;
    std::vector<std::size_t> depths{2, 4, 8, 12};
    auto* verify_cmd = app.add_subcommand("verify", "run property checks");
    ve.attach(verify_cmd);
    verify_cmd->add_option("selector", selector, "gauge|bounds|lipschitz|notch|depth|sic-grid|all")
        ->required();
    verify_cmd->add_option("--alpha-scales", scales)->delimiter(',');
    verify_cmd->add_option("--trials", trials, "gauge trials per scale");
    verify_cmd->add_option("--bound-trials", bound_trials, "random layers for bounds/lipschitz");
    verify_cmd->add_option("--depths", depths)->delimiter(',');
    verify_cmd->add_option("--seeds", seeds, "training seeds for depth / sic-grid");

    std::string synth_out;
    graph::SyntheticSpec spec;
    std::size_t per_class = 20;
    std::uint64_t split_seed = 0;
    auto* gen_cmd = app.add_subcommand("gen-synth", "write a synthetic graph bundle");
    gen_cmd->add_option("--out", synth_out)->required();
    gen_cmd->add_option("--nodes", spec.num_nodes);
    gen_cmd->add_option("--classes", spec.num_classes);
    gen_cmd->add_option("--feature-dim", spec.feature_dim);
    gen_cmd->add_option("--homophily", spec.target_homophily);
    gen_cmd->add_option("--degree", spec.mean_degree);
    gen_cmd->add_option("--signal", spec.feature_signal_strength);
    gen_cmd->add_option("--seed", spec.rng_seed);
    gen_cmd->add_option("--per-class-train", per_class);
    gen_cmd->add_option("--split-seed", split_seed);

    Overrides ds;
    std::vector<std::size_t> sweep_depths{2, 4, 8, 12};
    std::size_t sweep_seeds = 1;
    auto* sweep_cmd = app.add_subcommand("depth-sweep", "full vs additive accuracy per depth");
    ds.attach(sweep_cmd);
    sweep_cmd->add_option("--depths", sweep_depths)->delimiter(',');
    sweep_cmd->add_option("--seeds", sweep_seeds);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*train_cmd) return cmd_train(tr);
        if (*eval_cmd) return cmd_eval(ev, checkpoint, mask);
        if (*verify_cmd) return cmd_verify(ve, selector, scales, trials, bound_trials, depths, seeds);
        if (*gen_cmd) return cmd_gen_synth(synth_out, spec, per_class, split_seed);
        if (*sweep_cmd) return cmd_depth_sweep(ds, sweep_depths, sweep_seeds);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << verify_cmd->help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
