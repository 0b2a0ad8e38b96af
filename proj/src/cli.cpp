#include "mpruner/cli.hpp"

#include "mpruner/checkpoint.hpp"
#include "mpruner/cka.hpp"
#include "mpruner/config.hpp"
#include "mpruner/report.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace mpruner {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string level_tag(double level) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", level);
    return buf;
}

class Workbench {
public:
    Workbench(RunConfig cfg, std::ostream& out) : cfg_(std::move(cfg)), out_(out) {
        cfg_.train.seed = cfg_.seed;
        cfg_.retrain.seed = cfg_.seed;
        cfg_.prune.seed_shuffle = cfg_.seed;
        fs::create_directories(cfg_.out);
    }

    int train() {
        const Dataset data = dataset();
        Model<float> model = cfg_.checkpoint ? load_checkpoint_file(*cfg_.checkpoint) : fresh_model(data);
        const TrainResult trained = mpruner::train(model, data, cfg_.train);
        const MetricsReport m = get_accuracy(trained.model, data);
        save_checkpoint_file(trained.model, cfg_.out / "model.mprk");
        write_text(cfg_.out / "train_log.jsonl", training_log_jsonl(trained.log));
        write_text(cfg_.out / "metrics.json", json{{"accuracy", m.accuracy},
                                                   {"parameter_count", m.parameter_count},
                                                   {"block_count", m.block_count},
                                                   {"eval_time_s", m.eval_time_s},
                                                   {"train_time_s", trained.train_time_s}}
                                                  .dump(2));
        out_ << "trained " << m.block_count << " blocks, eval accuracy " << m.accuracy << "\n";
        return kExitOk;
    }

    int analyze() {
        const Dataset data = dataset();
        const Model<float> model = baseline(data);
        const IndexList hooks = hooks_for(model);
        const auto seeds = seed_batches(data);
        const CkaChain chain = cka_chain(model, hooks, seeds);
        const CkaMatrix matrix = cka_full_matrix(model, hooks, seeds);
        write_text(cfg_.out / "chain.csv", chain_to_csv(chain));
        write_text(cfg_.out / "cka_matrix.csv", matrix_to_csv(matrix));
        write_text(cfg_.out / "cka_matrix.json", matrix_to_json(matrix));
        json reports = json::array();
        for (double tau : cfg_.taus) {
            const ClusterSet clusters = get_candidates(chain, tau);
            reports.push_back(clusters_to_json(clusters));
            out_ << "tau " << tau << ": " << clusters.clusters.size() << " clusters"
                 << (all_singletons(clusters) ? " (all singletons)" : "") << "\n";
        }
        write_text(cfg_.out / "clusters.json", json{{"hooks", hooks}, {"reports", reports}}.dump(2));
        return kExitOk;
    }

    int prune() {
        const Dataset data = dataset();
        const Model<float> model = baseline(data);
        const FixpointResult result = run_pruning(model, data);
        out_ << summary_markdown(result.runs);
        return kExitOk;
    }

    int sparsify() {
        const Dataset data = dataset();
        const Model<float> base = baseline(data);
        const Model<float> pruned =
            cfg_.pruned_checkpoint ? load_checkpoint_file(*cfg_.pruned_checkpoint) : run_pruning(base, data).model;
        const Tensor calibration = calibration_batch(data.validation, cfg_.sparsify.calibration_size, cfg_.seed);

        auto describe = [&](const Model<float>& m) {
            const MetricsReport r = get_accuracy(m, data);
            return json{{"accuracy", r.accuracy},
                        {"parameter_count", r.parameter_count},
                        {"nonzero_parameter_count", r.nonzero_parameter_count},
                        {"block_count", r.block_count},
                        {"eval_time_per_sample_s", r.eval_time_per_sample()}};
        };
        json rows = json::array();
        std::string table =
            "| Sparsity | Baseline acc (%) | Baseline nonzero params | MPruner acc (%) | MPruner nonzero params |\n"
            "|---:|---:|---:|---:|---:|\n";
        const json dense_base = describe(base);
        const json dense_pruned = describe(pruned);
        for (double level : cfg_.sparsify.levels) {
            const Model<float> sb = magnitude_sparsify(base, level, calibration);
            const Model<float> sp = magnitude_sparsify(pruned, level, calibration);
            save_checkpoint_file(sb, cfg_.out / ("sparse_baseline_" + level_tag(level) + ".mprk"));
            save_checkpoint_file(sp, cfg_.out / ("sparse_pruned_" + level_tag(level) + ".mprk"));
            const json b = describe(sb), p = describe(sp);
            rows.push_back(json{{"level", level}, {"baseline", b}, {"pruned", p}});
            char buf[256];
            std::snprintf(buf, sizeof buf, "| %.2f | %.2f | %zu | %.2f | %zu |\n", level,
                          100.0 * b["accuracy"].get<double>(), b["nonzero_parameter_count"].get<std::size_t>(),
                          100.0 * p["accuracy"].get<double>(), p["nonzero_parameter_count"].get<std::size_t>());
            table += buf;
        }
        write_text(cfg_.out / "sparsify.json",
                   json{{"dense_baseline", dense_base}, {"dense_pruned", dense_pruned}, {"levels", rows}}.dump(2));
        write_text(cfg_.out / "sparsify.md", table);
        out_ << table;
        return kExitOk;
    }

    int report() {
        std::vector<RunHistory> runs = runs_from_json(parse(cfg_.out / "history.json"));
        if (fs::exists(cfg_.out / "timings.json")) apply_timings(runs, parse(cfg_.out / "timings.json"));
        const std::string summary = summary_markdown(runs);
        write_text(cfg_.out / "summary.md", summary);
        out_ << summary;
        return kExitOk;
    }

private:
    static json parse(const fs::path& p) {
        try {
            return json::parse(read_text(p));
        } catch (const json::exception& e) {
            throw FormatError(p.string() + ": " + e.what());
        }
    }

    Dataset dataset() const {
        if (cfg_.dataset.csv) return load_csv_dataset(*cfg_.dataset.csv, cfg_.seed);
        return make_synthetic_dataset(synthetic_kind_from_string(cfg_.dataset.kind), cfg_.dataset.n,
                                      cfg_.dataset.input_dim, cfg_.dataset.classes, cfg_.seed,
                                      cfg_.dataset.separation);
    }

    Model<float> fresh_model(const Dataset& data) const {
        if (data.input_dim % cfg_.model.seq_len != 0)
            throw ConfigError("dataset width is not a multiple of model seq_len");
        const BlockSpec spec{cfg_.model.kind, cfg_.model.width, cfg_.model.inner_width, 0};
        return build_model<float>(data.input_dim / cfg_.model.seq_len, cfg_.model.blocks, spec, data.num_classes,
                                  cfg_.seed, cfg_.model.seq_len);
    }

    /// The checkpoint if given, otherwise a model trained from scratch (saved as baseline.mprk).
    Model<float> baseline(const Dataset& data) const {
        if (cfg_.checkpoint) return load_checkpoint_file(*cfg_.checkpoint);
        const TrainResult trained = mpruner::train(fresh_model(data), data, cfg_.train);
        save_checkpoint_file(trained.model, cfg_.out / "baseline.mprk");
        write_text(cfg_.out / "train_log.jsonl", training_log_jsonl(trained.log));
        return trained.model;
    }

    IndexList hooks_for(const Model<float>& model) const {
        const IndexList hooks = cfg_.hooks ? *cfg_.hooks : model.hook_positions;
        validate_hooks(hooks, model.block_count());
        return hooks;
    }

    std::vector<Tensor> seed_batches(const Dataset& data) const {
        return select_seed_batches(data.validation, cfg_.prune.seeds_per_chain, cfg_.prune.seed_batch_size,
                                   cfg_.prune.seed_shuffle);
    }

    FixpointResult run_pruning(const Model<float>& model, const Dataset& data) {
        try {
            FixpointResult result =
                iterate_until_fixpoint(model, data, hooks_for(model), cfg_.prune, cfg_.retrain, cfg_.max_runs);
            write_outputs(result.model, result.runs);
            return result;
        } catch (const PipelineAborted& e) {
            write_outputs(e.model, e.runs);
            throw;
        }
    }

    void write_outputs(const Model<float>& model, std::span<const RunHistory> runs) {
        save_checkpoint_file(model, cfg_.out / "model.mprk");
        write_text(cfg_.out / "history.json", runs_to_json(runs).dump(2) + "\n");
        write_text(cfg_.out / "timings.json", timings_to_json(runs).dump(2) + "\n");
        write_text(cfg_.out / "summary.md", summary_markdown(runs));
    }

    RunConfig cfg_;
    std::ostream& out_;
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"MPruner workbench: CKA layer-similarity analysis and cluster pruning", "mpruner"};
    std::string config_path;
    std::vector<double> taus;
    std::optional<double> gamma;
    std::optional<bool> freeze;
    std::optional<std::size_t> k_max;
    std::optional<unsigned> seed;
    std::string out_dir;
    std::vector<double> levels;

    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--tau", taus, "CKA threshold in (0, 1]; repeatable");
    app.add_option("--gamma", gamma, "accuracy-drop threshold (absolute)");
    app.add_option("--freeze", freeze, "retrain only layers around pruning sites");
    app.add_option("--k-max", k_max, "largest pruning granularity");
    app.add_option("--seed", seed, "seed for every random stream");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--levels", levels, "sparsity levels for `sparsify`; repeatable");

    std::vector<std::pair<std::string, CLI::App*>> commands;
    for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
             {"analyze", "emit CKA chain, full matrix and cluster reports"},
             {"prune", "run pruning to a fixpoint; emit checkpoint, history and summary"},
             {"train", "train a model from the config"},
             {"sparsify", "magnitude sparsification of baseline and pruned models"},
             {"report", "render summary.md from a history.json"}}) {
        auto* sub = app.add_subcommand(name, help);
        sub->fallthrough();
        commands.emplace_back(name, sub);
    }
    app.require_subcommand(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = load_config(config_path);
        if (!taus.empty()) {
            cfg.taus = taus;
            cfg.prune.tau = taus.front();
        }
        if (gamma) cfg.prune.gamma = *gamma;
        if (freeze) cfg.prune.freeze = *freeze;
        if (k_max) cfg.prune.k_max = *k_max;
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.out = out_dir;
        if (!levels.empty()) cfg.sparsify.levels = levels;
        cfg.validate();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        Workbench bench(cfg, out);
        for (const auto& [name, sub] : commands) {
            if (!sub->parsed()) continue;
            if (name == "analyze") return bench.analyze();
            if (name == "prune") return bench.prune();
            if (name == "train") return bench.train();
            if (name == "sparsify") return bench.sparsify();
            if (name == "report") return bench.report();
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const PipelineAborted& e) {
        err << "pruning aborted: " << e.what() << " (partial history written)\n";
        return kExitRuntime;
    } catch (const DegenerateActivation& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}

}  // namespace mpruner
