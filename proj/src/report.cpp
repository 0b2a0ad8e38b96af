#include "mpruner/report.hpp"

#include <cmath>
#include <cstdio>

namespace mpruner {

using nlohmann::json;

json clusters_to_json(const ClusterSet& c) { return json{{"tau", c.tau}, {"clusters", c.clusters}}; }

ClusterSet clusters_from_json(const json& j) {
    try {
        return ClusterSet{j.at("clusters").get<std::vector<IndexList>>(), j.at("tau").get<double>()};
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed cluster report: ") + e.what());
    }
}

namespace {

json metrics_to_json(const MetricsReport& m) {
    return json{{"accuracy", m.accuracy},
                {"parameter_count", m.parameter_count},
                {"nonzero_parameter_count", m.nonzero_parameter_count},
                {"block_count", m.block_count},
                {"eval_samples", m.eval_samples}};
}

MetricsReport metrics_from_json(const json& j) {
    MetricsReport m;
    m.accuracy = j.at("accuracy").get<double>();
    m.parameter_count = j.at("parameter_count").get<std::size_t>();
    m.nonzero_parameter_count = j.value("nonzero_parameter_count", m.parameter_count);
    m.block_count = j.at("block_count").get<std::size_t>();
    m.eval_samples = j.value("eval_samples", std::size_t{0});
    return m;
}

json nullable(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

}  // namespace

json runs_to_json(std::span<const RunHistory> runs) {
    json out = json::array();
    for (const auto& run : runs) {
        json iters = json::array();
        for (const auto& it : run.iterations) {
            json losses = json::array();
            for (const auto& e : it.train_log) losses.push_back(e.loss);
            iters.push_back(json{{"k", it.k},
                                 {"status", to_string(it.status)},
                                 {"accepted", it.status == IterationStatus::Accepted},
                                 {"hooks", it.chain.hooks},
                                 {"chain", it.chain.values},
                                 {"seed_count", it.chain.seed_count},
                                 {"clusters", clusters_to_json(it.clusters)},
                                 {"deletions", it.deleted},
                                 {"freeze_set", it.freeze_set},
                                 {"acc_o", it.acc_o},
                                 {"acc_pr", nullable(it.acc_pr)},
                                 {"params_before", it.params_before},
                                 {"params_after", it.params_after},
                                 {"blocks_before", it.blocks_before},
                                 {"blocks_after", it.blocks_after},
                                 {"epoch_losses", losses}});
        }
        out.push_back(json{{"baseline", metrics_to_json(run.baseline)},
                           {"final", metrics_to_json(run.final_metrics)},
                           {"accepted", run.accepted_count()},
                           {"iterations", iters}});
    }
    return out;
}

std::vector<RunHistory> runs_from_json(const json& j) {
    try {
        std::vector<RunHistory> runs;
        for (const auto& r : j) {
            RunHistory run;
            run.baseline = metrics_from_json(r.at("baseline"));
            run.final_metrics = metrics_from_json(r.at("final"));
            for (const auto& it : r.at("iterations")) {
                IterationRecord rec;
                rec.k = it.at("k").get<std::size_t>();
                rec.status = iteration_status_from_string(it.at("status").get<std::string>());
                rec.chain.hooks = it.at("hooks").get<IndexList>();
                rec.chain.values = it.at("chain").get<std::vector<double>>();
                rec.chain.seed_count = it.value("seed_count", std::size_t{0});
                rec.clusters = clusters_from_json(it.at("clusters"));
                rec.deleted = it.at("deletions").get<IndexList>();
                rec.freeze_set = it.at("freeze_set").get<IndexList>();
                rec.acc_o = it.at("acc_o").get<double>();
                rec.acc_pr = it.at("acc_pr").is_null() ? std::nan("") : it.at("acc_pr").get<double>();
                rec.params_before = it.at("params_before").get<std::size_t>();
                rec.params_after = it.at("params_after").get<std::size_t>();
                rec.blocks_before = it.at("blocks_before").get<std::size_t>();
                rec.blocks_after = it.at("blocks_after").get<std::size_t>();
                std::size_t e = 0;
                for (const auto& l : it.value("epoch_losses", json::array()))
                    rec.train_log.push_back({e++, l.get<double>(), 0.0});
                run.iterations.push_back(std::move(rec));
            }
            runs.push_back(std::move(run));
        }
        return runs;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed run history: ") + e.what());
    }
}

json timings_to_json(std::span<const RunHistory> runs) {
    json out = json::array();
    for (const auto& run : runs) {
        json iters = json::array();
        for (const auto& it : run.iterations)
            iters.push_back(json{{"train_time_s", it.train_time_s}, {"eval_time_s", it.eval_time_s}});
        out.push_back(json{{"baseline_eval_time_s", run.baseline.eval_time_s},
                           {"final_eval_time_s", run.final_metrics.eval_time_s},
                           {"iterations", iters}});
    }
    return out;
}

void apply_timings(std::vector<RunHistory>& runs, const json& j) {
    try {
        for (std::size_t r = 0; r < runs.size() && r < j.size(); ++r) {
            runs[r].baseline.eval_time_s = j[r].at("baseline_eval_time_s").get<double>();
            runs[r].final_metrics.eval_time_s = j[r].at("final_eval_time_s").get<double>();
            const auto& iters = j[r].at("iterations");
            for (std::size_t i = 0; i < runs[r].iterations.size() && i < iters.size(); ++i) {
                runs[r].iterations[i].train_time_s = iters[i].at("train_time_s").get<double>();
                runs[r].iterations[i].eval_time_s = iters[i].at("eval_time_s").get<double>();
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed timings: ") + e.what());
    }
}

std::string summary_markdown(std::span<const RunHistory> runs) {
    std::string out =
        "| Model | Blocks | Accuracy (%) | Eval time (s) | Training time (s) | Parameters |\n"
        "|---|---:|---:|---:|---:|---:|\n";
    auto row = [&](const std::string& name, const MetricsReport& m, double train_s) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "| %s | %zu | %.2f | %.4f | %.2f | %zu |\n", name.c_str(), m.block_count,
                      100.0 * m.accuracy, m.eval_time_s, train_s, m.parameter_count);
        out += buf;
    };
    if (runs.empty()) return out;
    row("baseline", runs.front().baseline, 0.0);
    for (std::size_t r = 0; r < runs.size(); ++r) {
        double train_s = 0.0;
        for (const auto& it : runs[r].iterations)
            if (it.status == IterationStatus::Accepted) train_s = it.train_time_s;
        row("iteration " + std::to_string(r + 1), runs[r].final_metrics, train_s);
    }
    return out;
}

}  // namespace mpruner
