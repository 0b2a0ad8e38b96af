#include "mpruner/orchestrator.hpp"

namespace mpruner {

std::string to_string(IterationStatus s) {
    switch (s) {
        case IterationStatus::Accepted: return "accepted";
        case IterationStatus::Rejected: return "rejected";
        case IterationStatus::Converged: return "converged";
        case IterationStatus::NoDeletions: return "no_deletions";
        case IterationStatus::Refused: return "refused";
    }
    return "unknown";
}

IterationStatus iteration_status_from_string(const std::string& s) {
    for (auto v : {IterationStatus::Accepted, IterationStatus::Rejected, IterationStatus::Converged,
                   IterationStatus::NoDeletions, IterationStatus::Refused})
        if (to_string(v) == s) return v;
    throw FormatError("unknown iteration status '" + s + "'");
}

std::size_t RunHistory::accepted_count() const {
    std::size_t n = 0;
    for (const auto& it : iterations) n += it.status == IterationStatus::Accepted ? 1 : 0;
    return n;
}

namespace {

RunResult run_impl(const Model<float>& input, const Dataset& data, std::span<const std::size_t> hooks,
                   const PruneConfig& cfg, const TrainConfig& tcfg, const std::vector<RunHistory>& earlier) {
    cfg.validate();
    validate_hooks(hooks, input.block_count());
    const auto seeds =
        select_seed_batches(data.validation, cfg.seeds_per_chain, cfg.seed_batch_size, cfg.seed_shuffle);

    RunResult result;
    result.model = input;
    result.model.hook_positions.assign(hooks.begin(), hooks.end());
    Model<float>& current = result.model;
    RunHistory& history = result.history;

    history.baseline = get_accuracy(current, data);
    const double acc_o = history.baseline.accuracy;

    std::size_t k = 1;
    while (k <= cfg.k_max) {
        IterationRecord rec;
        rec.k = k;
        rec.acc_o = acc_o;
        rec.params_before = rec.params_after = current.parameter_count();
        rec.blocks_before = rec.blocks_after = current.block_count();
        rec.chain = cka_chain(current, current.hook_positions, seeds);
        rec.clusters = get_candidates(rec.chain, cfg.tau);

        if (all_singletons(rec.clusters)) {
            rec.status = IterationStatus::Converged;
            history.iterations.push_back(std::move(rec));
            break;
        }

        PruneOutcome outcome;
        try {
            outcome = prune(current, rec.clusters, k, cfg.protect_last_cluster);
        } catch (const StructuralError&) {
            rec.status = IterationStatus::Refused;
            history.iterations.push_back(std::move(rec));
            ++k;
            continue;
        }
        rec.deleted = outcome.deleted;
        rec.freeze_set = outcome.freeze_set;
        if (outcome.deleted.empty()) {
            // Deletion sets only shrink as k grows, so no later k can make progress.
            rec.status = IterationStatus::NoDeletions;
            history.iterations.push_back(std::move(rec));
            break;
        }

        const Model<float> frozen =
            freezer(outcome.pruned_model, outcome.freeze_set, outcome.deletion_neighbors, cfg.freeze);
        TrainResult trained;
        try {
            trained = train(frozen, data, tcfg);
        } catch (const TrainingDiverged& e) {
            history.iterations.push_back(std::move(rec));
            auto runs = earlier;
            runs.push_back(history);
            throw PipelineAborted(e.what(), current, std::move(runs));
        }
        // Trainable flags only steer one retraining round.
        Model<float> candidate = freezer(trained.model, {}, {}, false);
        const MetricsReport metrics = get_accuracy(candidate, data);
        rec.acc_pr = metrics.accuracy;
        rec.params_after = candidate.parameter_count();
        rec.blocks_after = candidate.block_count();
        rec.train_time_s = trained.train_time_s;
        rec.eval_time_s = metrics.eval_time_s;
        rec.train_log = trained.log;

        if (acc_o - rec.acc_pr <= cfg.gamma) {
            rec.status = IterationStatus::Accepted;
            current = std::move(candidate);
        } else {
            rec.status = IterationStatus::Rejected;
            rec.params_after = rec.params_before;
            rec.blocks_after = rec.blocks_before;
            ++k;
        }
        history.iterations.push_back(std::move(rec));
    }
    history.final_metrics = get_accuracy(current, data);
    return result;
}

}  // namespace

RunResult mpruner_run(const Model<float>& model, const Dataset& data, std::span<const std::size_t> hooks,
                      const PruneConfig& cfg, const TrainConfig& tcfg) {
    return run_impl(model, data, hooks, cfg, tcfg, {});
}

FixpointResult iterate_until_fixpoint(const Model<float>& model, const Dataset& data,
                                      std::span<const std::size_t> hooks, const PruneConfig& cfg,
                                      const TrainConfig& tcfg, std::size_t max_runs) {
    FixpointResult out;
    out.model = model;
    IndexList current_hooks(hooks.begin(), hooks.end());
    for (std::size_t r = 0; r < max_runs; ++r) {
        RunResult run = run_impl(out.model, data, current_hooks, cfg, tcfg, out.runs);
        const bool progressed = run.history.accepted_count() > 0;
        out.model = std::move(run.model);
        current_hooks = out.model.hook_positions;
        out.runs.push_back(std::move(run.history));
        if (!progressed) break;
    }
    return out;
}

}  // namespace mpruner
