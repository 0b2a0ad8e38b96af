#pragma once

// The analyze -> cluster -> prune -> freeze -> retrain -> evaluate loop.

#include "mpruner/cluster.hpp"
#include "mpruner/dataset.hpp"
#include "mpruner/pruner.hpp"
#include "mpruner/trainer.hpp"

#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpruner {

enum class IterationStatus {
    Accepted,     // candidate within gamma, became the current model
    Rejected,     // candidate too inaccurate, k escalated
    Converged,    // every cluster is a singleton, loop ends
    NoDeletions,  // clusters exist but nothing is deletable at any k, loop ends
    Refused,      // prune refused (would empty the model), k escalated
};

std::string to_string(IterationStatus s);
IterationStatus iteration_status_from_string(const std::string& s);

struct IterationRecord {
    std::size_t k = 1;
    IterationStatus status = IterationStatus::Converged;
    CkaChain chain;
    ClusterSet clusters;
    IndexList deleted;
    IndexList freeze_set;
    double acc_o = 0.0;
    /// NaN when no candidate was evaluated.
    double acc_pr = std::numeric_limits<double>::quiet_NaN();
    std::size_t params_before = 0;
    std::size_t params_after = 0;
    std::size_t blocks_before = 0;
    std::size_t blocks_after = 0;
    double train_time_s = 0.0;
    double eval_time_s = 0.0;
    std::vector<EpochRecord> train_log;
};

struct RunHistory {
    MetricsReport baseline;
    std::vector<IterationRecord> iterations;
    MetricsReport final_metrics;

    std::size_t accepted_count() const;
};

struct RunResult {
    Model<float> model;
    RunHistory history;
};

struct FixpointResult {
    Model<float> model;
    std::vector<RunHistory> runs;
};

/// Thrown when retraining diverges; carries everything recorded so far.
class PipelineAborted : public std::runtime_error {
public:
    PipelineAborted(const std::string& what, Model<float> last_accepted, std::vector<RunHistory> runs)
        : std::runtime_error(what), model(std::move(last_accepted)), runs(std::move(runs)) {}

    Model<float> model;
    std::vector<RunHistory> runs;
};

/// One pass of the pruning loop: starting at k = 1, while k <= k_max it
/// recomputes clusters on the current accepted model, prunes at k, retrains,
/// and either accepts (acc_o - acc_pr <= gamma) or escalates k. Returns the
/// last accepted model.
RunResult mpruner_run(const Model<float>& model, const Dataset& data, std::span<const std::size_t> hooks,
                      const PruneConfig& cfg, const TrainConfig& tcfg);

/// Repeats mpruner_run (re-baselining each time) until a run accepts nothing,
/// at most `max_runs` times.
FixpointResult iterate_until_fixpoint(const Model<float>& model, const Dataset& data,
                                      std::span<const std::size_t> hooks, const PruneConfig& cfg,
                                      const TrainConfig& tcfg, std::size_t max_runs = 10);

}  // namespace mpruner
