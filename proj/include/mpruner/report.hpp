#pragma once

// JSON / Markdown renderings of pruning runs.

#include "mpruner/orchestrator.hpp"

#include "json.hpp"

#include <span>
#include <string>
#include <vector>

namespace mpruner {

nlohmann::json clusters_to_json(const ClusterSet& c);
ClusterSet clusters_from_json(const nlohmann::json& j);

/// Per-iteration records without wall-clock fields, so identical runs
/// serialize to identical bytes.
nlohmann::json runs_to_json(std::span<const RunHistory> runs);
std::vector<RunHistory> runs_from_json(const nlohmann::json& j);

/// Wall-clock fields only (baseline/final eval times, per-iteration train and eval times).
nlohmann::json timings_to_json(std::span<const RunHistory> runs);
void apply_timings(std::vector<RunHistory>& runs, const nlohmann::json& j);

/// Baseline row plus one row per run: blocks, accuracy, eval time, train time, parameters.
std::string summary_markdown(std::span<const RunHistory> runs);

}  // namespace mpruner
