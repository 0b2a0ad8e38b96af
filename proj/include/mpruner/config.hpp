#pragma once

#include "mpruner/model.hpp"
#include "mpruner/pruner.hpp"
#include "mpruner/trainer.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpruner {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    BlockKind kind = BlockKind::ResidualMlp;
    std::size_t blocks = 12;
    std::size_t width = 32;
    std::size_t inner_width = 64;
    std::size_t seq_len = 1;
};

struct DatasetConfig {
    std::string kind = "gaussian_clusters";
    std::size_t n = 2000;
    std::size_t input_dim = 16;
    std::size_t classes = 4;
    double separation = 6.0;
    /// When set, samples come from this CSV instead of the generator.
    std::optional<std::filesystem::path> csv;
};

struct SparsifyConfig {
    std::vector<double> levels{0.1, 0.2, 0.3, 0.4, 0.5};
    std::size_t calibration_size = 128;
};

/// Everything one CLI invocation needs. Every random stream derives from `seed`.
struct RunConfig {
    unsigned seed = 0;
    std::filesystem::path out = "mpruner_out";
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> pruned_checkpoint;
    ModelConfig model;
    DatasetConfig dataset;
    /// Training from scratch (`train`, and the baseline when no checkpoint is given).
    TrainConfig train{1e-3, 32, 10};
    /// Retraining inside the pruning loop.
    TrainConfig retrain{};
    PruneConfig prune{};
    /// Thresholds for `analyze`; `prune` uses the first.
    std::vector<double> taus{0.98};
    std::size_t max_runs = 10;
    std::optional<IndexList> hooks;
    SparsifyConfig sparsify;

    void validate() const;
};

/// Parses the documented JSON schema; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace mpruner
