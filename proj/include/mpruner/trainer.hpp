#pragma once

#include "mpruner/dataset.hpp"
#include "mpruner/model.hpp"

#include <span>
#include <string>
#include <vector>

namespace mpruner {

/// AdamW with decoupled weight decay and a constant learning rate.
struct TrainConfig {
    double learning_rate = 5e-5;
    std::size_t batch_size = 32;
    std::size_t epochs = 3;
    unsigned seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double train_time_s = 0.0;
};

struct TrainResult {
    Model<float> model;
    std::vector<EpochRecord> log;
    double train_time_s = 0.0;
};

struct MetricsReport {
    double accuracy = 0.0;
    /// Best-of-repeats wall-clock time for one pass over the eval split.
    double eval_time_s = 0.0;
    double train_time_s = 0.0;
    std::size_t parameter_count = 0;
    std::size_t nonzero_parameter_count = 0;
    std::size_t block_count = 0;
    std::size_t eval_samples = 0;

    double eval_time_per_sample() const { return eval_samples ? eval_time_s / static_cast<double>(eval_samples) : 0.0; }
};

/// Sets trainable flags. With `freeze` off everything trains; with it on only
/// blocks in `freeze_set` or `deletion_neighbors` and the head train.
Model<float> freezer(const Model<float>& model, std::span<const std::size_t> freeze_set,
                     std::span<const std::size_t> deletion_neighbors, bool freeze);

/// Minimizes mean cross-entropy on the train split. Frozen parameters are
/// left bitwise untouched. Throws TrainingDiverged on a non-finite loss.
TrainResult train(const Model<float>& model, const Dataset& data, const TrainConfig& cfg);

/// Top-1 accuracy over a split (ties resolve to the lowest class index).
double accuracy_on(const Model<float>& model, const Split& split);

/// Eval-split accuracy with timing and size figures.
MetricsReport get_accuracy(const Model<float>& model, const Dataset& data, std::size_t timing_repeats = 3);

/// One JSON object per line: {"epoch":..,"loss":..,"train_time_s":..}.
std::string training_log_jsonl(std::span<const EpochRecord> log);

}  // namespace mpruner
