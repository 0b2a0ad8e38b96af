#include "mpruner/trainer.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace mpruner {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_compatible(const Model<float>& model, std::size_t input_dim, std::size_t num_classes) {
    if (model.seq_len * model.input_dim != input_dim)
        throw ShapeError("dataset input width does not match the model");
    if (model.num_classes != num_classes) throw ShapeError("dataset class count does not match the model");
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
    if (epochs < 1) throw InvalidArgument("epochs must be at least 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
    if (weight_decay < 0.0) throw InvalidArgument("weight_decay must be non-negative");
}

Model<float> freezer(const Model<float>& model, std::span<const std::size_t> freeze_set,
                     std::span<const std::size_t> deletion_neighbors, bool freeze) {
    Model<float> out = model;
    if (!freeze) {
        out.embed_trainable = true;
        out.head_trainable = true;
        for (auto& b : out.blocks) b.trainable = true;
        return out;
    }
    std::set<std::size_t> keep(freeze_set.begin(), freeze_set.end());
    keep.insert(deletion_neighbors.begin(), deletion_neighbors.end());
    for (auto i : keep)
        if (i >= out.blocks.size()) throw IndexError("freezer: block index " + std::to_string(i) + " out of range");
    out.embed_trainable = false;
    out.head_trainable = true;
    for (std::size_t i = 0; i < out.blocks.size(); ++i) out.blocks[i].trainable = keep.count(i) > 0;
    return out;
}

TrainResult train(const Model<float>& model, const Dataset& data, const TrainConfig& cfg) {
    check_compatible(model, data.input_dim, data.num_classes);
    if (cfg.batch_size == 0) throw InvalidArgument("batch_size must be at least 1");
    TrainResult result{model, {}, 0.0};
    if (cfg.epochs == 0 || data.train.empty()) return result;

    Model<float>& m = result.model;
    std::vector<Tensor*> params;
    std::vector<bool> trainable;
    m.for_each_parameter([&](Tensor& t, const ParamOwner& owner, const char*) {
        params.push_back(&t);
        trainable.push_back(m.is_trainable(owner));
    });
    std::vector<Tensor> first(params.size()), second(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!trainable[i]) continue;
        first[i] = Tensor::Zero(params[i]->rows(), params[i]->cols());
        second[i] = Tensor::Zero(params[i]->rows(), params[i]->cols());
    }

    const auto lr = static_cast<float>(cfg.learning_rate);
    const auto b1 = static_cast<float>(cfg.beta1);
    const auto b2 = static_cast<float>(cfg.beta2);
    const auto eps = static_cast<float>(cfg.epsilon);
    const auto decay = 1.0f - lr * static_cast<float>(cfg.weight_decay);

    std::mt19937_64 rng(cfg.seed);
    const std::size_t n = data.train.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t step = 0;
    const auto t_start = Clock::now();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t_epoch = Clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, n - start);
            Tensor batch(static_cast<Eigen::Index>(count), data.train.inputs.cols());
            std::vector<int> labels(count);
            for (std::size_t i = 0; i < count; ++i) {
                batch.row(static_cast<Eigen::Index>(i)) = data.train.inputs.row(static_cast<Eigen::Index>(order[start + i]));
                labels[i] = data.train.labels[order[start + i]];
            }
            const auto lg = loss_and_gradients(m, batch, labels);
            if (!std::isfinite(lg.loss)) throw TrainingDiverged(epoch, step);
            loss_sum += static_cast<double>(lg.loss) * static_cast<double>(count);
            ++step;
            const float bc1 = 1.0f - std::pow(b1, static_cast<float>(step));
            const float bc2 = 1.0f - std::pow(b2, static_cast<float>(step));
            for (std::size_t i = 0; i < params.size(); ++i) {
                if (!trainable[i]) continue;
                const Tensor& g = lg.gradients[i];
                first[i] = b1 * first[i] + (1.0f - b1) * g;
                second[i] = b2 * second[i] + (1.0f - b2) * g.cwiseProduct(g);
                *params[i] *= decay;
                params[i]->array() -=
                    lr * (first[i].array() / bc1) / ((second[i].array() / bc2).sqrt() + eps);
            }
        }
        result.log.push_back({epoch, loss_sum / static_cast<double>(n), seconds_since(t_epoch)});
        if (!std::isfinite(result.log.back().loss)) throw TrainingDiverged(epoch, step);
    }
    result.train_time_s = seconds_since(t_start);
    for (auto* p : params)
        if (!p->allFinite()) throw TrainingDiverged(cfg.epochs - 1, step);
    return result;
}

double accuracy_on(const Model<float>& model, const Split& split) {
    if (split.empty()) throw InvalidArgument("accuracy: split is empty");
    constexpr Eigen::Index chunk = 256;
    std::size_t correct = 0;
    for (Eigen::Index start = 0; start < split.inputs.rows(); start += chunk) {
        const auto rows = std::min(chunk, split.inputs.rows() - start);
        const Tensor logits = forward(model, Tensor(split.inputs.middleRows(start, rows)));
        for (Eigen::Index r = 0; r < rows; ++r) {
            Eigen::Index best = 0;
            logits.row(r).maxCoeff(&best);
            if (best == split.labels[static_cast<std::size_t>(start + r)]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

MetricsReport get_accuracy(const Model<float>& model, const Dataset& data, std::size_t timing_repeats) {
    if (data.eval.empty()) throw InvalidArgument("get_accuracy: eval split is empty");
    check_compatible(model, data.input_dim, data.num_classes);
    MetricsReport r;
    r.eval_time_s = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < std::max<std::size_t>(1, timing_repeats); ++i) {
        const auto t0 = Clock::now();
        r.accuracy = accuracy_on(model, data.eval);
        r.eval_time_s = std::min(r.eval_time_s, seconds_since(t0));
    }
    r.parameter_count = model.parameter_count();
    r.nonzero_parameter_count = model.nonzero_parameter_count();
    r.block_count = model.block_count();
    r.eval_samples = data.eval.size();
    return r;
}

std::string training_log_jsonl(std::span<const EpochRecord> log) {
    std::string out;
    for (const auto& e : log) {
        nlohmann::json j{{"epoch", e.epoch}, {"loss", e.loss}, {"train_time_s", e.train_time_s}};
        out += j.dump() + '\n';
    }
    return out;
}

}  // namespace mpruner
