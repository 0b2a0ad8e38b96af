#include "mpruner/pruner.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <string>

namespace mpruner {

void PruneConfig::validate() const {
    if (!(tau > 0.0 && tau <= 1.0)) throw InvalidArgument("tau must lie in (0, 1]");
    if (k_max < 1) throw InvalidArgument("k_max must be at least 1");
    if (seeds_per_chain < 1) throw InvalidArgument("seeds_per_chain must be at least 1");
    if (seed_batch_size < 2) throw InvalidArgument("seed_batch_size must be at least 2");
}

IndexList select_deletions(std::span<const std::size_t> cluster, std::size_t k) {
    if (k == 0) throw InvalidArgument("granularity k must be at least 1");
    IndexList out;
    for (std::size_t i = 1; i < cluster.size(); ++i)
        if ((i - 1) % k == 0) out.push_back(cluster[i]);
    return out;
}

PruneOutcome prune(const Model<float>& model, const ClusterSet& clusters, std::size_t k, bool protect_last_cluster) {
    if (k == 0) throw InvalidArgument("granularity k must be at least 1");
    if (clusters.flatten() != model.hook_positions)
        throw InvalidArgument("clusters do not partition the model's hook positions");

    const std::size_t n = model.block_count();
    auto out_width = [&](std::size_t i) { return model.blocks[i].spec.output_width(); };
    auto in_width = [&](std::size_t i) { return model.blocks[i].spec.input_width(); };

    std::set<std::size_t> deleted;
    std::set<std::size_t> freeze_pre;
    const std::size_t last = clusters.clusters.size();
    const std::size_t considered = protect_last_cluster && last > 0 ? last - 1 : last;
    for (std::size_t c = 0; c < considered; ++c) {
        for (const std::size_t idx : select_deletions(clusters.clusters[c], k)) {
            // Output of the layer before idx must feed whatever follows idx.
            const std::size_t pre_out = idx == 0 ? model.embed_width() : out_width(idx - 1);
            const std::size_t next_in = idx + 1 == n ? static_cast<std::size_t>(model.head.in()) : in_width(idx + 1);
            if (pre_out == next_in) {
                deleted.insert(idx);
            } else {
                if (idx > 0) freeze_pre.insert(idx - 1);
                freeze_pre.insert(idx);
            }
        }
    }
    if (deleted.size() == n) throw StructuralError("pruning would delete every block");

    PruneOutcome outcome;
    outcome.params_before = model.parameter_count();
    outcome.pruned_model = model;
    for (auto it = deleted.rbegin(); it != deleted.rend(); ++it)
        outcome.pruned_model = delete_block(outcome.pruned_model, *it);
    outcome.deleted.assign(deleted.begin(), deleted.end());
    outcome.params_after = outcome.pruned_model.parameter_count();

    // Pre-prune index -> post-prune index for survivors.
    std::map<std::size_t, std::size_t> renumber;
    for (std::size_t i = 0, next = 0; i < n; ++i)
        if (!deleted.count(i)) renumber[i] = next++;

    for (auto i : freeze_pre)
        if (auto it = renumber.find(i); it != renumber.end()) outcome.freeze_set.push_back(it->second);

    std::set<std::size_t> neighbors;
    for (auto d : deleted) {
        for (std::size_t i = d; i-- > 0;)
            if (!deleted.count(i)) {
                neighbors.insert(renumber[i]);
                break;
            }
        for (std::size_t i = d + 1; i < n; ++i)
            if (!deleted.count(i)) {
                neighbors.insert(renumber[i]);
                break;
            }
    }
    outcome.deletion_neighbors.assign(neighbors.begin(), neighbors.end());
    return outcome;
}

namespace {

void sparsify_rows(Tensor& weight, const Eigen::VectorXd& input_norms, double sparsity) {
    const auto row_len = weight.cols();
    const auto drop = static_cast<Eigen::Index>(std::floor(sparsity * static_cast<double>(row_len)));
    if (drop == 0) return;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(row_len));
    std::vector<double> score(static_cast<std::size_t>(row_len));
    for (Eigen::Index r = 0; r < weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < row_len; ++c)
            score[static_cast<std::size_t>(c)] = std::abs(static_cast<double>(weight(r, c))) * input_norms(c);
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
            return score[static_cast<std::size_t>(a)] < score[static_cast<std::size_t>(b)];
        });
        for (Eigen::Index i = 0; i < drop; ++i) weight(r, order[static_cast<std::size_t>(i)]) = 0.0f;
    }
}

}  // namespace

Model<float> magnitude_sparsify(const Model<float>& model, double sparsity, const Tensor& calibration) {
    if (!(sparsity >= 0.0 && sparsity < 1.0)) throw InvalidArgument("sparsity must lie in [0, 1)");
    if (calibration.rows() == 0) throw InvalidArgument("calibration batch is empty");
    if (sparsity == 0.0) return model;

    std::map<const Linear<float>*, Eigen::VectorXd> norms;
    ForwardObserver<float> obs;
    obs.linear_input = [&](const Linear<float>& l, const Tensor& x) {
        norms[&l] = x.cast<double>().colwise().norm().transpose();
    };
    ad::Tape<float> tape(false);
    build_forward(tape, model, calibration, &obs);

    Model<float> out = model;
    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        const auto& src = model.blocks[b];
        auto& dst = out.blocks[b];
        auto apply = [&](const Linear<float>& s, Linear<float>& d) { sparsify_rows(d.weight, norms.at(&s), sparsity); };
        if (src.spec.kind == BlockKind::Encoder) {
            apply(src.query, dst.query);
            apply(src.key, dst.key);
            apply(src.value, dst.value);
            apply(src.attn_out, dst.attn_out);
        }
        apply(src.up, dst.up);
        apply(src.down, dst.down);
        if (src.spec.projects()) apply(src.skip, dst.skip);
    }
    return out;
}

}  // namespace mpruner
