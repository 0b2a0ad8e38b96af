#pragma once

#include "mpruner/cluster.hpp"
#include "mpruner/model.hpp"

#include <span>

namespace mpruner {

struct PruneConfig {
    /// CKA threshold for clustering adjacent hooks.
    double tau = 0.98;
    /// Largest tolerated accuracy drop (absolute, accuracy in [0, 1]).
    double gamma = 0.02;
    std::size_t k_max = 3;
    /// Retrain only the layers around pruning sites (plus the head).
    bool freeze = false;
    /// Seed batches averaged per similarity chain, and their size.
    std::size_t seeds_per_chain = 8;
    std::size_t seed_batch_size = 32;
    unsigned seed_shuffle = 0;
    /// Never delete from the cluster that feeds the head.
    bool protect_last_cluster = true;

    void validate() const;
};

struct PruneOutcome {
    Model<float> pruned_model;
    /// Deleted blocks, ascending, in pre-prune numbering.
    IndexList deleted;
    /// Blocks to keep trainable because a deletion failed the width check,
    /// in post-prune numbering.
    IndexList freeze_set;
    /// Surviving blocks directly before or after a deletion site, post-prune numbering.
    IndexList deletion_neighbors;
    std::size_t params_before = 0;
    std::size_t params_after = 0;
};

/// Members cluster[i] with i >= 1 and (i - 1) % k == 0: k = 1 keeps only the
/// first member, k = 2 removes every other one.
IndexList select_deletions(std::span<const std::size_t> cluster, std::size_t k);

/// Deletes the selected members of every candidate cluster whose removal keeps
/// widths consistent; failed candidates join the freeze set with their
/// predecessor. Deletions are applied from the highest index down.
PruneOutcome prune(const Model<float>& model, const ClusterSet& clusters, std::size_t k,
                   bool protect_last_cluster = true);

/// Per output row of every block linear, zeroes the floor(sparsity * row_len)
/// weights with the smallest |w| * ||x_col|| score, where x_col is the
/// layer's input feature over the calibration batch. Embed and head are left dense.
Model<float> magnitude_sparsify(const Model<float>& model, double sparsity, const Tensor& calibration);

}  // namespace mpruner
