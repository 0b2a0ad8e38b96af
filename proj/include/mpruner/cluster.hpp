#pragma once

#include "mpruner/cka.hpp"
#include "mpruner/common.hpp"

#include <span>
#include <vector>

namespace mpruner {

/// Contiguous, non-overlapping runs of hooks whose flattening is the hook list.
struct ClusterSet {
    std::vector<IndexList> clusters;
    double tau = 1.0;

    IndexList flatten() const;
    bool operator==(const ClusterSet&) const = default;
};

/// Greedy left-to-right segmentation: hook j joins the open cluster when
/// chain[j - 1] >= tau, otherwise the open cluster closes and j starts a new
/// one. The trailing open cluster is always emitted.
ClusterSet get_candidates(std::span<const double> chain, std::span<const std::size_t> hooks, double tau);

inline ClusterSet get_candidates(const CkaChain& chain, double tau) {
    return get_candidates(chain.values, chain.hooks, tau);
}

/// True when no cluster has two or more members.
bool all_singletons(const ClusterSet& c);

}  // namespace mpruner
