#include "mpruner/cluster.hpp"

#include <algorithm>
#include <string>

namespace mpruner {

IndexList ClusterSet::flatten() const {
    IndexList out;
    for (const auto& c : clusters) out.insert(out.end(), c.begin(), c.end());
    return out;
}

ClusterSet get_candidates(std::span<const double> chain, std::span<const std::size_t> hooks, double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw InvalidArgument("tau must lie in (0, 1], got " + std::to_string(tau));
    if (hooks.empty()) {
        if (!chain.empty()) throw InvalidArgument("chain given without hooks");
        return {{}, tau};
    }
    if (chain.size() != hooks.size() - 1)
        throw InvalidArgument("chain length " + std::to_string(chain.size()) + " does not match " +
                              std::to_string(hooks.size()) + " hooks");
    ClusterSet out{{}, tau};
    IndexList open{hooks[0]};
    for (std::size_t j = 1; j < hooks.size(); ++j) {
        // Compared against the immediately preceding hook, not the cluster head.
        if (chain[j - 1] >= tau) {
            open.push_back(hooks[j]);
        } else {
            out.clusters.push_back(std::move(open));
            open = {hooks[j]};
        }
    }
    out.clusters.push_back(std::move(open));
    return out;
}

bool all_singletons(const ClusterSet& c) {
    return std::all_of(c.clusters.begin(), c.clusters.end(), [](const IndexList& l) { return l.size() == 1; });
}

}  // namespace mpruner
