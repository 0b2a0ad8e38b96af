#pragma once

#include "mpruner/common.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mpruner {

struct Split {
    Tensor inputs;  // n x input_dim
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }
};

/// Train / validation (CKA seeds, calibration) / eval splits, disjoint.
struct Dataset {
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    Split train;
    Split validation;
    Split eval;
};

enum class SyntheticKind { GaussianClusters, RingXor };

SyntheticKind synthetic_kind_from_string(const std::string& name);
std::string to_string(SyntheticKind kind);

/// Deterministic per seed; 80/10/10 split after a seeded shuffle.
///
/// gaussian_clusters: one isotropic unit-variance blob per class, centres at
/// distance `separation` from the origin in random directions; labels are
/// balanced (sample i has class i mod num_classes before shuffling).
///
/// ring_xor: standard-normal inputs; the label combines the XOR of the signs
/// of the first two coordinates with whether their radius exceeds the median
/// radius, modulo num_classes. Needs input_dim >= 2.
Dataset make_synthetic_dataset(SyntheticKind kind, std::size_t n, std::size_t input_dim, std::size_t num_classes,
                               unsigned seed, double separation = 6.0);

/// Splits pooled samples 80/10/10 after a seeded shuffle.
Dataset split_dataset(const Tensor& inputs, const std::vector<int>& labels, std::size_t num_classes, unsigned seed);

/// Generic CSV ingester: numeric feature columns followed by an integer label
/// column. A non-numeric first line is treated as a header.
Dataset load_csv_dataset(const std::filesystem::path& path, unsigned seed);

/// The first `count` full batches of the split under a fixed shuffle. Falls
/// back to fewer batches (at least one, of at least 2 samples) when the split
/// is small.
std::vector<Tensor> select_seed_batches(const Split& split, std::size_t count, std::size_t batch_size,
                                        unsigned shuffle_seed);

/// Up to `size` rows of the split, seeded sample without replacement.
Tensor calibration_batch(const Split& split, std::size_t size, unsigned seed);

}  // namespace mpruner
