#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpruner {

/// Dense row-major matrix. Rows are samples (or tokens), columns are features.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// The numeric carrier used at API boundaries: row-major 32-bit floats.
using Tensor = Matrix<float>;

using IndexList = std::vector<std::size_t>;

struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Pruning would leave the model without any block.
struct StructuralError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A hook produced (near-)constant activations, so its self-HSIC vanishes.
class DegenerateActivation : public std::runtime_error {
public:
    DegenerateActivation(const std::string& what, std::size_t hook)
        : std::runtime_error(what), hook_(hook) {}

    std::size_t hook() const noexcept { return hook_; }

private:
    std::size_t hook_;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::size_t epoch, std::size_t step)
        : std::runtime_error("training diverged (non-finite loss) at epoch " +
                             std::to_string(epoch) + ", step " + std::to_string(step)),
          epoch_(epoch),
          step_(step) {}

    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t epoch_;
    std::size_t step_;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.allFinite();
}

}  // namespace mpruner
