#pragma once

// Linear centered kernel alignment between layer activations, and the
// per-seed-batch averaged similarity chain over hook positions.

#include "mpruner/common.hpp"
#include "mpruner/model.hpp"

#include <span>
#include <string>
#include <vector>

namespace mpruner {

/// Self-HSIC below this marks an activation matrix as constant.
inline constexpr double kDegenerateHsic = 1e-12;

/// K = X X^T, accumulated in double. Requires at least two rows.
template <typename Derived>
Matrix<double> gram(const Eigen::MatrixBase<Derived>& x) {
    if (x.rows() < 2) throw InvalidArgument("gram: need at least 2 samples, got " + std::to_string(x.rows()));
    const Matrix<double> xd = x.template cast<double>();
    Matrix<double> k(xd.rows(), xd.rows());
    k.noalias() = xd * xd.transpose();
    return k;
}

/// H = I - J/n.
Matrix<double> centering_matrix(Eigen::Index n);

/// H K H, computed by subtracting row and column means.
template <typename Derived>
Matrix<double> center(const Eigen::MatrixBase<Derived>& k) {
    if (k.rows() != k.cols()) throw ShapeError("center: matrix is not square");
    const Matrix<double> kd = k.template cast<double>();
    const RowVector<double> col_mean = kd.colwise().mean();
    const Eigen::VectorXd row_mean = kd.rowwise().mean();
    const double grand = kd.mean();
    Matrix<double> out = kd;
    out.rowwise() -= col_mean;
    out.colwise() -= row_mean;
    out.array() += grand;
    return out;
}

/// HSIC(K, L) = tr(Kc Lc) / (n - 1)^2 with Kc, Lc the centered Gram matrices.
double hsic(const Matrix<double>& k, const Matrix<double>& l);

/// Same statistic from already-centered Gram matrices.
double hsic_centered(const Matrix<double>& kc, const Matrix<double>& lc);

namespace detail {
/// Returns the clamped CKA, or throws DegenerateActivation with hook = 0
/// (first operand) or 1 (second operand).
double cka_from_grams(const Matrix<double>& k, const Matrix<double>& l);
}  // namespace detail

/// Linear CKA in [0, 1]. Throws DegenerateActivation when either input is
/// constant across samples; hook() reports 0 for x and 1 for y.
template <typename DX, typename DY>
double cka(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    if (x.rows() != y.rows()) throw ShapeError("cka: operands have different sample counts");
    return detail::cka_from_grams(gram(x), gram(y));
}

struct CkaChain {
    IndexList hooks;
    /// values[j - 1] = mean CKA between hooks[j - 1] and hooks[j].
    std::vector<double> values;
    std::size_t seed_count = 0;

    std::size_t count_at_least(double tau) const;
};

struct CkaMatrix {
    IndexList hooks;
    Matrix<double> values;
    std::size_t seed_count = 0;
};

/// Worker threads for similarity analysis: MPRUNER_THREADS if set, else the
/// hardware concurrency (at least 1).
std::size_t analysis_threads();

/// Adjacent-hook CKA averaged over seed batches with a running mean.
CkaChain cka_chain(const Model<float>& model, std::span<const std::size_t> hooks, std::span<const Tensor> seeds);

/// All hook pairs, same averaging; diagonal fixed at 1.
CkaMatrix cka_full_matrix(const Model<float>& model, std::span<const std::size_t> hooks,
                          std::span<const Tensor> seeds);

/// Row-major CSV with 9 significant digits, no header.
std::string matrix_to_csv(const CkaMatrix& m);
/// {"hooks": [...], "matrix": [[...], ...]}
std::string matrix_to_json(const CkaMatrix& m);
CkaMatrix matrix_from_json(const std::string& text);

/// "hook_a,hook_b,cka" rows with a header line; values printed round-trip exact.
std::string chain_to_csv(const CkaChain& chain);
CkaChain chain_from_csv(const std::string& text);

}  // namespace mpruner
